#include "mtlforge/manifest_io.hpp"

#include "mtlforge/digest.hpp"
#include "mtlforge/error.hpp"

#include <json.hpp>

#include <fstream>
#include <ostream>
#include <sstream>

namespace mtlforge {

using json = nlohmann::json;

// Manifest file: JSON lines. The first record carries the config block and
// provenance; then one "distribution" record per task and one "entry"
// record per StagePlan entry, in execution order.
std::string ScheduleManifest::serialize() const {
    json families_json = json::array();
    for (auto f : families) families_json.push_back(std::string(to_string(f)));
    json head = {
        {"record", "manifest"},
        {"format", "mtlforge-manifest"},
        {"version", 1},
        {"config",
         {{"kind", std::string(to_string(config.kind))},
          {"mixing", std::string(to_string(config.mixing))},
          {"batch_size", config.batch_size},
          {"budget_steps", config.budget_steps},
          {"quantum", config.quantum},
          {"order", std::string(to_string(config.order))},
          {"seed", config.seed},
          {"sequential_rounds", config.sequential_rounds}}},
        {"families", families_json},
        {"provenance",
         {{"seed", provenance.seed},
          {"registry_digest", provenance.registry_digest},
          {"rng_algorithm", provenance.rng_algorithm}}},
        {"distribution_algorithm", distribution.rng_algorithm},
        {"stages", stages.size()},
        {"total_batches", total_batches()},
    };
    std::string out = head.dump() + '\n';
    for (const auto& e : distribution.entries)
        out += json{{"record", "distribution"}, {"task", e.task}, {"probability", e.probability}}.dump() + '\n';
    for (const auto& s : stages)
        for (const auto& e : s.entries) {
            json rec = {{"record", "entry"}, {"stage", s.index}, {"task", nullptr}, {"batches", e.n_batches}};
            if (e.task) rec["task"] = *e.task;
            out += rec.dump() + '\n';
        }
    return out;
}

namespace {

template <typename T>
T field(const json& obj, const char* key, std::size_t line_no) {
    if (!obj.contains(key)) throw Error("manifest line " + std::to_string(line_no) + ": missing '" + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw Error("manifest line " + std::to_string(line_no) + ": bad value for '" + key + "'");
    }
}

} // namespace

ScheduleManifest ScheduleManifest::parse(std::string_view text) {
    ScheduleManifest m;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    std::size_t expected_stages = 0;
    std::int64_t expected_total = 0;
    bool have_head = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw Error("manifest line " + std::to_string(line_no) + ": malformed record: " + e.what());
        }
        const auto kind = field<std::string>(rec, "record", line_no);
        if (kind == "manifest") {
            if (have_head) throw Error("manifest line " + std::to_string(line_no) + ": duplicate header");
            have_head = true;
            if (field<std::string>(rec, "format", line_no) != "mtlforge-manifest" ||
                field<int>(rec, "version", line_no) != 1)
                throw Error("manifest line " + std::to_string(line_no) + ": unsupported format or version");
            const auto& c = rec.at("config");
            m.config.kind = parse_scheme(field<std::string>(c, "kind", line_no));
            m.config.mixing = parse_mixing(field<std::string>(c, "mixing", line_no));
            m.config.batch_size = field<std::int64_t>(c, "batch_size", line_no);
            m.config.budget_steps = field<std::int64_t>(c, "budget_steps", line_no);
            m.config.quantum = field<std::int64_t>(c, "quantum", line_no);
            m.config.order = parse_order(field<std::string>(c, "order", line_no));
            m.config.seed = field<std::uint64_t>(c, "seed", line_no);
            m.config.sequential_rounds = field<std::int64_t>(c, "sequential_rounds", line_no);
            for (const auto& f : rec.at("families")) m.families.push_back(parse_family(f.get<std::string>()));
            const auto& p = rec.at("provenance");
            m.provenance.seed = field<std::uint64_t>(p, "seed", line_no);
            m.provenance.registry_digest = field<std::string>(p, "registry_digest", line_no);
            m.provenance.rng_algorithm = field<std::string>(p, "rng_algorithm", line_no);
            m.distribution.rng_algorithm = field<std::string>(rec, "distribution_algorithm", line_no);
            expected_stages = field<std::size_t>(rec, "stages", line_no);
            expected_total = field<std::int64_t>(rec, "total_batches", line_no);
            continue;
        }
        if (!have_head) throw Error("manifest line " + std::to_string(line_no) + ": record before header");
        if (kind == "distribution") {
            m.distribution.entries.push_back(
                {field<std::string>(rec, "task", line_no), field<double>(rec, "probability", line_no)});
        } else if (kind == "entry") {
            const auto stage = field<std::int64_t>(rec, "stage", line_no);
            StageEntry e;
            if (!rec.contains("task")) throw Error("manifest line " + std::to_string(line_no) + ": missing 'task'");
            if (!rec.at("task").is_null()) e.task = field<std::string>(rec, "task", line_no);
            e.n_batches = field<std::int64_t>(rec, "batches", line_no);
            if (m.stages.empty() || m.stages.back().index != stage) m.stages.push_back({stage, {}});
            m.stages.back().entries.push_back(std::move(e));
        } else {
            throw Error("manifest line " + std::to_string(line_no) + ": unknown record '" + kind + "'");
        }
    }
    if (!have_head) throw Error("manifest has no header record");
    if (m.stages.size() != expected_stages || m.total_batches() != expected_total)
        throw Error("manifest is truncated: header promises " + std::to_string(expected_total) + " batches");
    return m;
}

std::string ScheduleManifest::digest() const { return sha256_hex(serialize()); }

void write_manifest(const std::filesystem::path& path, const ScheduleManifest& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(path.string() + ": cannot write manifest");
    out << manifest.serialize();
}

ScheduleManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(path.string() + ": cannot open manifest");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return ScheduleManifest::parse(ss.str());
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Wire format

std::string to_wire(const StreamHeader& h) {
    return json{{"protocol", kBatchProtocol},
                {"version", kBatchProtocolVersion},
                {"manifest_digest", h.manifest_digest},
                {"total_batches", h.total_batches},
                {"batch_size", h.batch_size}}
        .dump();
}

std::string to_wire(const Batch& b) {
    json examples = json::array();
    for (const auto& p : b.examples)
        examples.push_back({{"input", p.input_text}, {"target", p.target_text}, {"task", p.task_name}});
    json rec = {{"stage", b.stage_index}, {"task", nullptr}, {"homogeneous", b.homogeneous}, {"examples", examples}};
    if (b.task_name) rec["task"] = *b.task_name;
    return rec.dump();
}

StreamHeader parse_stream_header(std::string_view line) {
    json rec;
    try {
        rec = json::parse(line);
    } catch (const json::parse_error& e) {
        throw Error(std::string("malformed stream header: ") + e.what());
    }
    if (!rec.is_object() || rec.value("protocol", "") != kBatchProtocol)
        throw Error("not a batch stream header");
    if (rec.value("version", 0) != kBatchProtocolVersion)
        throw Error("protocol version mismatch: expected " + std::to_string(kBatchProtocolVersion));
    try {
        return {rec.at("manifest_digest").get<std::string>(), rec.at("total_batches").get<std::int64_t>(),
                rec.at("batch_size").get<std::int64_t>()};
    } catch (const json::exception& e) {
        throw Error(std::string("malformed stream header: ") + e.what());
    }
}

Batch parse_batch_line(std::string_view line) {
    json rec;
    try {
        rec = json::parse(line);
    } catch (const json::parse_error& e) {
        throw Error(std::string("malformed batch: ") + e.what());
    }
    try {
        Batch b;
        b.stage_index = rec.at("stage").get<std::int64_t>();
        if (!rec.at("task").is_null()) b.task_name = rec.at("task").get<std::string>();
        b.homogeneous = rec.at("homogeneous").get<bool>();
        for (const auto& e : rec.at("examples"))
            b.examples.push_back(
                {e.at("input").get<std::string>(), e.at("target").get<std::string>(), e.at("task").get<std::string>()});
        if (b.homogeneous != b.task_name.has_value()) throw Error("malformed batch: task set iff homogeneous");
        return b;
    } catch (const json::exception& e) {
        throw Error(std::string("malformed batch: ") + e.what());
    }
}

std::int64_t write_batch_stream(std::ostream& out, BatchStream& stream) {
    out << to_wire(StreamHeader{stream.manifest().digest(), stream.total() - stream.position(),
                                stream.manifest().config.batch_size})
        << '\n';
    std::int64_t n = 0;
    while (auto b = stream.next()) {
        out << to_wire(*b) << '\n';
        ++n;
    }
    return n;
}

} // namespace mtlforge
