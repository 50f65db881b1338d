#include "mtlforge/experiments.hpp"

#include "mtlforge/digest.hpp"
#include "mtlforge/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

namespace mtlforge {

using json = nlohmann::json;

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

json config_to_json(const SchemeConfig& c) {
    return {{"kind", std::string(to_string(c.kind))},
            {"mixing", std::string(to_string(c.mixing))},
            {"batch_size", c.batch_size},
            {"budget_steps", c.budget_steps},
            {"quantum", c.quantum},
            {"order", std::string(to_string(c.order))},
            {"seed", c.seed},
            {"sequential_rounds", c.sequential_rounds}};
}

SchemeConfig config_from_json(const json& j) {
    SchemeConfig c;
    c.kind = parse_scheme(j.at("kind").get<std::string>());
    c.mixing = parse_mixing(j.at("mixing").get<std::string>());
    c.batch_size = j.at("batch_size").get<std::int64_t>();
    c.budget_steps = j.at("budget_steps").get<std::int64_t>();
    c.quantum = j.at("quantum").get<std::int64_t>();
    c.order = parse_order(j.at("order").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.sequential_rounds = j.value("sequential_rounds", std::int64_t{1});
    return c;
}

json plan_to_json(const ExperimentPlan& p) {
    json fams = json::array();
    for (auto f : p.families) fams.push_back(std::string(to_string(f)));
    return {{"families", fams},
            {"scheme", config_to_json(p.scheme)},
            {"downstream", p.downstream},
            {"seed", p.seed},
            {"rq", std::string(to_string(p.rq))}};
}

ExperimentPlan plan_from_json(const json& j) {
    ExperimentPlan p;
    for (const auto& f : j.at("families")) p.families.push_back(parse_family(f.get<std::string>()));
    p.scheme = config_from_json(j.at("scheme"));
    p.downstream = j.at("downstream").get<std::string>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.rq = parse_rq(j.at("rq").get<std::string>());
    return p;
}

json report_to_json(const MetricReport& r) {
    json j = {{"bertscore", nullptr},    {"bleu", r.bleu},         {"meteor", r.meteor},
              {"rouge1", r.rouge1_f},    {"rouge2", r.rouge2_f},   {"rougeL", r.rougeL_f}};
    if (r.bertscore_f) j["bertscore"] = *r.bertscore_f;
    return j;
}

MetricReport report_from_json(const json& j) {
    MetricReport r;
    if (!j.at("bertscore").is_null()) r.bertscore_f = j.at("bertscore").get<double>();
    r.bleu = j.at("bleu").get<double>();
    r.meteor = j.at("meteor").get<double>();
    r.rouge1_f = j.at("rouge1").get<double>();
    r.rouge2_f = j.at("rouge2").get<double>();
    r.rougeL_f = j.at("rougeL").get<double>();
    return r;
}

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    return out + "'";
}

} // namespace

// ---------------------------------------------------------------------------
// Plans

std::string_view to_string(RqTag t) {
    switch (t) {
    case RqTag::RQ1: return "rq1";
    case RqTag::RQ2: return "rq2";
    case RqTag::RQ3: return "rq3";
    case RqTag::RQ4: return "rq4";
    case RqTag::CUSTOM: return "custom";
    }
    return "?";
}

RqTag parse_rq(std::string_view s) {
    const auto l = lower(s);
    if (l == "rq1") return RqTag::RQ1;
    if (l == "rq2") return RqTag::RQ2;
    if (l == "rq3") return RqTag::RQ3;
    if (l == "rq4") return RqTag::RQ4;
    if (l == "custom") return RqTag::CUSTOM;
    throw UsageError("unknown research question '" + std::string(s) + "' (expected rq1, rq2, rq3 or rq4)");
}

std::vector<FamilyId> canonical_families(std::span<const FamilyId> families) {
    std::vector<FamilyId> out(families.begin(), families.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::string combination_label(std::span<const FamilyId> families) {
    const auto fams = canonical_families(families);
    if (fams.size() == kAllFamilies.size()) return "ALL";
    std::string out;
    auto add = [&](FamilyId f) {
        if (!out.empty()) out += '+';
        out += display_name(f);
    };
    if (std::find(fams.begin(), fams.end(), FamilyId::SUM) != fams.end()) add(FamilyId::SUM);
    for (auto f : fams)
        if (f != FamilyId::SUM) add(f);
    return out;
}

std::vector<FamilyId> parse_combination(std::string_view label) {
    if (lower(label) == "all") return {kAllFamilies.begin(), kAllFamilies.end()};
    std::vector<FamilyId> out;
    // "RC+" contains the separator, so tokens are matched greedily: a '+'
    // directly after "RC" belongs to the name when followed by '+' or the end.
    std::size_t i = 0;
    while (i < label.size()) {
        auto j = label.find('+', i);
        if (j == std::string_view::npos) j = label.size();
        std::string name(label.substr(i, j - i));
        if (lower(name) == "rc" && j < label.size() && (j + 1 == label.size() || label[j + 1] == '+')) {
            name += '+';
            ++j;
        }
        if (name.empty()) throw Error("malformed family combination '" + std::string(label) + "'");
        out.push_back(parse_family(name));
        i = j + 1;
    }
    if (out.empty()) throw Error("empty family combination");
    return canonical_families(out);
}

void ExperimentPlan::validate() const {
    if (families.empty()) throw Error("plan has no families");
    if (scheme.kind == SchemeKind::CMTL && scheme.mixing != MixingStrategy::EQUAL)
        throw Error("cmtl plans require equal mixing");
    if (scheme.seed != seed) throw Error("plan seed and scheme seed differ");
    if (downstream.empty()) throw Error("plan has no downstream dataset");
    scheme.validate();
}

std::string ExperimentPlan::id() const {
    std::string fams;
    for (auto f : canonical_families(families)) {
        if (!fams.empty()) fams += '+';
        fams += lower(to_string(f));
    }
    return std::string(to_string(rq)) + "-" + fams + "-" + std::string(to_string(scheme.kind)) + "-" + downstream;
}

std::string ExperimentPlan::serialize() const { return plan_to_json(*this).dump(2) + '\n'; }

ExperimentPlan ExperimentPlan::parse(std::string_view text) {
    try {
        auto p = plan_from_json(json::parse(text));
        p.families = canonical_families(p.families);
        return p;
    } catch (const json::exception& e) {
        throw Error(std::string("malformed plan: ") + e.what());
    }
}

std::vector<std::vector<FamilyId>> rq_combinations(RqTag rq) {
    using F = FamilyId;
    const std::vector<F> others = {F::CLS, F::CMNS, F::NLI, F::RC, F::RC_PLUS};
    std::vector<std::vector<F>> out;
    switch (rq) {
    case RqTag::RQ1:
        for (auto f : kAllFamilies) out.push_back({f});
        out.emplace_back(kAllFamilies.begin(), kAllFamilies.end());
        break;
    case RqTag::RQ2:
        for (auto f : others) out.push_back({f, F::SUM});
        break;
    case RqTag::RQ3:
        for (std::size_t a = 0; a < others.size(); ++a)
            for (std::size_t b = a + 1; b < others.size(); ++b) out.push_back({others[a], others[b]});
        break;
    case RqTag::RQ4:
        for (std::size_t a = 0; a < others.size(); ++a)
            for (std::size_t b = a + 1; b < others.size(); ++b) out.push_back({others[a], others[b], F::SUM});
        for (std::size_t a = 0; a < others.size(); ++a)
            for (std::size_t b = a + 1; b < others.size(); ++b)
                for (std::size_t c = b + 1; c < others.size(); ++c) out.push_back({others[a], others[b], others[c]});
        break;
    case RqTag::CUSTOM: throw UsageError("custom plans have no fixed combination matrix");
    }
    return out;
}

std::vector<ExperimentPlan> plan_rq(RqTag rq, const Registry& registry, const PlanOptions& options) {
    for (auto f : kAllFamilies)
        if (registry.tasks_in(f).empty())
            throw Error("registry has no tasks for family " + std::string(to_string(f)));
    if (options.schemes.empty()) throw UsageError("no schemes selected");
    if (options.downstream.empty()) throw UsageError("no downstream datasets selected");
    std::vector<ExperimentPlan> plans;
    for (const auto& fams : rq_combinations(rq))
        for (auto kind : options.schemes)
            for (const auto& ds : options.downstream) {
                ExperimentPlan p;
                p.families = fams;
                p.rq = rq;
                p.seed = options.seed;
                p.downstream = ds;
                p.scheme.kind = kind;
                p.scheme.mixing = kind == SchemeKind::CMTL ? MixingStrategy::EQUAL : options.mixing;
                p.scheme.batch_size = options.batch_size;
                p.scheme.budget_steps = options.budget.value_or(default_budget(fams.size()));
                p.scheme.quantum = options.quantum;
                p.scheme.order = options.order;
                p.scheme.seed = options.seed;
                p.scheme.sequential_rounds = options.sequential_rounds;
                p.validate();
                plans.push_back(std::move(p));
            }
    return plans;
}

// ---------------------------------------------------------------------------
// Downstream data

DownstreamData synth_downstream(std::string_view name, std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
    DownstreamData d;
    d.name = std::string(name);
    const auto examples = synth_fixture(FamilyId::SUM, n_train + n_test, seed ^ fnv1a64(name));
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& ex = examples[i];
        EvalPair p{ex.id, ex.fields.at("document"), ex.fields.at("summary")};
        (i < n_train ? d.train : d.test).push_back(std::move(p));
    }
    return d;
}

std::vector<EvalPair> load_eval_pairs(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(path.string() + ": cannot open");
    std::vector<EvalPair> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = path.string() + ": line " + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw Error(where + ", malformed record: " + e.what());
        }
        EvalPair p;
        for (auto [key, dst] : {std::pair{"id", &p.id}, {"input", &p.input}, {"target", &p.target}}) {
            if (!j.is_object() || !j.contains(key) || !j[key].is_string())
                throw Error(where + ", missing string '" + key + "'");
            *dst = j[key].get<std::string>();
        }
        out.push_back(std::move(p));
    }
    return out;
}

void write_eval_pairs(const std::filesystem::path& path, std::span<const EvalPair> pairs) {
    std::ofstream out(path);
    if (!out) throw Error(path.string() + ": cannot write");
    for (const auto& p : pairs)
        out << json{{"id", p.id}, {"input", p.input}, {"target", p.target}}.dump() << '\n';
}

FinetunePlan build_finetune(const DownstreamData& data, const Hyperparameters& hparams, std::uint64_t seed) {
    if (data.train.empty()) throw Error("downstream '" + data.name + "' has no training split");
    if (hparams.batch_size <= 0 || hparams.epochs <= 0) throw Error("finetune needs positive batch_size and epochs");
    FinetunePlan out;
    TaskSpec spec;
    spec.name = data.name;
    spec.family = FamilyId::SUM;
    spec.format = default_template(FamilyId::SUM);
    out.registry.register_task(spec);
    std::vector<Example> examples;
    for (const auto& p : data.train) examples.push_back({p.id, {{"document", p.input}, {"summary", p.target}}});
    out.registry.set_examples(data.name, std::move(examples));

    SchemeConfig cfg;
    cfg.kind = SchemeKind::SEQUENTIAL;
    cfg.batch_size = hparams.batch_size;
    const auto n = static_cast<std::int64_t>(data.train.size());
    cfg.budget_steps = hparams.epochs * ((n + hparams.batch_size - 1) / hparams.batch_size);
    cfg.seed = seed;
    const std::array<FamilyId, 1> fams = {FamilyId::SUM};
    out.manifest = build_sequential(out.registry, fams, cfg);
    return out;
}

// ---------------------------------------------------------------------------
// Trainers

std::string_view to_string(TrainPhase p) { return p == TrainPhase::PREFINETUNE ? "prefinetune" : "finetune"; }

std::string lead_sentences(std::string_view text, std::size_t n) {
    const auto start = text.find_first_not_of(" \t\r\n");
    if (start == std::string_view::npos || n == 0) return {};
    std::size_t found = 0;
    for (std::size_t i = start; i < text.size(); ++i) {
        const char c = text[i];
        if (c != '.' && c != '!' && c != '?') continue;
        const bool boundary = i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]));
        if (boundary && ++found == n) return std::string(text.substr(start, i + 1 - start));
    }
    auto end = text.find_last_not_of(" \t\r\n");
    return std::string(text.substr(start, end + 1 - start));
}

namespace {

class LeadTrainer : public Trainer {
public:
    explicit LeadTrainer(std::size_t n) : n_(n) {}
    std::string id() const override { return "lead-" + std::to_string(n_); }
    void begin(TrainPhase, const StreamHeader&) override {}
    void consume(const Batch&) override { ++seen_[static_cast<int>(phase_)]; }
    void end(TrainPhase phase) override { phase_ = phase == TrainPhase::PREFINETUNE ? TrainPhase::FINETUNE : phase; }
    std::vector<std::string> predict(std::span<const std::string> inputs) override {
        std::vector<std::string> out;
        out.reserve(inputs.size());
        for (const auto& s : inputs) out.push_back(lead_sentences(s, n_));
        return out;
    }
    std::int64_t batches_seen(TrainPhase phase) const override { return seen_[static_cast<int>(phase)]; }

private:
    std::size_t n_;
    TrainPhase phase_ = TrainPhase::PREFINETUNE;
    std::int64_t seen_[2] = {0, 0};
};

} // namespace

std::unique_ptr<Trainer> lead_n_trainer(std::size_t n) {
    if (n == 0) throw Error("lead-n trainer needs n >= 1");
    return std::make_unique<LeadTrainer>(n);
}

ProcessTrainer::ProcessTrainer(std::string command, std::filesystem::path workdir, Hyperparameters hparams)
    : command_(std::move(command)), workdir_(std::move(workdir)), hparams_(std::move(hparams)) {
    if (command_.empty()) throw Error("trainer command is empty");
    std::filesystem::create_directories(workdir_);
}

std::string ProcessTrainer::id() const { return "process:" + command_; }

std::filesystem::path ProcessTrainer::stream_path(TrainPhase phase) const {
    return workdir_ / (std::string(to_string(phase)) + ".jsonl");
}

void ProcessTrainer::begin(TrainPhase phase, const StreamHeader& header) {
    out_ = std::make_unique<std::ofstream>(stream_path(phase));
    if (!*out_) throw Error(stream_path(phase).string() + ": cannot write");
    *out_ << to_wire(header) << '\n';
    seen_[static_cast<int>(phase)] = 0;
    phase_open_ = phase;
}

void ProcessTrainer::consume(const Batch& batch) {
    if (!out_) throw Error("trainer received a batch outside a phase");
    *out_ << to_wire(batch) << '\n';
    ++seen_[static_cast<int>(phase_open_)];
}

void ProcessTrainer::end(TrainPhase phase) {
    if (!out_ || phase != phase_open_) throw Error("trainer phase " + std::string(to_string(phase)) + " was not open");
    out_->close();
    if (!*out_) throw Error(stream_path(phase).string() + ": write failed");
    out_.reset();
}

std::int64_t ProcessTrainer::batches_seen(TrainPhase phase) const { return seen_[static_cast<int>(phase)]; }

std::vector<std::string> ProcessTrainer::predict(std::span<const std::string> inputs) {
    const auto eval_path = workdir_ / "eval.jsonl";
    const auto pred_path = workdir_ / "predictions.jsonl";
    const auto hp_path = workdir_ / "hparams.json";
    std::vector<std::string> ids;
    {
        std::ofstream eval(eval_path);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            ids.push_back(std::to_string(i));
            eval << json{{"id", ids.back()}, {"input", inputs[i]}}.dump() << '\n';
        }
        std::ofstream hp(hp_path);
        hp << hparams_.canonical_json() << '\n';
        if (!eval || !hp) throw Error(workdir_.string() + ": cannot write trainer inputs");
    }
    for (auto phase : {TrainPhase::PREFINETUNE, TrainPhase::FINETUNE})
        if (!std::filesystem::exists(stream_path(phase))) std::ofstream(stream_path(phase)).flush();
    std::filesystem::remove(pred_path);

    const std::string cmd = command_ + " --in " + shell_quote(stream_path(TrainPhase::PREFINETUNE).string()) +
                            " --finetune " + shell_quote(stream_path(TrainPhase::FINETUNE).string()) +
                            " --eval " + shell_quote(eval_path.string()) + " --out " +
                            shell_quote(pred_path.string()) + " --hparams " + shell_quote(hp_path.string());
    const int status = std::system(cmd.c_str());
    if (status != 0) throw Error("trainer command failed with status " + std::to_string(status) + ": " + cmd);
    std::ifstream in(pred_path);
    if (!in) throw Error("trainer wrote no predictions at " + pred_path.string());
    return read_predictions(in, ids, pred_path.string());
}

std::vector<std::string> read_predictions(std::istream& in, std::span<const std::string> expected_ids,
                                          std::string_view source) {
    std::vector<std::string> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = std::string(source) + ": line " + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw Error(where + ", malformed prediction: " + e.what());
        }
        if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("prediction") ||
            !j["prediction"].is_string())
            throw Error(where + ", expected {\"id\": string, \"prediction\": string}");
        if (out.size() >= expected_ids.size())
            throw Error(where + ", more predictions than the " + std::to_string(expected_ids.size()) + " inputs");
        const auto id = j["id"].get<std::string>();
        if (id != expected_ids[out.size()])
            throw Error(where + ", expected id '" + expected_ids[out.size()] + "' but got '" + id + "'");
        out.push_back(j["prediction"].get<std::string>());
    }
    if (out.size() != expected_ids.size())
        throw Error(std::string(source) + ": " + std::to_string(out.size()) + " predictions for " +
                    std::to_string(expected_ids.size()) + " inputs");
    return out;
}

// ---------------------------------------------------------------------------
// Runs

std::string record_to_json(const RunRecord& r, bool include_wall_time) {
    json j = {{"plan", plan_to_json(r.plan)},
              {"report", report_to_json(r.report)},
              {"manifest_digest", r.manifest_digest},
              {"finetune_digest", r.finetune_digest},
              {"registry_digest", r.registry_digest},
              {"trainer", r.trainer_id},
              {"batches", r.batches},
              {"baseline", r.is_baseline}};
    if (include_wall_time) j["wall_time"] = r.wall_time;
    return j.dump();
}

namespace {

RunRecord record_from(const json& j) {
    RunRecord r;
    r.plan = plan_from_json(j.at("plan"));
    r.report = report_from_json(j.at("report"));
    r.manifest_digest = j.at("manifest_digest").get<std::string>();
    r.finetune_digest = j.at("finetune_digest").get<std::string>();
    r.registry_digest = j.at("registry_digest").get<std::string>();
    r.trainer_id = j.at("trainer").get<std::string>();
    r.batches = j.at("batches").get<std::int64_t>();
    r.is_baseline = j.at("baseline").get<bool>();
    r.wall_time = j.value("wall_time", 0.0);
    return r;
}

void stream_phase(Trainer& trainer, TrainPhase phase, BatchStream& stream) {
    StreamHeader header{stream.manifest().digest(), stream.total(), stream.manifest().config.batch_size};
    trainer.begin(phase, header);
    while (auto batch = stream.next()) trainer.consume(*batch);
    trainer.end(phase);
    if (trainer.batches_seen(phase) != stream.total())
        throw Error("trainer " + trainer.id() + " reports " + std::to_string(trainer.batches_seen(phase)) + " " +
                    std::string(to_string(phase)) + " batches but the manifest has " +
                    std::to_string(stream.total()));
}

MetricReport score(Trainer& trainer, const DownstreamData& data, const RunOptions& options) {
    if (data.test.empty()) throw Error("downstream '" + data.name + "' has no test split");
    std::vector<std::string> inputs, targets;
    for (const auto& p : data.test) {
        inputs.push_back(p.input);
        targets.push_back(p.target);
    }
    const auto predictions = trainer.predict(inputs);
    if (predictions.size() != inputs.size())
        throw Error("trainer " + trainer.id() + " returned " + std::to_string(predictions.size()) +
                    " predictions for " + std::to_string(inputs.size()) + " inputs");
    return evaluate_corpus(predictions, targets, options.embedder);
}

} // namespace

std::string report_to_json_text(const MetricReport& report) { return report_to_json(report).dump(); }

RunRecord record_from_json(std::string_view text) {
    try {
        return record_from(json::parse(text));
    } catch (const json::exception& e) {
        throw Error(std::string("malformed run record: ") + e.what());
    }
}

RunRecord run_experiment(const ExperimentPlan& plan, Trainer& trainer, const Registry& registry,
                         const DownstreamData& data, const RunOptions& options) {
    plan.validate();
    if (plan.downstream != data.name)
        throw Error("plan targets '" + plan.downstream + "' but the downstream data is '" + data.name + "'");
    const auto started = std::chrono::steady_clock::now();

    const auto manifest = build_schedule(registry, plan.families, plan.scheme);
    MaterializeOptions pre;
    pre.truncation = TruncationLimits{static_cast<std::size_t>(options.hparams.max_source_length),
                                      static_cast<std::size_t>(options.hparams.max_target_length)};
    BatchStream stream(manifest, registry, Rng(plan.seed), pre);
    stream_phase(trainer, TrainPhase::PREFINETUNE, stream);

    const auto ft = build_finetune(data, options.hparams, plan.seed);
    MaterializeOptions post;
    post.truncation = TruncationLimits{static_cast<std::size_t>(options.hparams.finetune_max_source_length),
                                       static_cast<std::size_t>(options.hparams.finetune_max_target_length)};
    BatchStream ft_stream(ft.manifest, ft.registry, Rng(plan.seed), post);
    stream_phase(trainer, TrainPhase::FINETUNE, ft_stream);

    RunRecord r;
    r.plan = plan;
    r.report = score(trainer, data, options);
    r.manifest_digest = manifest.digest();
    r.finetune_digest = ft.manifest.digest();
    r.registry_digest = registry.digest();
    r.trainer_id = trainer.id();
    r.batches = trainer.batches_seen(TrainPhase::PREFINETUNE);
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return r;
}

RunRecord run_baseline(const DownstreamData& data, Trainer& trainer, const RunOptions& options) {
    const auto started = std::chrono::steady_clock::now();
    RunRecord r;
    r.is_baseline = true;
    r.plan.downstream = data.name;
    r.plan.rq = RqTag::CUSTOM;
    r.report = score(trainer, data, options);
    r.trainer_id = trainer.id();
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return r;
}

RunLog::RunLog(std::filesystem::path path, bool record_wall_time)
    : path_(std::move(path)), record_wall_time_(record_wall_time) {}

namespace {

struct LogLine {
    std::string digest;
    std::string prev;
    json record;
};

std::vector<LogLine> read_chain(const std::filesystem::path& path) {
    std::vector<LogLine> lines;
    std::ifstream in(path);
    if (!in) return lines;
    std::string line, prev;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto where = path.string() + ": line " + std::to_string(line_no);
        if (line.empty()) throw Error(where + ", blank line in run log");
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw Error(where + ", malformed run log entry: " + e.what());
        }
        if (!j.is_object() || !j.contains("digest") || !j.contains("prev") || !j.contains("record"))
            throw Error(where + ", run log entry lacks digest/prev/record");
        LogLine l{j["digest"].get<std::string>(), j["prev"].get<std::string>(), j["record"]};
        if (l.prev != prev) throw Error(where + ", chain broken: prev does not match the preceding entry");
        if (sha256_hex(l.prev + l.record.dump()) != l.digest)
            throw Error(where + ", digest mismatch: the entry was modified");
        prev = l.digest;
        lines.push_back(std::move(l));
    }
    return lines;
}

} // namespace

void RunLog::verify() const {
    std::lock_guard lock(mutex_);
    read_chain(path_);
}

std::string RunLog::last_digest() const {
    const auto chain = read_chain(path_);
    return chain.empty() ? std::string() : chain.back().digest;
}

void RunLog::append(const RunRecord& record) {
    std::lock_guard lock(mutex_);
    const auto prev = last_digest();
    const auto body = record_to_json(record, record_wall_time_);
    const auto digest = sha256_hex(prev + body);
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error(path_.string() + ": cannot append");
    out << "{\"digest\":" << json(digest).dump() << ",\"prev\":" << json(prev).dump() << ",\"record\":" << body
        << "}\n";
    if (!out) throw Error(path_.string() + ": append failed");
}

std::vector<RunRecord> RunLog::read() const {
    std::lock_guard lock(mutex_);
    std::vector<RunRecord> out;
    for (const auto& l : read_chain(path_)) {
        try {
            out.push_back(record_from(l.record));
        } catch (const json::exception& e) {
            throw Error(path_.string() + ": malformed run record: " + e.what());
        }
    }
    return out;
}

std::vector<RunRecord> run_all(std::span<const ExperimentPlan> plans, const TrainerFactory& factory,
                               const Registry& registry, std::span<const DownstreamData> data,
                               const RunOptions& options, std::size_t jobs) {
    auto data_for = [&](const std::string& name) -> const DownstreamData& {
        for (const auto& d : data)
            if (d.name == name) return d;
        throw Error("no downstream data named '" + name + "'");
    };
    for (const auto& p : plans) data_for(p.downstream);

    std::vector<RunRecord> records(plans.size());
    std::vector<std::exception_ptr> errors(plans.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (auto i = next++; i < plans.size(); i = next++) {
            try {
                auto trainer = factory();
                records[i] = run_experiment(plans[i], *trainer, registry, data_for(plans[i].downstream), options);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto n_threads = std::max<std::size_t>(1, std::min(jobs, plans.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return records;
}

} // namespace mtlforge
