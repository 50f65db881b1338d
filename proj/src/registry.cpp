#include "mtlforge/registry.hpp"

#include "mtlforge/digest.hpp"
#include "mtlforge/error.hpp"
#include "mtlforge/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace mtlforge {

using json = nlohmann::json;

namespace {

std::string upper(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

bool is_prompt_label(std::string_view label) {
    if (label.size() < 2 || label.back() != ':') return false;
    auto word = label.substr(0, label.size() - 1);
    if (!std::islower(static_cast<unsigned char>(word.front()))) return false;
    return std::all_of(word.begin(), word.end(), [](char c) {
        return std::islower(static_cast<unsigned char>(c)) || c == '_';
    });
}

} // namespace

std::string_view to_string(FamilyId f) {
    switch (f) {
    case FamilyId::CLS: return "CLS";
    case FamilyId::CMNS: return "CMNS";
    case FamilyId::NLI: return "NLI";
    case FamilyId::RC: return "RC";
    case FamilyId::RC_PLUS: return "RC_PLUS";
    case FamilyId::SUM: return "SUM";
    }
    return "?";
}

std::string_view display_name(FamilyId f) {
    return f == FamilyId::RC_PLUS ? std::string_view("RC+") : to_string(f);
}

FamilyId parse_family(std::string_view s) {
    const auto u = upper(s);
    for (auto f : kAllFamilies)
        if (u == to_string(f) || u == display_name(f)) return f;
    throw Error("unknown task family '" + std::string(s) + "'");
}

void FormatTemplate::validate() const {
    if (inputs.empty()) throw Error("format template has no input fields");
    for (const auto& p : inputs) {
        if (!is_prompt_label(p.label))
            throw Error("prompt label '" + p.label + "' is not a lowercase word followed by ':'");
        if (p.field_key.empty()) throw Error("prompt '" + p.label + "' has an empty field key");
    }
    if (target_key.empty()) throw Error("format template has an empty target key");
}

std::vector<std::string> FormatTemplate::required_keys() const {
    std::vector<std::string> keys;
    for (const auto& p : inputs) keys.push_back(p.field_key);
    keys.push_back(target_key);
    return keys;
}

FormatTemplate default_template(FamilyId f) {
    switch (f) {
    case FamilyId::CLS: return {{{"text:", "text"}}, "label"};
    case FamilyId::NLI: return {{{"premise:", "premise"}, {"hypothesis:", "hypothesis"}}, "label"};
    case FamilyId::RC:
    case FamilyId::RC_PLUS: return {{{"question:", "question"}, {"context:", "context"}}, "answer"};
    case FamilyId::CMNS: return {{{"question:", "question"}, {"options:", "options"}}, "answer"};
    case FamilyId::SUM: return {{{"document:", "document"}}, "summary"};
    }
    throw Error("unknown task family");
}

// ---------------------------------------------------------------------------
// Registry

void Registry::register_task(TaskSpec spec) {
    if (spec.name.empty()) throw Error("task name must not be empty");
    if (by_name_.count(spec.name))
        throw Error("task '" + spec.name + "' is already registered (family " +
                    std::string(to_string(task(spec.name).family)) + ")");
    spec.format.validate();
    by_name_.emplace(spec.name, tasks_.size());
    tasks_.push_back(std::move(spec));
    examples_.emplace_back();
    loaded_.push_back(false);
}

std::size_t Registry::index_of(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    if (it == by_name_.end()) throw Error("unknown task '" + std::string(name) + "'");
    return it->second;
}

bool Registry::contains(std::string_view name) const { return by_name_.count(std::string(name)) > 0; }

const TaskSpec& Registry::task(std::string_view name) const { return tasks_[index_of(name)]; }

std::vector<const TaskSpec*> Registry::tasks_in(FamilyId f) const {
    std::vector<const TaskSpec*> out;
    for (const auto& t : tasks_)
        if (t.family == f) out.push_back(&t);
    return out;
}

std::vector<std::string> Registry::task_names_for(std::span<const FamilyId> families) const {
    std::vector<std::string> out;
    for (auto f : kAllFamilies) {
        if (std::find(families.begin(), families.end(), f) == families.end()) continue;
        for (const auto* t : tasks_in(f)) out.push_back(t->name);
    }
    return out;
}

void Registry::load(std::string_view name) {
    const auto i = index_of(name);
    if (tasks_[i].source_path.empty())
        throw Error("task '" + tasks_[i].name + "' has no dataset path");
    examples_[i] = load_dataset(tasks_[i].source_path, tasks_[i]);
    loaded_[i] = true;
}

void Registry::load_all() {
    for (const auto& t : tasks_) load(t.name);
}

void Registry::set_examples(std::string_view name, std::vector<Example> examples) {
    const auto i = index_of(name);
    const auto keys = tasks_[i].format.required_keys();
    for (const auto& ex : examples)
        for (const auto& k : keys)
            if (!ex.fields.count(k))
                throw Error("task '" + tasks_[i].name + "': example '" + ex.id + "' missing " + k);
    tasks_[i].size = examples.size();
    examples_[i] = std::move(examples);
    loaded_[i] = true;
}

bool Registry::loaded(std::string_view name) const { return loaded_[index_of(name)]; }

const std::vector<Example>& Registry::examples(std::string_view name) const {
    const auto i = index_of(name);
    if (!loaded_[i]) throw Error("task '" + tasks_[i].name + "' is not loaded");
    return examples_[i];
}

std::string Registry::digest() const {
    Sha256 h;
    h.update_field("mtlforge-registry-v1");
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        const auto& t = tasks_[i];
        h.update_field(t.name);
        h.update_field(to_string(t.family));
        h.update_field(std::to_string(t.size));
        for (const auto& p : t.format.inputs) {
            h.update_field(p.label);
            h.update_field(p.field_key);
        }
        h.update_field(t.format.target_key);
        h.update_field(loaded_[i] ? "loaded" : "unloaded");
        for (const auto& ex : examples_[i]) {
            h.update_field(ex.id);
            for (const auto& [k, v] : ex.fields) {
                h.update_field(k);
                h.update_field(v);
            }
        }
    }
    return h.hex_digest();
}

// ---------------------------------------------------------------------------
// Dataset files

std::vector<Example> load_dataset(const std::filesystem::path& path, TaskSpec& spec) {
    std::ifstream in(path);
    if (!in) throw Error(path.string() + ": cannot open dataset for task '" + spec.name + "'");
    const auto keys = spec.format.required_keys();
    std::vector<Example> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto where = path.string() + ": line " + std::to_string(line_no);
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw Error(where + ", malformed record: " + e.what());
        }
        if (!rec.is_object()) throw Error(where + ", malformed record: not an object");
        Example ex;
        for (auto it = rec.begin(); it != rec.end(); ++it) {
            if (!it.value().is_string())
                throw Error(where + ", malformed record: value of '" + it.key() + "' is not a string");
            if (it.key() == "id")
                ex.id = it.value().get<std::string>();
            else
                ex.fields.emplace(it.key(), it.value().get<std::string>());
        }
        if (!rec.contains("id")) throw Error(where + ", missing id");
        for (const auto& k : keys)
            if (!ex.fields.count(k)) throw Error(where + ", missing " + k);
        out.push_back(std::move(ex));
    }
    spec.size = out.size();
    return out;
}

void write_dataset(const std::filesystem::path& path, std::span<const Example> examples) {
    std::ofstream out(path);
    if (!out) throw Error(path.string() + ": cannot write dataset");
    for (const auto& ex : examples) {
        json rec = json::object();
        rec["id"] = ex.id;
        for (const auto& [k, v] : ex.fields) rec[k] = v;
        out << rec.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// Formatting and truncation

TextPair format_example(const Example& example, const FormatTemplate& format, std::string_view task_name) {
    TextPair pair;
    pair.task_name = std::string(task_name);
    for (const auto& p : format.inputs) {
        auto it = example.fields.find(p.field_key);
        if (it == example.fields.end())
            throw Error("example '" + example.id + "' missing field " + p.field_key);
        if (!pair.input_text.empty()) pair.input_text += ' ';
        pair.input_text += p.label;
        pair.input_text += ' ';
        pair.input_text += it->second;
    }
    auto t = example.fields.find(format.target_key);
    if (t == example.fields.end())
        throw Error("example '" + example.id + "' missing field " + format.target_key);
    pair.target_text = t->second;
    return pair;
}

std::vector<TokenSpan> whitespace_tokenize(std::string_view text) {
    std::vector<TokenSpan> spans;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i == text.size()) break;
        const auto start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        spans.push_back({start, i});
    }
    return spans;
}

namespace {

std::string truncate_text(const std::string& text, std::size_t limit, const Tokenizer& tokenizer) {
    const auto spans = tokenizer(text);
    if (spans.size() <= limit) return text;
    return text.substr(spans.front().begin, spans[limit - 1].end - spans.front().begin);
}

} // namespace

TextPair truncate_pair(const TextPair& pair, TruncationLimits limits, const Tokenizer& tokenizer) {
    if (limits.max_input == 0 || limits.max_target == 0)
        throw Error("truncation limits must be positive");
    TextPair out = pair;
    out.input_text = truncate_text(pair.input_text, limits.max_input, tokenizer);
    out.target_text = truncate_text(pair.target_text, limits.max_target, tokenizer);
    return out;
}

// ---------------------------------------------------------------------------
// Fixtures

namespace {

constexpr std::array<std::string_view, 48> kWords = {
    "amber",  "basin",  "cedar",  "delta",  "ember",  "fjord",  "glade",  "harbor",
    "inlet",  "jetty",  "kelp",   "lagoon", "meadow", "nectar", "orchid", "pebble",
    "quarry", "ridge",  "summit", "tundra", "upland", "valley", "willow", "yarrow",
    "zephyr", "anchor", "beacon", "canyon", "dune",   "estuary", "forest", "geyser",
    "hollow", "island", "juniper", "knoll", "lantern", "marsh", "north",  "oasis",
    "prairie", "quiet", "river",  "stone",  "timber", "umber",  "vista",  "wharf"};

class TextGen {
public:
    explicit TextGen(Rng rng) : rng_(rng) {}

    std::string word() { return std::string(kWords[rng_.below(kWords.size())]); }

    std::string words(std::size_t lo, std::size_t hi) {
        const auto n = lo + rng_.below(hi - lo + 1);
        std::string s;
        for (std::size_t i = 0; i < n; ++i) {
            if (i) s += ' ';
            s += word();
        }
        return s;
    }

    std::string sentence() {
        auto s = words(4, 9);
        s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
        return s + ".";
    }

    std::vector<std::string> sentences(std::size_t lo, std::size_t hi) {
        const auto n = lo + rng_.below(hi - lo + 1);
        std::vector<std::string> out;
        for (std::size_t i = 0; i < n; ++i) out.push_back(sentence());
        return out;
    }

    template <std::size_t N>
    std::string pick(const std::array<std::string_view, N>& options) {
        return std::string(options[rng_.below(N)]);
    }

    std::uint64_t below(std::uint64_t n) { return rng_.below(n); }

private:
    Rng rng_;
};

std::string join(const std::vector<std::string>& parts) {
    std::string s;
    for (const auto& p : parts) {
        if (!s.empty()) s += ' ';
        s += p;
    }
    return s;
}

} // namespace

std::vector<Example> synth_fixture(FamilyId family, std::size_t n, std::uint64_t seed) {
    std::vector<Example> out;
    out.reserve(n);
    const Rng base = Rng(seed).split(to_string(family));
    for (std::size_t i = 0; i < n; ++i) {
        TextGen gen(base.split(static_cast<std::uint64_t>(i)));
        Example ex;
        ex.id = std::string(to_string(family)) + "-" + std::to_string(seed) + "-" + std::to_string(i);
        auto& f = ex.fields;
        switch (family) {
        case FamilyId::CLS:
            f["text"] = join(gen.sentences(1, 3));
            f["label"] = gen.pick(std::array<std::string_view, 3>{"positive", "negative", "neutral"});
            break;
        case FamilyId::NLI:
            f["premise"] = gen.sentence();
            f["hypothesis"] = gen.sentence();
            f["label"] = gen.pick(std::array<std::string_view, 3>{"entailment", "neutral", "contradiction"});
            break;
        case FamilyId::CMNS: {
            f["question"] = "Which " + gen.words(3, 6) + "?";
            const auto a = gen.word();
            const auto b = gen.word();
            f["options"] = "(a) " + a + " (b) " + b;
            f["answer"] = gen.below(2) ? a : b;
            break;
        }
        case FamilyId::RC:
        case FamilyId::RC_PLUS: {
            const auto ctx = gen.sentences(2, 4);
            f["question"] = "What " + gen.words(3, 6) + "?";
            f["context"] = join(ctx);
            const auto& pick = ctx[gen.below(ctx.size())];
            const auto spans = whitespace_tokenize(pick);
            f["answer"] = pick.substr(spans[1].begin, spans[2].end - spans[1].begin);
            break;
        }
        case FamilyId::SUM: {
            const auto doc = gen.sentences(3, 6);
            f["document"] = join(doc);
            f["summary"] = doc.front();
            break;
        }
        }
        out.push_back(std::move(ex));
    }
    return out;
}

const std::vector<CatalogEntry>& standard_catalog() {
    static const std::vector<CatalogEntry> catalog = {
        {"goemotions", FamilyId::CLS},      {"imdb", FamilyId::CLS},
        {"ag_news", FamilyId::CLS},         {"winogrande", FamilyId::CMNS},
        {"piqa", FamilyId::CMNS},           {"siqa", FamilyId::CMNS},
        {"mnli", FamilyId::NLI},            {"anli", FamilyId::NLI},
        {"qnli", FamilyId::NLI},            {"boolq", FamilyId::RC},
        {"squad", FamilyId::RC},            {"tweetqa", FamilyId::RC},
        {"hotpotqa", FamilyId::RC_PLUS},    {"natural_questions", FamilyId::RC_PLUS},
        {"record", FamilyId::RC_PLUS},      {"xsum", FamilyId::SUM},
        {"wikilingua_en", FamilyId::SUM},   {"aeslc", FamilyId::SUM},
    };
    return catalog;
}

Registry synthetic_registry(std::uint64_t seed, std::size_t base_size) {
    Registry reg;
    std::array<std::size_t, 6> seen{};
    for (const auto& entry : standard_catalog()) {
        TaskSpec spec;
        spec.name = entry.name;
        spec.family = entry.family;
        spec.format = default_template(entry.family);
        reg.register_task(spec);
        const auto k = seen[family_index(entry.family)]++;
        reg.set_examples(entry.name,
                         synth_fixture(entry.family, base_size * (k + 1), seed ^ fnv1a64(entry.name)));
    }
    return reg;
}

// ---------------------------------------------------------------------------
// Registry manifest

namespace {

FormatTemplate parse_template(const json& entry, FamilyId family, const std::string& where) {
    FormatTemplate format = default_template(family);
    if (entry.contains("template")) {
        const auto& t = entry.at("template");
        if (!t.is_array()) throw Error(where + ": 'template' must be a list of [label, field] pairs");
        format.inputs.clear();
        for (const auto& p : t) {
            if (!p.is_array() || p.size() != 2 || !p[0].is_string() || !p[1].is_string())
                throw Error(where + ": 'template' entries must be [label, field] string pairs");
            format.inputs.push_back({p[0].get<std::string>(), p[1].get<std::string>()});
        }
    }
    if (entry.contains("target")) {
        if (!entry.at("target").is_string()) throw Error(where + ": 'target' must be a string");
        format.target_key = entry.at("target").get<std::string>();
    }
    return format;
}

} // namespace

Registry load_registry_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(path.string() + ": cannot open registry manifest");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(path.string() + ": malformed registry manifest: " + e.what());
    }
    if (!doc.is_object() || !doc.contains("tasks") || !doc.at("tasks").is_array())
        throw Error(path.string() + ": registry manifest needs a 'tasks' list");
    for (auto it = doc.begin(); it != doc.end(); ++it)
        if (it.key() != "tasks") throw Error(path.string() + ": unknown key '" + it.key() + "'");

    static const std::array<std::string_view, 5> kKeys = {"name", "family", "path", "template", "target"};
    Registry reg;
    const auto base = path.parent_path();
    std::size_t i = 0;
    for (const auto& entry : doc.at("tasks")) {
        const auto where = path.string() + ": tasks[" + std::to_string(i++) + "]";
        if (!entry.is_object()) throw Error(where + ": not an object");
        for (auto it = entry.begin(); it != entry.end(); ++it)
            if (std::find(kKeys.begin(), kKeys.end(), it.key()) == kKeys.end())
                throw Error(where + ": unknown key '" + it.key() + "'");
        for (const char* k : {"name", "family", "path"})
            if (!entry.contains(k) || !entry.at(k).is_string())
                throw Error(where + ": missing string '" + k + "'");
        TaskSpec spec;
        spec.name = entry.at("name").get<std::string>();
        spec.family = parse_family(entry.at("family").get<std::string>());
        spec.format = parse_template(entry, spec.family, where);
        std::filesystem::path p = entry.at("path").get<std::string>();
        spec.source_path = p.is_absolute() ? p : base / p;
        reg.register_task(std::move(spec));
    }
    reg.load_all();
    return reg;
}

void write_registry_manifest(const std::filesystem::path& path, const Registry& registry) {
    json tasks = json::array();
    const auto base = path.parent_path();
    for (const auto& t : registry.tasks()) {
        json e;
        e["name"] = t.name;
        e["family"] = std::string(to_string(t.family));
        auto p = t.source_path;
        if (!base.empty() && p.is_absolute()) p = std::filesystem::relative(p, std::filesystem::absolute(base));
        e["path"] = p.generic_string();
        json tpl = json::array();
        for (const auto& f : t.format.inputs) tpl.push_back({f.label, f.field_key});
        e["template"] = tpl;
        e["target"] = t.format.target_key;
        tasks.push_back(e);
    }
    std::ofstream out(path);
    if (!out) throw Error(path.string() + ": cannot write registry manifest");
    out << json{{"tasks", tasks}}.dump(2) << '\n';
}

} // namespace mtlforge
