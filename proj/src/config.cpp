#include "mtlforge/config.hpp"

#include "mtlforge/error.hpp"

#include <json.hpp>

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace mtlforge {

using json = nlohmann::json;

std::string Hyperparameters::canonical_json() const {
    json j = {{"optimizer", optimizer},
              {"learning_rate", learning_rate},
              {"adam_beta1", adam_beta1},
              {"adam_beta2", adam_beta2},
              {"adam_epsilon", adam_epsilon},
              {"lr_scheduler", lr_scheduler},
              {"dropout", dropout},
              {"weight_decay", weight_decay},
              {"warmup_steps", warmup_steps},
              {"batch_size", batch_size},
              {"epochs", epochs},
              {"fp16", fp16},
              {"max_source_length", max_source_length},
              {"max_target_length", max_target_length},
              {"finetune_max_source_length", finetune_max_source_length},
              {"finetune_max_target_length", finetune_max_target_length}};
    return j.dump();
}

namespace {

template <typename T>
T typed(const json& v, const std::string& key) {
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw UsageError("config key '" + key + "' has the wrong type");
    }
}

std::int64_t positive(const json& v, const std::string& key) {
    const auto n = typed<std::int64_t>(v, key);
    if (n <= 0) throw UsageError("config key '" + key + "' must be positive");
    return n;
}

std::vector<std::string> string_list(const json& v, const std::string& key) {
    if (v.is_string()) {
        std::vector<std::string> out;
        std::stringstream ss(v.get<std::string>());
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) out.push_back(item);
        return out;
    }
    return typed<std::vector<std::string>>(v, key);
}

} // namespace

Hyperparameters Hyperparameters::from_json(std::string_view text) { return from_json(text, Hyperparameters{}); }

Hyperparameters Hyperparameters::from_json(std::string_view text, const Hyperparameters& base) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw UsageError(std::string("malformed hyperparameters: ") + e.what());
    }
    if (!j.is_object()) throw UsageError("hyperparameters must be a JSON object");
    Hyperparameters h = base;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        const auto name = "hyperparameters." + k;
        const auto& v = it.value();
        if (k == "optimizer") h.optimizer = typed<std::string>(v, name);
        else if (k == "learning_rate") h.learning_rate = typed<double>(v, name);
        else if (k == "adam_beta1") h.adam_beta1 = typed<double>(v, name);
        else if (k == "adam_beta2") h.adam_beta2 = typed<double>(v, name);
        else if (k == "adam_epsilon") h.adam_epsilon = typed<double>(v, name);
        else if (k == "lr_scheduler") h.lr_scheduler = typed<std::string>(v, name);
        else if (k == "dropout") h.dropout = typed<double>(v, name);
        else if (k == "weight_decay") h.weight_decay = typed<double>(v, name);
        else if (k == "warmup_steps") h.warmup_steps = typed<std::int64_t>(v, name);
        else if (k == "batch_size") h.batch_size = positive(v, name);
        else if (k == "epochs") h.epochs = positive(v, name);
        else if (k == "fp16") h.fp16 = typed<bool>(v, name);
        else if (k == "max_source_length") h.max_source_length = positive(v, name);
        else if (k == "max_target_length") h.max_target_length = positive(v, name);
        else if (k == "finetune_max_source_length") h.finetune_max_source_length = positive(v, name);
        else if (k == "finetune_max_target_length") h.finetune_max_target_length = positive(v, name);
        else throw UsageError("unknown config key '" + name + "'");
    }
    return h;
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"registry", "registry manifest path; empty uses the built-in synthetic registry"},
        {"synthetic_size", "base example count per synthetic task (default 16)"},
        {"rq", "research question: rq1, rq2, rq3 or rq4 (default rq1)"},
        {"schemes", "schemes to plan: list of seq, sim, cmtl (default all)"},
        {"mixing", "within-family mixing for seq and sim: proportional or equal (cmtl is always equal)"},
        {"budget", "pre-finetuning batches for seq and sim (default 10000 per family, at most 60000)"},
        {"quantum", "cmtl batches per stage unit (default 500)"},
        {"order", "cmtl queue order: ascending or descending (default ascending)"},
        {"sequential_rounds", "seq rounds; each round is a fresh permutation of task blocks (default 1)"},
        {"seed", "master seed (default: MTLFORGE_SEED, else 0)"},
        {"downstream", "downstream dataset names (default reddit_tifu)"},
        {"eval_set", "scored pairs, one {\"id\",\"input\",\"target\"} object per line; synthetic when empty"},
        {"finetune_set", "finetuning pairs in the eval_set format; required with eval_set"},
        {"eval_size", "synthetic downstream test pairs (default 16)"},
        {"finetune_size", "synthetic downstream train pairs (default 32)"},
        {"trainer", "lead-<n> or process:<command> (default lead-1)"},
        {"jobs", "plans run concurrently (default 1)"},
        {"out", "output directory (default mtlforge-out)"},
        {"embeddings", "token vector table (JSON object) enabling BERTScore"},
        {"record_wall_time", "store wall_time in the run log; logs are then not byte-reproducible"},
        {"hyperparameters", "object passed to trainers: optimizer AdamW, learning_rate 5e-05, adam_beta1 0.9, "
                            "adam_beta2 0.999, adam_epsilon 1e-08, lr_scheduler linear, dropout 0.1, "
                            "weight_decay 0.0, warmup_steps 0, batch_size 8, epochs 3, fp16 true, "
                            "max_source_length 512, max_target_length 128, finetune_max_source_length 1024, "
                            "finetune_max_target_length 512"},
    };
    return keys;
}

PlanOptions Config::plan_options() const {
    PlanOptions o;
    o.schemes = schemes;
    o.mixing = mixing;
    o.downstream = downstream;
    o.seed = seed;
    o.budget = budget;
    o.quantum = quantum;
    o.order = order;
    o.batch_size = hparams.batch_size;
    o.sequential_rounds = sequential_rounds;
    return o;
}

std::string Config::to_json() const {
    json sch = json::array();
    for (auto s : schemes) sch.push_back(std::string(to_string(s)));
    json j = {{"registry", registry.string()},
              {"synthetic_size", synthetic_size},
              {"rq", std::string(to_string(rq))},
              {"schemes", sch},
              {"mixing", std::string(to_string(mixing))},
              {"budget", budget ? json(*budget) : json(nullptr)},
              {"quantum", quantum},
              {"order", std::string(to_string(order))},
              {"sequential_rounds", sequential_rounds},
              {"seed", seed},
              {"downstream", downstream},
              {"eval_set", eval_set.string()},
              {"finetune_set", finetune_set.string()},
              {"eval_size", eval_size},
              {"finetune_size", finetune_size},
              {"trainer", trainer},
              {"jobs", jobs},
              {"out", out.string()},
              {"embeddings", embeddings.string()},
              {"record_wall_time", record_wall_time},
              {"hyperparameters", json::parse(hparams.canonical_json())}};
    return j.dump(2) + '\n';
}

Config apply_config_json(std::string_view text, Config c, std::string_view source) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw UsageError(std::string(source) + ": malformed config: " + e.what());
    }
    if (!j.is_object()) throw UsageError(std::string(source) + ": config must be a JSON object");
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const auto& k = it.key();
            const auto& v = it.value();
            if (k == "registry") c.registry = typed<std::string>(v, k);
            else if (k == "synthetic_size") c.synthetic_size = static_cast<std::size_t>(positive(v, k));
            else if (k == "rq") c.rq = parse_rq(typed<std::string>(v, k));
            else if (k == "schemes") {
                c.schemes.clear();
                for (const auto& s : string_list(v, k)) c.schemes.push_back(parse_scheme(s));
                if (c.schemes.empty()) throw UsageError("config key 'schemes' is empty");
            } else if (k == "mixing") c.mixing = parse_mixing(typed<std::string>(v, k));
            else if (k == "budget") c.budget = v.is_null() ? std::nullopt : std::optional(positive(v, k));
            else if (k == "quantum") c.quantum = positive(v, k);
            else if (k == "order") c.order = parse_order(typed<std::string>(v, k));
            else if (k == "sequential_rounds") c.sequential_rounds = positive(v, k);
            else if (k == "seed") c.seed = typed<std::uint64_t>(v, k);
            else if (k == "downstream") {
                c.downstream = string_list(v, k);
                if (c.downstream.empty()) throw UsageError("config key 'downstream' is empty");
            } else if (k == "eval_set") c.eval_set = typed<std::string>(v, k);
            else if (k == "finetune_set") c.finetune_set = typed<std::string>(v, k);
            else if (k == "eval_size") c.eval_size = static_cast<std::size_t>(positive(v, k));
            else if (k == "finetune_size") c.finetune_size = static_cast<std::size_t>(positive(v, k));
            else if (k == "trainer") c.trainer = typed<std::string>(v, k);
            else if (k == "jobs") c.jobs = static_cast<std::size_t>(positive(v, k));
            else if (k == "out") c.out = typed<std::string>(v, k);
            else if (k == "embeddings") c.embeddings = typed<std::string>(v, k);
            else if (k == "record_wall_time") c.record_wall_time = typed<bool>(v, k);
            else if (k == "hyperparameters") c.hparams = Hyperparameters::from_json(v.dump(), c.hparams);
            else throw UsageError("unknown config key '" + k + "'");
        }
    } catch (const UsageError& e) {
        throw UsageError(std::string(source) + ": " + e.what());
    }
    return c;
}

Config load_config(const std::filesystem::path& path, Config base) {
    std::ifstream in(path);
    if (!in) throw UsageError(path.string() + ": cannot open config file");
    std::stringstream ss;
    ss << in.rdbuf();
    return apply_config_json(ss.str(), std::move(base), path.string());
}

std::optional<std::uint64_t> seed_from_env() {
    const char* v = std::getenv("MTLFORGE_SEED");
    if (v == nullptr || *v == '\0') return std::nullopt;
    char* end = nullptr;
    errno = 0;
    const auto n = std::strtoull(v, &end, 10);
    if (*end != '\0' || errno != 0 || *v == '-') throw UsageError("MTLFORGE_SEED must be a non-negative integer");
    return n;
}

} // namespace mtlforge
