#pragma once

#include "mtlforge/experiments.hpp"
#include "mtlforge/hparams.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mtlforge {

// Effective settings of one CLI invocation. Built from defaults, then the
// JSON config file, then flags.
struct Config {
    std::filesystem::path registry;      // registry manifest; empty selects the synthetic registry
    std::size_t synthetic_size = 16;     // base task size of the synthetic registry
    RqTag rq = RqTag::RQ1;
    std::vector<SchemeKind> schemes = {SchemeKind::SEQUENTIAL, SchemeKind::SIMULTANEOUS, SchemeKind::CMTL};
    MixingStrategy mixing = MixingStrategy::PROPORTIONAL;
    std::optional<std::int64_t> budget;  // default_budget(|families|) when unset
    std::int64_t quantum = 500;
    QueueOrder order = QueueOrder::ASCENDING;
    std::int64_t sequential_rounds = 1;
    std::uint64_t seed = 0;
    std::vector<std::string> downstream = {std::string(kDefaultDownstream)};
    std::filesystem::path eval_set;      // {"id","input","target"} lines; synthetic when empty
    std::filesystem::path finetune_set;  // required with eval_set
    std::size_t eval_size = 16;          // synthetic downstream test pairs
    std::size_t finetune_size = 32;      // synthetic downstream train pairs
    std::string trainer = "lead-1";      // "lead-<n>" or "process:<command>"
    std::size_t jobs = 1;
    std::filesystem::path out = "mtlforge-out";
    std::filesystem::path embeddings;    // token vector table enabling BERTScore
    bool record_wall_time = false;
    Hyperparameters hparams;

    PlanOptions plan_options() const;
    /// Canonical JSON of every key, for recording next to outputs.
    std::string to_json() const;
};

struct ConfigKey {
    std::string name;
    std::string help;
};

/// Every accepted config file key, in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Applies a JSON object to `base`. Unknown keys and ill-typed values throw
/// UsageError naming the key.
Config apply_config_json(std::string_view text, Config base, std::string_view source = "config");
Config load_config(const std::filesystem::path& path, Config base = {});

/// MTLFORGE_SEED when set and numeric.
std::optional<std::uint64_t> seed_from_env();

} // namespace mtlforge
