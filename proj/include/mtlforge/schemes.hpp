#pragma once

#include "mtlforge/mixing.hpp"
#include "mtlforge/registry.hpp"
#include "mtlforge/rng.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mtlforge {

enum class SchemeKind { SEQUENTIAL, SIMULTANEOUS, CMTL };
enum class QueueOrder { ASCENDING, DESCENDING };

std::string_view to_string(SchemeKind k);  // "seq", "sim", "cmtl"
std::string_view to_string(QueueOrder o);  // "ascending", "descending"
SchemeKind parse_scheme(std::string_view s);
QueueOrder parse_order(std::string_view s);

struct SchemeConfig {
    SchemeKind kind = SchemeKind::SEQUENTIAL;
    MixingStrategy mixing = MixingStrategy::PROPORTIONAL;
    std::int64_t batch_size = 8;
    std::int64_t budget_steps = 60000;
    std::int64_t quantum = 500;               // cMTL only
    QueueOrder order = QueueOrder::ASCENDING; // cMTL only
    std::uint64_t seed = 0;
    // Sequential only: 1 runs a single random permutation of task blocks over
    // the whole budget; k > 1 splits every task's allotment into k rounds,
    // each round a fresh permutation.
    std::int64_t sequential_rounds = 1;

    /// Throws on non-positive sizes and on cMTL without EQUAL mixing.
    void validate() const;
    bool operator==(const SchemeConfig&) const = default;
};

/// Pre-finetuning steps for sequential and simultaneous runs: 10k per family,
/// capped at 60k.
std::int64_t default_budget(std::size_t n_families);

struct StageEntry {
    std::optional<std::string> task; // nullopt: every example slot is a pooled draw
    std::int64_t n_batches = 0;
    bool operator==(const StageEntry&) const = default;
};

struct StagePlan {
    std::int64_t index = 1;
    std::vector<StageEntry> entries;
    std::int64_t total_batches() const;
    bool operator==(const StagePlan&) const = default;
};

struct Provenance {
    std::uint64_t seed = 0;
    std::string registry_digest;
    std::string rng_algorithm{Rng::kAlgorithm};
    bool operator==(const Provenance&) const = default;
};

struct ScheduleManifest {
    SchemeConfig config;
    std::vector<FamilyId> families;
    std::vector<StagePlan> stages;
    SamplingDistribution distribution;
    Provenance provenance;

    std::int64_t total_batches() const;
    /// Batches per named task over all stages; pooled entries are not counted.
    std::map<std::string, std::int64_t> batches_per_task() const;

    std::string serialize() const;
    static ScheduleManifest parse(std::string_view text);
    /// SHA-256 of serialize().
    std::string digest() const;
    bool operator==(const ScheduleManifest&) const = default;
};

/// Hamilton apportionment of `total` over exact weights summing to 1.
/// Remainders are compared exactly; ties go to the lower index.
std::vector<std::int64_t> largest_remainder(std::span<const ExactWeight> weights, std::int64_t total);

/// Smallest budget whose largest-remainder allocation gives every task at
/// least one batch.
std::int64_t minimum_budget(std::span<const ExactWeight> weights);

ScheduleManifest build_sequential(const Registry& registry, std::span<const FamilyId> families,
                                  const SchemeConfig& config);
ScheduleManifest build_simultaneous(const Registry& registry, std::span<const FamilyId> families,
                                    const SchemeConfig& config);
/// Stage t introduces ordered_tasks[t-1] with quantum * t batches; every
/// earlier task replays with quantum batches. ASCENDING runs the new task
/// first and then the queue oldest to newest; DESCENDING runs it first and
/// then newest to oldest.
ScheduleManifest build_cmtl(const Registry& registry, std::span<const std::string> ordered_tasks,
                            const SchemeConfig& config);

/// Dispatches on config.kind. cMTL uses the selected families' tasks grouped
/// family by family.
ScheduleManifest build_schedule(const Registry& registry, std::span<const FamilyId> families,
                                const SchemeConfig& config);

/// Queue of introduced tasks after each stage: after stage t it is
/// (task_1, ..., task_t) with task_t last.
std::vector<std::vector<std::string>> cmtl_queue_trace(std::span<const std::string> ordered_tasks);

// ---------------------------------------------------------------------------
// Materialization

struct Batch {
    std::vector<TextPair> examples;
    std::optional<std::string> task_name; // set iff homogeneous
    std::int64_t stage_index = 1;
    bool homogeneous = true;
    bool operator==(const Batch&) const = default;
};

struct MaterializeOptions {
    std::optional<TruncationLimits> truncation; // whitespace tokens
};

// Example-level stream over a manifest. Within a task, examples are served
// in epochs: a seeded permutation of all examples, reshuffled each epoch.
// The stream is a pure function of (manifest, registry, base rng), so
// seek() to any batch reproduces the uninterrupted suffix exactly.
class BatchStream {
public:
    BatchStream(ScheduleManifest manifest, const Registry& registry, Rng base,
                MaterializeOptions options = {});
    /// Uses Rng(manifest.config.seed).
    BatchStream(ScheduleManifest manifest, const Registry& registry);

    std::optional<Batch> next();
    void seek(std::int64_t global_batch);
    /// stage is the 1-based stage index, batch 0-based within the stage.
    void seek(std::int64_t stage, std::int64_t batch);

    std::int64_t position() const { return position_; }
    std::int64_t total() const { return total_; }
    const ScheduleManifest& manifest() const { return manifest_; }

private:
    struct Segment {
        std::int64_t stage_index;
        std::optional<std::string> task;
        std::int64_t n_batches;
        std::int64_t first_batch;
    };
    struct EpochCache {
        std::int64_t epoch = -1;
        std::vector<std::size_t> order;
    };

    std::size_t segment_of(std::int64_t global_batch) const;
    std::string pooled_task(std::int64_t slot) const;
    TextPair take(const std::string& task);

    ScheduleManifest manifest_;
    const Registry* registry_;
    Rng base_;
    MaterializeOptions options_;
    std::vector<Segment> segments_;
    std::int64_t total_ = 0;
    std::int64_t position_ = 0;
    std::uint64_t choice_seed_ = 0;
    std::unordered_map<std::string, std::int64_t> consumed_;
    std::unordered_map<std::string, EpochCache> epochs_;
};

/// Drains a fresh stream.
std::vector<Batch> materialize(const ScheduleManifest& manifest, const Registry& registry, Rng base);
std::vector<Batch> materialize(const ScheduleManifest& manifest, const Registry& registry);

} // namespace mtlforge
