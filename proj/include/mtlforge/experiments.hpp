#pragma once

#include "mtlforge/hparams.hpp"
#include "mtlforge/manifest_io.hpp"
#include "mtlforge/metrics.hpp"
#include "mtlforge/registry.hpp"
#include "mtlforge/schemes.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mtlforge {

enum class RqTag { RQ1, RQ2, RQ3, RQ4, CUSTOM };

std::string_view to_string(RqTag t); // "rq1" .. "rq4", "custom"
/// Case-insensitive; throws UsageError on anything else.
RqTag parse_rq(std::string_view s);

/// Families sorted in enum order, duplicates removed.
std::vector<FamilyId> canonical_families(std::span<const FamilyId> families);
/// "SUM" first when present, then the rest in enum order joined by "+";
/// all six is "ALL".
std::string combination_label(std::span<const FamilyId> families);
/// Inverse of combination_label; also accepts symbolic names ("RC_PLUS").
std::vector<FamilyId> parse_combination(std::string_view label);

inline constexpr std::string_view kDefaultDownstream = "reddit_tifu";

struct ExperimentPlan {
    std::vector<FamilyId> families; // canonical order
    SchemeConfig scheme;
    std::string downstream{kDefaultDownstream};
    std::uint64_t seed = 0;
    RqTag rq = RqTag::CUSTOM;

    /// Non-empty families, cMTL with EQUAL mixing, scheme seed equal to seed.
    void validate() const;
    /// File-name safe, e.g. "rq3-cls+rc_plus-seq-reddit_tifu".
    std::string id() const;
    std::string serialize() const;
    static ExperimentPlan parse(std::string_view text);
    bool operator==(const ExperimentPlan&) const = default;
};

struct PlanOptions {
    std::vector<SchemeKind> schemes = {SchemeKind::SEQUENTIAL, SchemeKind::SIMULTANEOUS, SchemeKind::CMTL};
    MixingStrategy mixing = MixingStrategy::PROPORTIONAL; // seq and sim; cMTL is always EQUAL
    std::vector<std::string> downstream = {std::string(kDefaultDownstream)};
    std::uint64_t seed = 0;
    std::optional<std::int64_t> budget; // default_budget(|families|) when unset
    std::int64_t quantum = 500;
    QueueOrder order = QueueOrder::ASCENDING;
    std::int64_t batch_size = 8;
    std::int64_t sequential_rounds = 1;
};

/// Family combinations of one research question in table row order.
std::vector<std::vector<FamilyId>> rq_combinations(RqTag rq);

/// Combinations crossed with schemes and downstream datasets, combination
/// major. Requires every family to have at least one registered task.
std::vector<ExperimentPlan> plan_rq(RqTag rq, const Registry& registry, const PlanOptions& options = {});

// ---------------------------------------------------------------------------
// Downstream data

struct EvalPair {
    std::string id;
    std::string input;
    std::string target;
    bool operator==(const EvalPair&) const = default;
};

struct DownstreamData {
    std::string name;
    std::vector<EvalPair> train; // finetuning split
    std::vector<EvalPair> test;  // scored split
};

/// Synthetic documents whose reference summary is the first sentence.
DownstreamData synth_downstream(std::string_view name, std::size_t n_train, std::size_t n_test, std::uint64_t seed);

/// Line-delimited {"id","input","target"} records.
std::vector<EvalPair> load_eval_pairs(const std::filesystem::path& path);
void write_eval_pairs(const std::filesystem::path& path, std::span<const EvalPair> pairs);

/// Sequential single-task manifest over the train split for `epochs` passes.
/// The returned registry holds the split as one SUM task named data.name.
struct FinetunePlan {
    Registry registry;
    ScheduleManifest manifest;
};
FinetunePlan build_finetune(const DownstreamData& data, const Hyperparameters& hparams, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Trainers

enum class TrainPhase { PREFINETUNE, FINETUNE };
std::string_view to_string(TrainPhase p);

class Trainer {
public:
    virtual ~Trainer() = default;
    virtual std::string id() const = 0;
    virtual void begin(TrainPhase phase, const StreamHeader& header) = 0;
    virtual void consume(const Batch& batch) = 0;
    virtual void end(TrainPhase phase) = 0;
    /// One prediction per input, same order.
    virtual std::vector<std::string> predict(std::span<const std::string> inputs) = 0;
    virtual std::int64_t batches_seen(TrainPhase phase) const = 0;
};

using TrainerFactory = std::function<std::unique_ptr<Trainer>()>;

/// First n sentences of the text; a sentence ends at '.', '!' or '?'
/// followed by whitespace or the end of text.
std::string lead_sentences(std::string_view text, std::size_t n);

/// Counts batches and predicts the first n sentences of each input.
std::unique_ptr<Trainer> lead_n_trainer(std::size_t n);

// External trainer. consume() writes the wire stream of each phase to
// <workdir>/<phase>.jsonl; predict() writes <workdir>/eval.jsonl
// ({"id","input"} per line) and <workdir>/hparams.json and runs
//
//   <command> --in prefinetune.jsonl --finetune finetune.jsonl
//             --eval eval.jsonl --out predictions.jsonl --hparams hparams.json
//
// then reads {"id","prediction"} lines back in input order.
class ProcessTrainer : public Trainer {
public:
    ProcessTrainer(std::string command, std::filesystem::path workdir, Hyperparameters hparams = {});

    std::string id() const override;
    void begin(TrainPhase phase, const StreamHeader& header) override;
    void consume(const Batch& batch) override;
    void end(TrainPhase phase) override;
    std::vector<std::string> predict(std::span<const std::string> inputs) override;
    std::int64_t batches_seen(TrainPhase phase) const override;

private:
    std::filesystem::path stream_path(TrainPhase phase) const;

    std::string command_;
    std::filesystem::path workdir_;
    Hyperparameters hparams_;
    std::unique_ptr<std::ofstream> out_;
    TrainPhase phase_open_ = TrainPhase::PREFINETUNE;
    std::int64_t seen_[2] = {0, 0};
};

/// Parses prediction lines, enforcing count and id order.
std::vector<std::string> read_predictions(std::istream& in, std::span<const std::string> expected_ids,
                                          std::string_view source);

// ---------------------------------------------------------------------------
// Runs

struct RunRecord {
    ExperimentPlan plan;
    MetricReport report;
    double wall_time = 0.0; // seconds
    std::string manifest_digest;
    std::string finetune_digest;
    std::string registry_digest;
    std::string trainer_id;
    std::int64_t batches = 0; // pre-finetuning batches the trainer consumed
    bool is_baseline = false;

    const std::string& dataset() const { return plan.downstream; }
    bool operator==(const RunRecord&) const = default;
};

/// JSON object; wall_time is included only when asked so that logs of
/// identical runs are byte-identical.
std::string record_to_json(const RunRecord& record, bool include_wall_time);
/// {"bertscore","bleu","meteor","rouge1","rouge2","rougeL"}; bertscore may be null.
std::string report_to_json_text(const MetricReport& report);
RunRecord record_from_json(std::string_view text);

struct RunOptions {
    Hyperparameters hparams;
    const Embedder* embedder = nullptr;
};

/// Schedule, stream, finetune, predict and score one plan.
RunRecord run_experiment(const ExperimentPlan& plan, Trainer& trainer, const Registry& registry,
                         const DownstreamData& data, const RunOptions& options = {});

/// Scores the untrained trainer on the test split; marked as baseline.
RunRecord run_baseline(const DownstreamData& data, Trainer& trainer, const RunOptions& options = {});

// Append-only run log. Each line is
//   {"digest":"...","prev":"...","record":{...}}
// where digest = sha256(prev + record) and prev is the previous line's digest
// (empty for the first line). The chain is verified before every append, so
// an edited or truncated history is detected instead of extended.
class RunLog {
public:
    explicit RunLog(std::filesystem::path path, bool record_wall_time = false);

    void append(const RunRecord& record);
    std::vector<RunRecord> read() const;
    /// Throws naming the first bad line.
    void verify() const;
    const std::filesystem::path& path() const { return path_; }

private:
    std::string last_digest() const;

    std::filesystem::path path_;
    bool record_wall_time_;
    mutable std::mutex mutex_;
};

/// Runs every plan with its own trainer, at most `jobs` at a time, and returns
/// records in plan order.
std::vector<RunRecord> run_all(std::span<const ExperimentPlan> plans, const TrainerFactory& factory,
                               const Registry& registry, std::span<const DownstreamData> data,
                               const RunOptions& options, std::size_t jobs);

} // namespace mtlforge
