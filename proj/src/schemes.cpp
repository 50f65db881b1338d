#include "mtlforge/schemes.hpp"

#include "mtlforge/error.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <set>

namespace mtlforge {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

using i128 = __int128;

} // namespace

std::string_view to_string(SchemeKind k) {
    switch (k) {
    case SchemeKind::SEQUENTIAL: return "seq";
    case SchemeKind::SIMULTANEOUS: return "sim";
    case SchemeKind::CMTL: return "cmtl";
    }
    return "?";
}

std::string_view to_string(QueueOrder o) { return o == QueueOrder::ASCENDING ? "ascending" : "descending"; }

SchemeKind parse_scheme(std::string_view s) {
    const auto l = lower(s);
    if (l == "seq" || l == "sequential") return SchemeKind::SEQUENTIAL;
    if (l == "sim" || l == "simultaneous") return SchemeKind::SIMULTANEOUS;
    if (l == "cmtl" || l == "continual") return SchemeKind::CMTL;
    throw UsageError("unknown scheme '" + std::string(s) + "' (expected seq, sim or cmtl)");
}

QueueOrder parse_order(std::string_view s) {
    const auto l = lower(s);
    if (l == "ascending" || l == "asc") return QueueOrder::ASCENDING;
    if (l == "descending" || l == "desc") return QueueOrder::DESCENDING;
    throw UsageError("unknown queue order '" + std::string(s) + "' (expected ascending or descending)");
}

void SchemeConfig::validate() const {
    if (batch_size <= 0) throw Error("batch_size must be positive");
    if (budget_steps <= 0) throw Error("budget_steps must be positive");
    if (quantum <= 0) throw Error("quantum must be positive, got " + std::to_string(quantum));
    if (sequential_rounds <= 0) throw Error("sequential_rounds must be positive");
    if (kind == SchemeKind::CMTL && mixing != MixingStrategy::EQUAL)
        throw Error("cmtl schedules require equal mixing");
}

std::int64_t default_budget(std::size_t n_families) {
    return std::min<std::int64_t>(10000 * static_cast<std::int64_t>(n_families), 60000);
}

std::int64_t StagePlan::total_batches() const {
    std::int64_t n = 0;
    for (const auto& e : entries) n += e.n_batches;
    return n;
}

std::int64_t ScheduleManifest::total_batches() const {
    std::int64_t n = 0;
    for (const auto& s : stages) n += s.total_batches();
    return n;
}

std::map<std::string, std::int64_t> ScheduleManifest::batches_per_task() const {
    std::map<std::string, std::int64_t> out;
    for (const auto& s : stages)
        for (const auto& e : s.entries)
            if (e.task) out[*e.task] += e.n_batches;
    return out;
}

// ---------------------------------------------------------------------------
// Allocation

std::vector<std::int64_t> largest_remainder(std::span<const ExactWeight> weights, std::int64_t total) {
    const auto n = weights.size();
    std::vector<std::int64_t> counts(n, 0);
    if (n == 0) return counts;
    std::vector<i128> rem(n);
    i128 assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (weights[i].den <= 0 || weights[i].num < 0) throw Error("invalid weight for '" + weights[i].task + "'");
        const i128 q = static_cast<i128>(total) * weights[i].num;
        counts[i] = static_cast<std::int64_t>(q / weights[i].den);
        rem[i] = q % weights[i].den;
        assigned += counts[i];
    }
    const i128 left = total - assigned;
    if (left < 0 || left > static_cast<i128>(n)) throw Error("allocation weights do not sum to one");

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return rem[a] * weights[b].den > rem[b] * weights[a].den;
    });
    for (i128 k = 0; k < left; ++k) ++counts[idx[static_cast<std::size_t>(k)]];
    return counts;
}

std::int64_t minimum_budget(std::span<const ExactWeight> weights) {
    if (weights.empty()) return 0;
    // floor(B * w) >= 1 for every task once B >= ceil(1 / w_min).
    std::int64_t bound = 0;
    for (const auto& w : weights) {
        if (w.num <= 0) throw Error("task '" + w.task + "' has zero weight");
        bound = std::max(bound, (w.den + w.num - 1) / w.num);
    }
    for (auto b = static_cast<std::int64_t>(weights.size()); b < bound; ++b) {
        const auto c = largest_remainder(weights, b);
        if (std::all_of(c.begin(), c.end(), [](std::int64_t x) { return x >= 1; })) return b;
    }
    return std::max<std::int64_t>(bound, static_cast<std::int64_t>(weights.size()));
}

namespace {

std::vector<FamilyId> canonical_families(std::span<const FamilyId> families) {
    std::vector<FamilyId> out;
    for (auto f : kAllFamilies)
        if (std::find(families.begin(), families.end(), f) != families.end()) out.push_back(f);
    return out;
}

ScheduleManifest skeleton(const Registry& registry, std::span<const FamilyId> families,
                          const SchemeConfig& config) {
    ScheduleManifest m;
    m.config = config;
    m.families = canonical_families(families);
    m.provenance.seed = config.seed;
    m.provenance.registry_digest = registry.digest();
    return m;
}

std::vector<std::int64_t> allocate_budget(const std::vector<ExactWeight>& weights, std::int64_t budget) {
    auto counts = largest_remainder(weights, budget);
    if (std::any_of(counts.begin(), counts.end(), [](std::int64_t c) { return c < 1; }))
        throw Error("budget " + std::to_string(budget) + " is too small to give each of " +
                    std::to_string(weights.size()) + " tasks a batch; minimum budget is " +
                    std::to_string(minimum_budget(weights)));
    return counts;
}

} // namespace

// ---------------------------------------------------------------------------
// Builders

ScheduleManifest build_sequential(const Registry& registry, std::span<const FamilyId> families,
                                  const SchemeConfig& config) {
    if (config.kind != SchemeKind::SEQUENTIAL) throw Error("build_sequential needs a seq config");
    config.validate();
    auto m = skeleton(registry, families, config);
    const auto weights = exact_task_weights(families, registry, config.mixing);
    const auto counts = allocate_budget(weights, config.budget_steps);
    for (const auto& w : weights) m.distribution.entries.push_back({w.task, w.value()});

    const Rng order_rng = Rng(config.seed).split("sequential-order");
    const auto rounds = config.sequential_rounds;
    for (std::int64_t r = 0; r < rounds; ++r) {
        std::vector<std::size_t> order(weights.size());
        std::iota(order.begin(), order.end(), 0);
        Rng rng = rounds == 1 ? order_rng : order_rng.split(static_cast<std::uint64_t>(r));
        shuffle(std::span<std::size_t>(order), rng);
        StagePlan stage;
        stage.index = r + 1;
        for (auto i : order) {
            const auto share = counts[i] / rounds + (r < counts[i] % rounds ? 1 : 0);
            if (share > 0) stage.entries.push_back({weights[i].task, share});
        }
        if (!stage.entries.empty()) m.stages.push_back(std::move(stage));
    }
    return m;
}

ScheduleManifest build_simultaneous(const Registry& registry, std::span<const FamilyId> families,
                                    const SchemeConfig& config) {
    if (config.kind != SchemeKind::SIMULTANEOUS) throw Error("build_simultaneous needs a sim config");
    config.validate();
    auto m = skeleton(registry, families, config);
    const auto weights = exact_task_weights(families, registry, config.mixing);
    allocate_budget(weights, config.budget_steps);
    for (const auto& w : weights) m.distribution.entries.push_back({w.task, w.value()});
    m.stages.push_back({1, {{std::nullopt, config.budget_steps}}});
    return m;
}

std::vector<std::vector<std::string>> cmtl_queue_trace(std::span<const std::string> ordered_tasks) {
    std::vector<std::vector<std::string>> trace;
    std::vector<std::string> queue;
    for (const auto& t : ordered_tasks) {
        // The newly introduced task trains first in its stage, then moves to
        // the back of the queue for the next stage.
        queue.push_back(t);
        trace.push_back(queue);
    }
    return trace;
}

ScheduleManifest build_cmtl(const Registry& registry, std::span<const std::string> ordered_tasks,
                            const SchemeConfig& config) {
    if (config.kind != SchemeKind::CMTL) throw Error("build_cmtl needs a cmtl config");
    config.validate();
    if (ordered_tasks.empty()) throw Error("cmtl needs at least one task");

    std::set<std::string> seen;
    std::vector<FamilyId> fams;
    for (const auto& t : ordered_tasks) {
        if (!seen.insert(t).second) throw Error("task '" + t + "' appears twice in the cmtl order");
        const auto& spec = registry.task(t);
        if (spec.size == 0) throw Error("task '" + t + "' has no examples");
        fams.push_back(spec.family);
    }
    auto m = skeleton(registry, fams, config);

    // Snapshot: equal between the families present, equal within them.
    for (auto f : m.families) {
        std::size_t n_in = 0;
        for (const auto& t : ordered_tasks) n_in += registry.task(t).family == f;
        for (const auto& t : ordered_tasks)
            if (registry.task(t).family == f)
                m.distribution.entries.push_back(
                    {t, 1.0 / (static_cast<double>(m.families.size()) * static_cast<double>(n_in))});
    }

    const auto trace = cmtl_queue_trace(ordered_tasks);
    const auto q = config.quantum;
    for (std::size_t t = 1; t <= ordered_tasks.size(); ++t) {
        StagePlan stage;
        stage.index = static_cast<std::int64_t>(t);
        // Queue before this stage is trace[t-2]; the new task goes first.
        stage.entries.push_back({ordered_tasks[t - 1], q * static_cast<std::int64_t>(t)});
        if (t > 1) {
            const auto& prior = trace[t - 2];
            if (config.order == QueueOrder::ASCENDING)
                for (const auto& name : prior) stage.entries.push_back({name, q});
            else
                for (auto it = prior.rbegin(); it != prior.rend(); ++it) stage.entries.push_back({*it, q});
        }
        m.stages.push_back(std::move(stage));
    }
    return m;
}

ScheduleManifest build_schedule(const Registry& registry, std::span<const FamilyId> families,
                                const SchemeConfig& config) {
    switch (config.kind) {
    case SchemeKind::SEQUENTIAL: return build_sequential(registry, families, config);
    case SchemeKind::SIMULTANEOUS: return build_simultaneous(registry, families, config);
    case SchemeKind::CMTL: {
        if (families.empty()) throw Error("cmtl needs at least one family");
        for (auto f : families)
            if (registry.tasks_in(f).empty())
                throw Error("family " + std::string(to_string(f)) + " has no registered tasks");
        const auto tasks = registry.task_names_for(families);
        return build_cmtl(registry, tasks, config);
    }
    }
    throw Error("unknown scheme");
}

// ---------------------------------------------------------------------------
// BatchStream

BatchStream::BatchStream(ScheduleManifest manifest, const Registry& registry, Rng base,
                         MaterializeOptions options)
    : manifest_(std::move(manifest)), registry_(&registry), base_(base), options_(options) {
    const auto actual = registry.digest();
    if (manifest_.provenance.registry_digest != actual)
        throw Error("manifest was built against registry " + manifest_.provenance.registry_digest +
                    " but the loaded registry is " + actual);
    if (manifest_.config.batch_size <= 0) throw Error("manifest batch_size must be positive");
    bool pooled = false;
    for (const auto& stage : manifest_.stages)
        for (const auto& e : stage.entries) {
            if (e.n_batches < 0) throw Error("manifest entry with negative batch count");
            if (e.task) {
                if (registry.examples(*e.task).empty())
                    throw Error("task '" + *e.task + "' has no examples to materialize");
            } else {
                pooled = true;
            }
            segments_.push_back({stage.index, e.task, e.n_batches, total_});
            total_ += e.n_batches;
        }
    if (pooled)
        for (const auto& d : manifest_.distribution.entries)
            if (d.probability > 0.0 && registry.examples(d.task).empty())
                throw Error("task '" + d.task + "' has no examples to materialize");
    choice_seed_ = base_.split("pooled-choice").seed();
}

BatchStream::BatchStream(ScheduleManifest manifest, const Registry& registry)
    : BatchStream(manifest, registry, Rng(manifest.config.seed)) {}

std::size_t BatchStream::segment_of(std::int64_t global_batch) const {
    auto it = std::upper_bound(segments_.begin(), segments_.end(), global_batch,
                               [](std::int64_t b, const Segment& s) { return b < s.first_batch; });
    // The last segment starting at or before the batch is never empty while
    // the batch is inside the stream.
    return static_cast<std::size_t>(it - segments_.begin()) - 1;
}

std::string BatchStream::pooled_task(std::int64_t slot) const {
    Rng r(choice_seed_, static_cast<std::uint64_t>(slot));
    return manifest_.distribution.entries[manifest_.distribution.pick(r)].task;
}

TextPair BatchStream::take(const std::string& task) {
    const auto& examples = registry_->examples(task);
    const auto n = static_cast<std::int64_t>(examples.size());
    const auto p = consumed_[task]++;
    const auto epoch = p / n;
    auto& cache = epochs_[task];
    if (cache.epoch != epoch) {
        cache.order.resize(examples.size());
        std::iota(cache.order.begin(), cache.order.end(), std::size_t{0});
        Rng rng = base_.split("examples:" + task).split(static_cast<std::uint64_t>(epoch));
        shuffle(std::span<std::size_t>(cache.order), rng);
        cache.epoch = epoch;
    }
    const auto& spec = registry_->task(task);
    auto pair = format_example(examples[cache.order[static_cast<std::size_t>(p % n)]], spec.format, task);
    if (options_.truncation) pair = truncate_pair(pair, *options_.truncation);
    return pair;
}

std::optional<Batch> BatchStream::next() {
    if (position_ >= total_) return std::nullopt;
    const auto& seg = segments_[segment_of(position_)];
    const auto bs = manifest_.config.batch_size;
    Batch batch;
    batch.stage_index = seg.stage_index;
    batch.examples.reserve(static_cast<std::size_t>(bs));
    for (std::int64_t j = 0; j < bs; ++j) {
        const auto task = seg.task ? *seg.task : pooled_task(position_ * bs + j);
        batch.examples.push_back(take(task));
    }
    const auto& first = batch.examples.front().task_name;
    batch.homogeneous = std::all_of(batch.examples.begin(), batch.examples.end(),
                                    [&](const TextPair& p) { return p.task_name == first; });
    if (batch.homogeneous) batch.task_name = first;
    ++position_;
    return batch;
}

void BatchStream::seek(std::int64_t global_batch) {
    if (global_batch < 0 || global_batch > total_)
        throw Error("seek position " + std::to_string(global_batch) + " outside stream of " +
                    std::to_string(total_) + " batches");
    consumed_.clear();
    const auto bs = manifest_.config.batch_size;
    for (const auto& seg : segments_) {
        if (seg.first_batch >= global_batch) break;
        const auto upto = std::min(seg.first_batch + seg.n_batches, global_batch);
        if (seg.task) {
            consumed_[*seg.task] += (upto - seg.first_batch) * bs;
        } else {
            for (auto slot = seg.first_batch * bs; slot < upto * bs; ++slot) ++consumed_[pooled_task(slot)];
        }
    }
    position_ = global_batch;
}

void BatchStream::seek(std::int64_t stage, std::int64_t batch) {
    std::int64_t start = -1;
    std::int64_t size = 0;
    for (const auto& seg : segments_) {
        if (seg.stage_index != stage) continue;
        if (start < 0) start = seg.first_batch;
        size += seg.n_batches;
    }
    if (start < 0) throw Error("manifest has no stage " + std::to_string(stage));
    if (batch < 0 || batch > size)
        throw Error("stage " + std::to_string(stage) + " has " + std::to_string(size) + " batches");
    seek(start + batch);
}

std::vector<Batch> materialize(const ScheduleManifest& manifest, const Registry& registry, Rng base) {
    BatchStream stream(manifest, registry, base);
    std::vector<Batch> out;
    while (auto b = stream.next()) out.push_back(std::move(*b));
    return out;
}

std::vector<Batch> materialize(const ScheduleManifest& manifest, const Registry& registry) {
    return materialize(manifest, registry, Rng(manifest.config.seed));
}

} // namespace mtlforge
