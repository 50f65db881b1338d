#include "mtlforge/mixing.hpp"

#include "mtlforge/error.hpp"

#include <algorithm>
#include <cctype>

namespace mtlforge {

std::string_view to_string(MixingStrategy m) {
    return m == MixingStrategy::PROPORTIONAL ? "proportional" : "equal";
}

MixingStrategy parse_mixing(std::string_view s) {
    std::string l(s);
    for (auto& c : l) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (l == "proportional" || l == "prop") return MixingStrategy::PROPORTIONAL;
    if (l == "equal") return MixingStrategy::EQUAL;
    throw UsageError("unknown mixing strategy '" + std::string(s) + "' (expected proportional or equal)");
}

std::size_t SamplingDistribution::pick(Rng& rng) const {
    if (entries.empty()) throw Error("cannot draw from an empty distribution");
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        acc += entries[i].probability;
        if (u < acc) return i;
    }
    // u fell into the rounding slack above the accumulated sum.
    for (std::size_t i = entries.size(); i-- > 0;)
        if (entries[i].probability > 0.0) return i;
    return entries.size() - 1;
}

double SamplingDistribution::probability_of(std::string_view task) const {
    for (const auto& e : entries)
        if (e.task == task) return e.probability;
    return 0.0;
}

std::vector<ExactWeight> exact_task_weights(std::span<const FamilyId> families, const Registry& registry,
                                            MixingStrategy within) {
    if (families.empty()) throw Error("task distribution needs at least one family");
    std::vector<FamilyId> selected;
    for (auto f : kAllFamilies)
        if (std::find(families.begin(), families.end(), f) != families.end()) selected.push_back(f);
    const auto n_families = static_cast<std::int64_t>(selected.size());

    std::vector<ExactWeight> out;
    for (auto f : selected) {
        const auto tasks = registry.tasks_in(f);
        if (tasks.empty())
            throw Error("family " + std::string(to_string(f)) + " has no registered tasks");
        std::int64_t total = 0;
        for (const auto* t : tasks) {
            if (t->size == 0)
                throw Error("task '" + t->name + "' in family " + std::string(to_string(f)) +
                            " has no examples");
            total += static_cast<std::int64_t>(t->size);
        }
        for (const auto* t : tasks) {
            if (within == MixingStrategy::PROPORTIONAL)
                out.push_back({t->name, static_cast<std::int64_t>(t->size), n_families * total});
            else
                out.push_back({t->name, 1, n_families * static_cast<std::int64_t>(tasks.size())});
        }
    }
    return out;
}

SamplingDistribution task_distribution(std::span<const FamilyId> families, const Registry& registry,
                                       MixingStrategy within) {
    SamplingDistribution dist;
    for (const auto& w : exact_task_weights(families, registry, within))
        dist.entries.push_back({w.task, w.value()});
    return dist;
}

Draw draw_example(const SamplingDistribution& dist, const Registry& registry, Rng& rng) {
    const auto& task = dist.entries[dist.pick(rng)].task;
    const auto n = registry.examples(task).size();
    if (n == 0) throw Error("task '" + task + "' was drawn but has no examples");
    return {task, static_cast<std::size_t>(rng.below(n))};
}

} // namespace mtlforge
