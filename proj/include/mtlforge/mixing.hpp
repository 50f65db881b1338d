#pragma once

#include "mtlforge/registry.hpp"
#include "mtlforge/rng.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mtlforge {

enum class MixingStrategy { PROPORTIONAL, EQUAL };

std::string_view to_string(MixingStrategy m);
MixingStrategy parse_mixing(std::string_view s);

struct TaskProbability {
    std::string task;
    double probability = 0.0;
    bool operator==(const TaskProbability&) const = default;
};

// Families are drawn uniformly; tasks within a family by size (PROPORTIONAL)
// or uniformly (EQUAL). Entries are ordered family by family in enum order,
// each family in registry order.
struct SamplingDistribution {
    std::vector<TaskProbability> entries;
    std::string rng_algorithm{Rng::kAlgorithm};

    /// Index into entries chosen by one uniform draw (inverse CDF).
    std::size_t pick(Rng& rng) const;
    double probability_of(std::string_view task) const;
    bool operator==(const SamplingDistribution&) const = default;
};

/// Exact task probability num / den.
struct ExactWeight {
    std::string task;
    std::int64_t num = 0;
    std::int64_t den = 1;
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

/// Rational form of task_distribution, same order and validation.
std::vector<ExactWeight> exact_task_weights(std::span<const FamilyId> families, const Registry& registry,
                                            MixingStrategy within);

/// Proportional weights use example counts. Zero-size tasks in a selected
/// family are rejected, as are empty selections and families with no tasks.
SamplingDistribution task_distribution(std::span<const FamilyId> families, const Registry& registry,
                                       MixingStrategy within);

struct Draw {
    std::string task;
    std::size_t example_index = 0;
    bool operator==(const Draw&) const = default;
};

/// Task per the distribution, then a uniform example index within it.
Draw draw_example(const SamplingDistribution& dist, const Registry& registry, Rng& rng);

} // namespace mtlforge
