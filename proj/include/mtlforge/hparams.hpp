#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace mtlforge {

// Optimizer and sequence settings handed to trainers verbatim. The library
// never interprets them.
struct Hyperparameters {
    std::string optimizer = "AdamW";
    double learning_rate = 5e-05;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-08;
    std::string lr_scheduler = "linear";
    double dropout = 0.1;
    double weight_decay = 0.0;
    std::int64_t warmup_steps = 0;
    std::int64_t batch_size = 8;
    std::int64_t epochs = 3;
    bool fp16 = true;
    std::int64_t max_source_length = 512;
    std::int64_t max_target_length = 128;
    std::int64_t finetune_max_source_length = 1024;
    std::int64_t finetune_max_target_length = 512;

    /// Sorted keys, no whitespace. Byte-stable for identical values.
    std::string canonical_json() const;
    /// Overrides from a JSON object; unknown keys throw naming the key.
    static Hyperparameters from_json(std::string_view text, const Hyperparameters& base);
    static Hyperparameters from_json(std::string_view text);
    bool operator==(const Hyperparameters&) const = default;
};

} // namespace mtlforge
