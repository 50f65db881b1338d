#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mtlforge {

// Scoring conventions shared by every metric here: text is lowercased and
// split on whitespace, no stemming, single reference per candidate.

struct PRF {
    double precision = 0.0;
    double recall = 0.0;
    double f_score = 0.0;
};

using Tokens = std::vector<std::string>;

Tokens metric_tokens(std::string_view text);

/// Clipped n-gram overlap; zeros when either side has fewer than n tokens.
PRF rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, int n);
PRF rouge_n(std::string_view candidate, std::string_view reference, int n);

/// Sentence-level LCS; zeros when either side is empty.
PRF rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);
PRF rouge_l(std::string_view candidate, std::string_view reference);

/// Corpus BLEU without smoothing. The n-gram order is clamped to the
/// shortest non-empty candidate; the brevity penalty uses corpus totals.
/// Returns 0 when every candidate is empty.
double bleu(std::span<const Tokens> candidates, std::span<const Tokens> references, int max_n = 4);
double bleu(std::span<const std::string> candidates, std::span<const std::string> references, int max_n = 4);

struct MeteorAlignment {
    std::size_t matches = 0;
    std::size_t chunks = 0;
    // False when the chunk search hit its node budget and returned the best
    // alignment found so far.
    bool exhaustive = true;
};

/// Exact-match alignment with the most matches, and among those the fewest
/// chunks (branch and bound over candidate positions).
MeteorAlignment meteor_align(std::span<const std::string> candidate, std::span<const std::string> reference,
                             std::size_t node_budget = 2'000'000);

/// Fmean = 10PR / (R + 9P); penalty = 0.5 (chunks / matches)^3.
double meteor(std::span<const std::string> candidate, std::span<const std::string> reference);
double meteor(std::string_view candidate, std::string_view reference);

struct EmbeddedTokens {
    std::vector<std::string> tokens;
    std::vector<std::vector<double>> vectors;

    /// Equal lengths, one dimension, unit norms within 1e-6.
    void validate() const;
};

/// Greedy matching: every token takes its best cosine counterpart on the
/// other side independently. Raw cosines, no baseline rescaling.
PRF bertscore_greedy(const EmbeddedTokens& candidate, const EmbeddedTokens& reference);

/// External embedding provider: tokens in, one unit vector per token out.
using Embedder = std::function<EmbeddedTokens(const std::vector<std::string>& tokens)>;

/// Provider backed by a JSON table {"token": [v0, v1, ...], ...}. Vectors are
/// normalized on load; unknown tokens use "<unk>" when present.
Embedder lookup_embedder(const std::filesystem::path& table);

struct MetricReport {
    std::optional<double> bertscore_f; // null without an embedder
    double bleu = 0.0;
    double meteor = 0.0;
    double rouge1_f = 0.0;
    double rouge2_f = 0.0;
    double rougeL_f = 0.0;

    /// Field by name: bertscore, bleu, meteor, rouge1, rouge2, rougeL.
    std::optional<double> get(std::string_view metric) const;
    bool operator==(const MetricReport&) const = default;
};

/// Names accepted by MetricReport::get, in table column order.
const std::vector<std::string>& metric_names();

/// Sentence-level ROUGE, METEOR and BERTScore averaged over pairs; BLEU at
/// corpus level. Pairs with an empty side score 0 for BERTScore.
MetricReport evaluate_corpus(std::span<const std::string> predictions, std::span<const std::string> references,
                             const Embedder* embedder = nullptr);

} // namespace mtlforge
