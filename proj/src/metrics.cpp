#include "mtlforge/metrics.hpp"

#include "mtlforge/error.hpp"
#include "mtlforge/registry.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_map>

namespace mtlforge {

namespace {

double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

// Maps both sides onto shared integer ids.
struct Interned {
    std::vector<std::uint32_t> cand;
    std::vector<std::uint32_t> ref;
    std::size_t vocab = 0;
};

Interned intern(std::span<const std::string> c, std::span<const std::string> r) {
    std::unordered_map<std::string_view, std::uint32_t> ids;
    Interned out;
    auto id = [&](const std::string& t) {
        auto [it, inserted] = ids.emplace(t, static_cast<std::uint32_t>(ids.size()));
        return it->second;
    };
    out.cand.reserve(c.size());
    out.ref.reserve(r.size());
    for (const auto& t : c) out.cand.push_back(id(t));
    for (const auto& t : r) out.ref.push_back(id(t));
    out.vocab = ids.size();
    return out;
}

using Gram = std::vector<std::uint32_t>;

std::vector<Gram> sorted_ngrams(const std::vector<std::uint32_t>& seq, std::size_t n) {
    std::vector<Gram> grams;
    if (seq.size() < n) return grams;
    grams.reserve(seq.size() - n + 1);
    for (std::size_t i = 0; i + n <= seq.size(); ++i) grams.emplace_back(seq.begin() + i, seq.begin() + i + n);
    std::sort(grams.begin(), grams.end());
    return grams;
}

// Sum over distinct grams of min(count in a, count in b); inputs sorted.
std::size_t clipped_overlap(const std::vector<Gram>& a, const std::vector<Gram>& b) {
    std::size_t i = 0, j = 0, hits = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] < b[j]) ++i;
        else if (b[j] < a[i]) ++j;
        else {
            ++hits;
            ++i;
            ++j;
        }
    }
    return hits;
}

} // namespace

Tokens metric_tokens(std::string_view text) {
    Tokens out;
    for (const auto& span : whitespace_tokenize(text)) {
        std::string t(text.substr(span.begin, span.end - span.begin));
        for (auto& ch : t) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        out.push_back(std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// ROUGE

PRF rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, int n) {
    if (n < 1) throw Error("rouge_n needs n >= 1");
    const auto un = static_cast<std::size_t>(n);
    if (candidate.size() < un || reference.size() < un) return {};
    const auto ids = intern(candidate, reference);
    const auto cg = sorted_ngrams(ids.cand, un);
    const auto rg = sorted_ngrams(ids.ref, un);
    const auto overlap = static_cast<double>(clipped_overlap(cg, rg));
    PRF out;
    out.precision = overlap / static_cast<double>(cg.size());
    out.recall = overlap / static_cast<double>(rg.size());
    out.f_score = harmonic(out.precision, out.recall);
    return out;
}

PRF rouge_n(std::string_view candidate, std::string_view reference, int n) {
    return rouge_n(metric_tokens(candidate), metric_tokens(reference), n);
}

PRF rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
    if (candidate.empty() || reference.empty()) return {};
    const auto ids = intern(candidate, reference);
    const auto& a = ids.cand;
    const auto& b = ids.ref;
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    const auto lcs = static_cast<double>(prev[b.size()]);
    PRF out;
    out.precision = lcs / static_cast<double>(a.size());
    out.recall = lcs / static_cast<double>(b.size());
    out.f_score = harmonic(out.precision, out.recall);
    return out;
}

PRF rouge_l(std::string_view candidate, std::string_view reference) {
    return rouge_l(metric_tokens(candidate), metric_tokens(reference));
}

// ---------------------------------------------------------------------------
// BLEU

double bleu(std::span<const Tokens> candidates, std::span<const Tokens> references, int max_n) {
    if (candidates.empty()) throw Error("bleu needs at least one candidate");
    if (candidates.size() != references.size())
        throw Error("bleu: " + std::to_string(candidates.size()) + " candidates but " +
                    std::to_string(references.size()) + " references");
    if (max_n < 1) throw Error("bleu needs max_n >= 1");

    std::size_t c_len = 0, r_len = 0;
    std::size_t shortest = std::numeric_limits<std::size_t>::max();
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        c_len += candidates[k].size();
        r_len += references[k].size();
        if (!candidates[k].empty()) shortest = std::min(shortest, candidates[k].size());
    }
    if (c_len == 0) return 0.0;
    const auto order = std::min(static_cast<std::size_t>(max_n), shortest);

    std::vector<std::size_t> hits(order + 1, 0), totals(order + 1, 0);
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        const auto ids = intern(candidates[k], references[k]);
        for (std::size_t n = 1; n <= order; ++n) {
            const auto cg = sorted_ngrams(ids.cand, n);
            totals[n] += cg.size();
            hits[n] += clipped_overlap(cg, sorted_ngrams(ids.ref, n));
        }
    }
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= order; ++n) {
        if (hits[n] == 0) return 0.0;
        log_sum += std::log(static_cast<double>(hits[n]) / static_cast<double>(totals[n]));
    }
    const double bp = c_len < r_len ? std::exp(1.0 - static_cast<double>(r_len) / static_cast<double>(c_len)) : 1.0;
    return bp * std::exp(log_sum / static_cast<double>(order));
}

double bleu(std::span<const std::string> candidates, std::span<const std::string> references, int max_n) {
    std::vector<Tokens> c, r;
    for (const auto& s : candidates) c.push_back(metric_tokens(s));
    for (const auto& s : references) r.push_back(metric_tokens(s));
    return bleu(std::span<const Tokens>(c), std::span<const Tokens>(r), max_n);
}

// ---------------------------------------------------------------------------
// METEOR

namespace {

class ChunkSearch {
public:
    ChunkSearch(const Interned& ids, std::size_t budget) : c_(ids.cand), r_(ids.ref), budget_(budget) {
        std::vector<std::size_t> cc(ids.vocab, 0), rc(ids.vocab, 0);
        for (auto w : c_) ++cc[w];
        for (auto w : r_) ++rc[w];
        need_.resize(ids.vocab);
        for (std::size_t w = 0; w < ids.vocab; ++w) {
            need_[w] = std::min(cc[w], rc[w]);
            matches_ += need_[w];
        }
        // Occurrences of each word strictly after position i.
        rest_.assign(c_.size(), 0);
        std::vector<std::size_t> seen(ids.vocab, 0);
        for (std::size_t i = c_.size(); i-- > 0;) {
            rest_[i] = seen[c_[i]];
            ++seen[c_[i]];
        }
        positions_.resize(ids.vocab);
        for (std::size_t j = 0; j < r_.size(); ++j) positions_[r_[j]].push_back(j);
        used_.assign(r_.size(), false);
    }

    MeteorAlignment run() {
        MeteorAlignment out;
        out.matches = matches_;
        if (matches_ == 0) return out;
        dfs(0, kNone, 0);
        out.chunks = best_;
        out.exhaustive = nodes_ <= budget_;
        return out;
    }

private:
    static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

    bool out_of_budget() const { return nodes_ > budget_ && best_ != kNone; }

    void dfs(std::size_t i, std::size_t prev_j, std::size_t chunks) {
        ++nodes_;
        if (best_ != kNone && chunks >= best_) return;
        if (out_of_budget()) return;
        if (i == c_.size()) {
            best_ = chunks;
            return;
        }
        const auto w = c_[i];
        if (need_[w] > 0) {
            auto try_align = [&](std::size_t j) {
                used_[j] = true;
                --need_[w];
                const bool continues = prev_j != kNone && j == prev_j + 1;
                dfs(i + 1, j, chunks + (continues ? 0 : 1));
                ++need_[w];
                used_[j] = false;
            };
            const auto next = prev_j == kNone ? kNone : prev_j + 1;
            if (next != kNone && next < r_.size() && r_[next] == w && !used_[next]) try_align(next);
            for (auto j : positions_[w]) {
                if (used_[j] || j == next) continue;
                try_align(j);
                if (out_of_budget()) return;
            }
        }
        // Leaving this position unaligned is only allowed if later
        // occurrences can still supply every required match.
        if (rest_[i] >= need_[w]) dfs(i + 1, kNone, chunks);
    }

    const std::vector<std::uint32_t>& c_;
    const std::vector<std::uint32_t>& r_;
    std::size_t budget_;
    std::vector<std::size_t> need_;
    std::vector<std::size_t> rest_;
    std::vector<std::vector<std::size_t>> positions_;
    std::vector<bool> used_;
    std::size_t matches_ = 0;
    std::size_t best_ = kNone;
    std::size_t nodes_ = 0;
};

} // namespace

MeteorAlignment meteor_align(std::span<const std::string> candidate, std::span<const std::string> reference,
                             std::size_t node_budget) {
    const auto ids = intern(candidate, reference);
    return ChunkSearch(ids, node_budget).run();
}

double meteor(std::span<const std::string> candidate, std::span<const std::string> reference) {
    const auto a = meteor_align(candidate, reference);
    if (a.matches == 0) return 0.0;
    const auto m = static_cast<double>(a.matches);
    const double p = m / static_cast<double>(candidate.size());
    const double r = m / static_cast<double>(reference.size());
    const double fmean = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(a.chunks) / m;
    const double penalty = 0.5 * frag * frag * frag;
    return fmean * (1.0 - penalty);
}

double meteor(std::string_view candidate, std::string_view reference) {
    return meteor(metric_tokens(candidate), metric_tokens(reference));
}

// ---------------------------------------------------------------------------
// BERTScore matching

void EmbeddedTokens::validate() const {
    if (tokens.size() != vectors.size())
        throw Error("embedded tokens: " + std::to_string(tokens.size()) + " tokens but " +
                    std::to_string(vectors.size()) + " vectors");
    if (vectors.empty()) throw Error("embedded tokens: empty side");
    const auto dim = vectors.front().size();
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        if (vectors[i].size() != dim) throw Error("embedded tokens: dimension mismatch within one side");
        double sq = 0.0;
        for (double x : vectors[i]) sq += x * x;
        if (std::abs(std::sqrt(sq) - 1.0) > 1e-6)
            throw Error("embedded tokens: vector for '" + tokens[i] + "' is not unit-normalized");
    }
}

PRF bertscore_greedy(const EmbeddedTokens& candidate, const EmbeddedTokens& reference) {
    candidate.validate();
    reference.validate();
    const auto dim = candidate.vectors.front().size();
    if (reference.vectors.front().size() != dim)
        throw Error("bertscore: candidate dimension " + std::to_string(dim) + " but reference dimension " +
                    std::to_string(reference.vectors.front().size()));
    const auto nc = candidate.vectors.size();
    const auto nr = reference.vectors.size();
    std::vector<double> best_c(nc, -std::numeric_limits<double>::infinity());
    std::vector<double> best_r(nr, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < nc; ++i)
        for (std::size_t j = 0; j < nr; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < dim; ++k) dot += candidate.vectors[i][k] * reference.vectors[j][k];
            best_c[i] = std::max(best_c[i], dot);
            best_r[j] = std::max(best_r[j], dot);
        }
    PRF out;
    for (double v : best_c) out.precision += v;
    for (double v : best_r) out.recall += v;
    out.precision /= static_cast<double>(nc);
    out.recall /= static_cast<double>(nr);
    out.f_score = harmonic(out.precision, out.recall);
    return out;
}

Embedder lookup_embedder(const std::filesystem::path& table) {
    std::ifstream in(table);
    if (!in) throw Error(table.string() + ": cannot open embedding table");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(table.string() + ": malformed embedding table: " + e.what());
    }
    if (!doc.is_object() || doc.empty()) throw Error(table.string() + ": embedding table must be a non-empty object");
    auto vectors = std::make_shared<std::unordered_map<std::string, std::vector<double>>>();
    std::size_t dim = 0;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        std::vector<double> v;
        try {
            v = it.value().get<std::vector<double>>();
        } catch (const nlohmann::json::exception&) {
            throw Error(table.string() + ": vector for '" + it.key() + "' is not a list of numbers");
        }
        if (dim == 0) dim = v.size();
        if (v.empty() || v.size() != dim) throw Error(table.string() + ": vector for '" + it.key() + "' has the wrong dimension");
        double sq = 0.0;
        for (double x : v) sq += x * x;
        if (sq == 0.0) throw Error(table.string() + ": vector for '" + it.key() + "' is zero");
        const double norm = std::sqrt(sq);
        for (double& x : v) x /= norm;
        vectors->emplace(it.key(), std::move(v));
    }
    return [vectors](const std::vector<std::string>& tokens) {
        EmbeddedTokens out;
        out.tokens = tokens;
        for (const auto& t : tokens) {
            auto it = vectors->find(t);
            if (it == vectors->end()) it = vectors->find("<unk>");
            if (it == vectors->end()) throw Error("no embedding for token '" + t + "' and no <unk> entry");
            out.vectors.push_back(it->second);
        }
        return out;
    };
}

// ---------------------------------------------------------------------------
// Corpus evaluation

const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names = {"bertscore", "bleu", "meteor", "rouge1", "rouge2", "rougeL"};
    return names;
}

std::optional<double> MetricReport::get(std::string_view metric) const {
    if (metric == "bertscore") return bertscore_f;
    if (metric == "bleu") return bleu;
    if (metric == "meteor") return meteor;
    if (metric == "rouge1") return rouge1_f;
    if (metric == "rouge2") return rouge2_f;
    if (metric == "rougeL") return rougeL_f;
    throw Error("unknown metric '" + std::string(metric) + "'");
}

MetricReport evaluate_corpus(std::span<const std::string> predictions, std::span<const std::string> references,
                             const Embedder* embedder) {
    if (predictions.size() != references.size())
        throw Error("evaluate: " + std::to_string(predictions.size()) + " predictions but " +
                    std::to_string(references.size()) + " references");
    if (predictions.empty()) throw Error("evaluate: no prediction/reference pairs");
    auto clamp = [](double v) { return std::clamp(v, 0.0, 1.0); };

    std::vector<Tokens> preds, refs;
    for (const auto& p : predictions) preds.push_back(metric_tokens(p));
    for (const auto& r : references) refs.push_back(metric_tokens(r));

    MetricReport report;
    double bert = 0.0;
    for (std::size_t k = 0; k < preds.size(); ++k) {
        report.rouge1_f += rouge_n(preds[k], refs[k], 1).f_score;
        report.rouge2_f += rouge_n(preds[k], refs[k], 2).f_score;
        report.rougeL_f += rouge_l(preds[k], refs[k]).f_score;
        report.meteor += meteor(preds[k], refs[k]);
        if (embedder != nullptr && !preds[k].empty() && !refs[k].empty())
            bert += bertscore_greedy((*embedder)(preds[k]), (*embedder)(refs[k])).f_score;
    }
    const auto n = static_cast<double>(preds.size());
    report.rouge1_f = clamp(report.rouge1_f / n);
    report.rouge2_f = clamp(report.rouge2_f / n);
    report.rougeL_f = clamp(report.rougeL_f / n);
    report.meteor = clamp(report.meteor / n);
    report.bleu = clamp(bleu(std::span<const Tokens>(preds), std::span<const Tokens>(refs)));
    if (embedder != nullptr) report.bertscore_f = clamp(bert / n);
    return report;
}

} // namespace mtlforge
