#include "mtlforge/error.hpp"
#include "mtlforge/metrics.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace mtlforge;

namespace {

constexpr double kTol = 1e-9;

Tokens random_tokens(std::mt19937_64& g, std::size_t max_len, int vocab) {
    std::uniform_int_distribution<std::size_t> len(0, max_len);
    std::uniform_int_distribution<int> word(0, vocab - 1);
    Tokens t(len(g));
    for (auto& w : t) w = "w" + std::to_string(word(g));
    return t;
}

std::string join(const Tokens& t) {
    std::string s;
    for (const auto& w : t) s += (s.empty() ? "" : " ") + w;
    return s;
}

std::vector<double> unit(std::mt19937_64& g, std::size_t dim) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(dim);
    double norm = 0;
    for (auto& x : v) {
        x = n(g);
        norm += x * x;
    }
    for (auto& x : v) x /= std::sqrt(norm);
    return v;
}

EmbeddedTokens embed(std::mt19937_64& g, std::size_t n, std::size_t dim) {
    EmbeddedTokens e;
    for (std::size_t i = 0; i < n; ++i) {
        e.tokens.push_back("t" + std::to_string(i));
        e.vectors.push_back(unit(g, dim));
    }
    return e;
}

} // namespace

TEST_CASE("tokenization") {
    CHECK(metric_tokens("  The CAT\tsat\n") == Tokens{"the", "cat", "sat"});
    CHECK(metric_tokens("").empty());
}

TEST_CASE("rouge examples") {
    const auto id = rouge_n("a b c", "a b c", 1);
    CHECK(id.precision == 1.0);
    CHECK(id.recall == 1.0);
    CHECK(id.f_score == 1.0);
    CHECK(rouge_n("a b", "c d", 1).f_score == 0.0);
    CHECK(rouge_n("a", "a b", 2).f_score == 0.0);

    const auto got = rouge_n("the cat sat on the mat", "the cat ate the mat", 2);
    const auto want = oracle::rouge_n(metric_tokens("the cat sat on the mat"), metric_tokens("the cat ate the mat"), 2);
    CHECK(got.precision == doctest::Approx(want.p).epsilon(kTol));
    CHECK(got.recall == doctest::Approx(want.r).epsilon(kTol));
    CHECK(got.f_score == doctest::Approx(want.f).epsilon(kTol));
    CHECK(got.precision == doctest::Approx(2.0 / 5.0));
    CHECK(got.recall == doctest::Approx(2.0 / 4.0));

    CHECK(rouge_l("a b c d", "a b c d").f_score == 1.0);
    const auto rev = rouge_l("d c b a", "a b c d");
    CHECK(rev.precision == doctest::Approx(0.25));
    CHECK(rouge_l("", "a").f_score == 0.0);
}

TEST_CASE("rouge against brute force") {
    std::mt19937_64 g(11);
    for (int trial = 0; trial < 400; ++trial) {
        const auto c = random_tokens(g, 10, 5);
        const auto r = random_tokens(g, 10, 5);
        for (int n = 1; n <= 3; ++n) {
            const auto a = rouge_n(c, r, n);
            const auto b = oracle::rouge_n(c, r, static_cast<std::size_t>(n));
            CHECK(std::abs(a.precision - b.p) < kTol);
            CHECK(std::abs(a.recall - b.r) < kTol);
            CHECK(std::abs(a.f_score - b.f) < kTol);
        }
        const auto l = rouge_l(c, r);
        const auto lo = oracle::rouge_l(c, r);
        CHECK(std::abs(l.precision - lo.p) < kTol);
        CHECK(std::abs(l.recall - lo.r) < kTol);
        CHECK(std::abs(l.f_score - lo.f) < kTol);
    }
}

TEST_CASE("rouge properties") {
    std::mt19937_64 g(12);
    for (int trial = 0; trial < 200; ++trial) {
        auto c = random_tokens(g, 8, 6);
        const auto r = random_tokens(g, 8, 6);
        for (int n = 1; n <= 3; ++n)
            if (static_cast<int>(c.size()) >= n) CHECK(rouge_n(c, c, n).f_score == doctest::Approx(1.0).epsilon(1e-15));
        if (r.empty()) continue;
        // Appending a reference token never lowers unigram recall.
        const double before = rouge_n(c, r, 1).recall;
        c.push_back(r[static_cast<std::size_t>(trial) % r.size()]);
        CHECK(rouge_n(c, r, 1).recall >= before);
        const auto p = rouge_l(c, r);
        CHECK(p.f_score >= 0.0);
        CHECK(p.f_score <= 1.0);
    }
}

TEST_CASE("bleu examples") {
    const std::vector<std::string> id = {"the cat sat on the mat", "a b"};
    CHECK(bleu(std::span<const std::string>(id), std::span<const std::string>(id)) == doctest::Approx(1.0));
    const std::vector<std::string> c = {"the cat"}, r = {"the cat sat"};
    CHECK(bleu(std::span<const std::string>(c), std::span<const std::string>(r)) ==
          doctest::Approx(std::exp(1.0 - 3.0 / 2.0)).epsilon(kTol));
    CHECK(std::abs(bleu(std::span<const std::string>(c), std::span<const std::string>(r)) - 0.6065) < 1e-4);
    const std::vector<std::string> x = {"dog"}, y = {"the cat"};
    CHECK(bleu(std::span<const std::string>(x), std::span<const std::string>(y)) == 0.0);
    const std::vector<std::string> e = {""}, f = {"a"};
    CHECK(bleu(std::span<const std::string>(e), std::span<const std::string>(f)) == 0.0);
    const std::vector<std::string> none;
    CHECK_THROWS_AS(bleu(std::span<const std::string>(none), std::span<const std::string>(none)), Error);
    CHECK_THROWS_AS(bleu(std::span<const std::string>(c), std::span<const std::string>(id)), Error);
}

TEST_CASE("bleu against brute force") {
    std::mt19937_64 g(13);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<Tokens> cs, rs;
        const int n = 1 + trial % 4;
        for (int k = 0; k < n; ++k) {
            cs.push_back(random_tokens(g, 7, 3));
            rs.push_back(random_tokens(g, 7, 3));
        }
        const double got = bleu(std::span<const Tokens>(cs), std::span<const Tokens>(rs));
        CHECK(std::abs(got - oracle::bleu(cs, rs)) < kTol);
        CHECK(got >= 0.0);
        CHECK(got <= 1.0 + kTol);
    }
}

TEST_CASE("meteor examples") {
    CHECK(meteor("the cat", "the cat") == 0.9375);
    CHECK(meteor("a b", "c d") == 0.0);
    CHECK(meteor("", "a") == 0.0);
    for (std::size_t m = 1; m <= 12; ++m) {
        Tokens t;
        for (std::size_t i = 0; i < m; ++i) t.push_back("t" + std::to_string(i % 3));
        const double md = static_cast<double>(m);
        CHECK(meteor(t, t) == doctest::Approx(1.0 - 0.5 / (md * md * md)).epsilon(1e-15));
    }
    // "the cat sat" vs "sat the cat": 3 matches in 2 chunks.
    const double fmean = 1.0, pen = 0.5 * std::pow(2.0 / 3.0, 3);
    CHECK(meteor("the cat sat", "sat the cat") == doctest::Approx(fmean * (1 - pen)));
}

TEST_CASE("meteor against exhaustive alignment") {
    std::mt19937_64 g(14);
    for (int trial = 0; trial < 600; ++trial) {
        const auto c = random_tokens(g, 7, 3);
        const auto r = random_tokens(g, 7, 3);
        const auto a = meteor_align(c, r);
        const auto o = oracle::meteor_alignment(c, r);
        CHECK(a.exhaustive);
        CHECK(a.matches == o.matches);
        CHECK(a.chunks == o.chunks);
        CHECK(std::abs(meteor(c, r) - oracle::meteor(c, r)) < kTol);
    }
}

TEST_CASE("meteor search budget") {
    Tokens c(40, "x"), r(40, "x");
    for (std::size_t i = 0; i < c.size(); i += 3) c[i] = "y";
    for (std::size_t i = 1; i < r.size(); i += 3) r[i] = "y";
    const auto capped = meteor_align(c, r, 10);
    CHECK(!capped.exhaustive);
    CHECK(capped.matches <= 40);
    CHECK(capped.chunks <= capped.matches);
    const auto more = meteor_align(c, r, 100000);
    CHECK((more.matches > capped.matches || (more.matches == capped.matches && more.chunks <= capped.chunks)));
}

TEST_CASE("bertscore") {
    std::mt19937_64 g(15);
    const auto a = embed(g, 4, 5);
    const auto self = bertscore_greedy(a, a);
    CHECK(self.precision == doctest::Approx(1.0));
    CHECK(self.f_score == doctest::Approx(1.0));

    EmbeddedTokens x{{"x"}, {{1.0, 0.0}}}, y{{"y"}, {{0.0, 1.0}}};
    CHECK(bertscore_greedy(x, y).f_score == 0.0);

    for (std::size_t nc = 1; nc <= 8; ++nc)
        for (std::size_t nr = 1; nr <= 8; ++nr) {
            const auto c = embed(g, nc, 6);
            const auto r = embed(g, nr, 6);
            const auto got = bertscore_greedy(c, r);
            const auto want = oracle::bertscore(c.vectors, r.vectors);
            CHECK(std::abs(got.precision - want.p) < kTol);
            CHECK(std::abs(got.recall - want.r) < kTol);
            CHECK(std::abs(got.f_score - want.f) < kTol);
        }

    EmbeddedTokens wrong_dim{{"z"}, {{1.0, 0.0, 0.0}}};
    CHECK_THROWS_AS(bertscore_greedy(x, wrong_dim), Error);
    CHECK_THROWS_AS(bertscore_greedy(x, EmbeddedTokens{}), Error);
    EmbeddedTokens not_unit{{"u"}, {{2.0, 0.0}}};
    CHECK_THROWS_AS(bertscore_greedy(not_unit, x), Error);
    EmbeddedTokens ragged{{"a", "b"}, {{1.0, 0.0}}};
    CHECK_THROWS_AS(ragged.validate(), Error);
}

TEST_CASE("lookup embedder") {
    const auto dir = std::filesystem::temp_directory_path() / "mtlforge-embed";
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "t.json") << R"({"cat":[3,4],"dog":[0,2],"<unk>":[1,0]})";
    const auto e = lookup_embedder(dir / "t.json");
    const auto out = e({"cat", "bird"});
    out.validate();
    CHECK(out.vectors[0][0] == doctest::Approx(0.6));
    CHECK(out.vectors[1] == std::vector<double>{1.0, 0.0});
    std::ofstream(dir / "bad.json") << R"({"cat":[1,0],"dog":[1]})";
    CHECK_THROWS_AS(lookup_embedder(dir / "bad.json"), Error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("evaluate corpus") {
    const std::vector<std::string> one = {"the cat sat"};
    const auto id = evaluate_corpus(one, one);
    CHECK(id.rouge1_f == 1.0);
    CHECK(id.rouge2_f == 1.0);
    CHECK(id.rougeL_f == 1.0);
    CHECK(id.bleu == doctest::Approx(1.0));
    CHECK(id.meteor == doctest::Approx(1.0 - 0.5 / 27.0));
    CHECK(!id.bertscore_f);
    CHECK(!id.get("bertscore"));
    CHECK(id.get("rouge1") == 1.0);
    CHECK_THROWS_AS(id.get("cider"), Error);

    const std::vector<std::string> p = {"a b c", "x y"}, r = {"a b d", "x q"};
    const auto two = evaluate_corpus(p, r);
    CHECK(two.rouge1_f == doctest::Approx((rouge_n(p[0], r[0], 1).f_score + rouge_n(p[1], r[1], 1).f_score) / 2));

    CHECK_THROWS_AS(evaluate_corpus(one, p), Error);
    const std::vector<std::string> none;
    CHECK_THROWS_AS(evaluate_corpus(none, none), Error);
}

TEST_CASE("evaluate corpus matches per-metric oracles") {
    std::mt19937_64 g(16);
    std::vector<std::string> preds, refs;
    std::vector<Tokens> pt, rt;
    for (int i = 0; i < 50; ++i) {
        auto c = random_tokens(g, 8, 6);
        auto r = random_tokens(g, 8, 6);
        if (c.empty()) c.push_back("w0");
        if (r.empty()) r.push_back("w1");
        preds.push_back(join(c));
        refs.push_back(join(r));
        pt.push_back(c);
        rt.push_back(r);
    }
    // Embedder with one fixed random vector per vocabulary word.
    std::map<std::string, std::vector<double>> table;
    for (int w = 0; w < 6; ++w) table["w" + std::to_string(w)] = unit(g, 4);
    const Embedder embedder = [&](const std::vector<std::string>& tokens) {
        EmbeddedTokens e;
        e.tokens = tokens;
        for (const auto& t : tokens) e.vectors.push_back(table.at(t));
        return e;
    };
    const auto rep = evaluate_corpus(preds, refs, &embedder);

    double r1 = 0, r2 = 0, rl = 0, met = 0, bs = 0;
    for (std::size_t i = 0; i < pt.size(); ++i) {
        r1 += oracle::rouge_n(pt[i], rt[i], 1).f;
        r2 += oracle::rouge_n(pt[i], rt[i], 2).f;
        rl += oracle::rouge_l(pt[i], rt[i]).f;
        met += oracle::meteor(pt[i], rt[i]);
        std::vector<std::vector<double>> cv, rv;
        for (const auto& t : pt[i]) cv.push_back(table.at(t));
        for (const auto& t : rt[i]) rv.push_back(table.at(t));
        bs += oracle::bertscore(cv, rv).f;
    }
    const double n = static_cast<double>(pt.size());
    CHECK(std::abs(rep.rouge1_f - r1 / n) < kTol);
    CHECK(std::abs(rep.rouge2_f - r2 / n) < kTol);
    CHECK(std::abs(rep.rougeL_f - rl / n) < kTol);
    CHECK(std::abs(rep.meteor - met / n) < kTol);
    CHECK(std::abs(rep.bleu - oracle::bleu(pt, rt)) < kTol);
    REQUIRE(rep.bertscore_f);
    CHECK(std::abs(*rep.bertscore_f - std::clamp(bs / n, 0.0, 1.0)) < kTol);
    CHECK(metric_names() == std::vector<std::string>{"bertscore", "bleu", "meteor", "rouge1", "rouge2", "rougeL"});
}
