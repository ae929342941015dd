#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "htr/alphabet.hpp"
#include "htr/loss.hpp"

using namespace htr;
using htr::testing::gradcheck;

namespace {

// Brute-force CTC reference: enumerate every frame labelling, collapse it,
// and sum path probabilities of those matching the label.
std::vector<int> collapse(const std::vector<int>& path, int blank) {
    std::vector<int> out;
    int prev = -1;
    for (int c : path) {
        if (c != prev && c != blank) out.push_back(c);
        prev = c;
    }
    return out;
}

double ctc_bruteforce(const Tensor& logits_mk, const std::vector<int>& label) {
    int m = logits_mk.dim(0), k = logits_mk.dim(1);
    int blank = k - 1;
    // softmax frames
    std::vector<double> probs(logits_mk.v.size());
    for (int t = 0; t < m; ++t) {
        double hi = -1e300, z = 0.0;
        for (int c = 0; c < k; ++c) hi = std::max(hi, logits_mk.at(t, c));
        for (int c = 0; c < k; ++c) z += std::exp(logits_mk.at(t, c) - hi);
        for (int c = 0; c < k; ++c)
            probs[static_cast<size_t>(t) * k + c] = std::exp(logits_mk.at(t, c) - hi) / z;
    }
    double total = 0.0;
    std::vector<int> path(m, 0);
    while (true) {
        if (collapse(path, blank) == label) {
            double p = 1.0;
            for (int t = 0; t < m; ++t) p *= probs[static_cast<size_t>(t) * k + path[t]];
            total += p;
        }
        int pos = m - 1;
        while (pos >= 0 && path[pos] == k - 1) path[pos--] = 0;
        if (pos < 0) break;
        ++path[pos];
    }
    return -std::log(total);
}

Tensor rand_logits(int m, int k, Rng& rng) {
    Tensor t({m, k});
    fill_uniform(t, -2.0, 2.0, rng);
    return t;
}

}  // namespace

TEST_CASE("alphabet ids and round trip") {
    auto a = Alphabet::from_utf8("abc");
    CHECK(a.size() == 3);
    CHECK(a.blank_id() == 3);
    CHECK(a.sos_id() == 4);
    CHECK(a.eos_id() == 5);
    CHECK(a.pad_id() == 6);
    CHECK(a.ctc_channels() == 4);
    CHECK(a.decoder_outputs() == 4);
    CHECK(a.output_index_of(a.eos_id()) == 3);
    CHECK(a.token_of_output(3) == a.eos_id());
    CHECK(a.token_of_output(1) == 1);
    CHECK(a.decode(a.encode("cab")) == "cab");
    CHECK_THROWS(a.encode("xyz"));
    CHECK_THROWS(Alphabet::from_utf8("aa"));
    CHECK_THROWS(a.output_index_of(a.pad_id()));
}

TEST_CASE("loss config validation") {
    LossConfig ok;
    ok.validate();
    LossConfig bad1{.lambda = 1.5, .ctc_enabled = true};
    CHECK_THROWS(bad1.validate());
    LossConfig bad2{.lambda = 0.5, .ctc_enabled = false};
    CHECK_THROWS(bad2.validate());
    LossConfig ce_only{.lambda = 0.0, .ctc_enabled = false};
    ce_only.validate();
}

TEST_CASE("cross entropy of a perfect model is zero") {
    Tape t;
    // gold token 1 then 0
    std::vector<Var> dists = {t.input(Tensor({1, 2}, {0.0, 1.0})),
                              t.input(Tensor({1, 2}, {1.0, 0.0}))};
    Var l = cross_entropy(t, dists, {{1, 0}});
    CHECK(t.val(l).v[0] == doctest::Approx(0.0));
}

TEST_CASE("cross entropy of uniform distributions is T log A") {
    Tape t;
    Tensor u({1, 4}, {0.25, 0.25, 0.25, 0.25});
    std::vector<Var> dists = {t.input(u), t.input(u)};
    Var l = cross_entropy(t, dists, {{2, 3}});
    CHECK(t.val(l).v[0] == doctest::Approx(2.0 * std::log(4.0)));
}

TEST_CASE("cross entropy clamps zero gold probability") {
    Tape t;
    std::vector<Var> dists = {t.input(Tensor({1, 2}, {1.0, 0.0}))};
    Var l = cross_entropy(t, dists, {{1}});
    CHECK(std::isfinite(t.val(l).v[0]));
    CHECK(t.val(l).v[0] == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("cross entropy masks padded positions and averages the batch") {
    Tape t;
    Tensor d1({2, 2}, {0.5, 0.5, 0.25, 0.75});
    Tensor d2({2, 2}, {0.9, 0.1, 0.5, 0.5});
    std::vector<Var> dists = {t.input(d1), t.input(d2)};
    // item 0 has two positions, item 1 only one
    Var l = cross_entropy(t, dists, {{0, 0}, {1}});
    double expect = 0.5 * ((-std::log(0.5) - std::log(0.9)) + (-std::log(0.75)));
    CHECK(t.val(l).v[0] == doctest::Approx(expect));
}

TEST_CASE("cross entropy rejects empty targets and length overruns") {
    Tape t;
    std::vector<Var> dists = {t.input(Tensor({1, 2}, {0.5, 0.5}))};
    CHECK_THROWS(cross_entropy(t, dists, {{}}));
    CHECK_THROWS(cross_entropy(t, dists, {{0, 1}}));
}

TEST_CASE("ctc single-frame single-char") {
    Tape t;
    // alphabet {a} + blank, p(a) = 0.7 via logits log(0.7), log(0.3)
    Var logits = t.input(Tensor({1, 2}, {std::log(0.7), std::log(0.3)}));
    Var l = ctc_loss_single(t, logits, {0});
    CHECK(t.val(l).v[0] == doctest::Approx(-std::log(0.7)));
}

TEST_CASE("ctc two frames label 'a' sums the three paths") {
    Tape t;
    Rng rng(5);
    Tensor logits = rand_logits(2, 2, rng);
    // softmax by hand
    auto p = [&](int tt, int c) {
        double z = std::exp(logits.at(tt, 0)) + std::exp(logits.at(tt, 1));
        return std::exp(logits.at(tt, c)) / z;
    };
    double expect = p(0, 0) * p(1, 0) + p(0, 1) * p(1, 0) + p(0, 0) * p(1, 1);
    Var l = ctc_loss_single(t, t.input(logits), {0});
    CHECK(t.val(l).v[0] == doctest::Approx(-std::log(expect)));
}

TEST_CASE("ctc two frames label 'ab' is the single path") {
    Tape t;
    Rng rng(7);
    Tensor logits = rand_logits(2, 3, rng);
    auto p = [&](int tt, int c) {
        double z = 0.0;
        for (int j = 0; j < 3; ++j) z += std::exp(logits.at(tt, j));
        return std::exp(logits.at(tt, c)) / z;
    };
    Var l = ctc_loss_single(t, t.input(logits), {0, 1});
    CHECK(t.val(l).v[0] == doctest::Approx(-std::log(p(0, 0) * p(1, 1))));
}

TEST_CASE("ctc equals brute-force enumeration over all small instances") {
    Rng rng(11);
    for (int m = 1; m <= 5; ++m)
        for (int chars = 1; chars <= 2; ++chars)
            for (int llen = 0; llen <= 3; ++llen) {
                // random label over the character channels
                std::vector<int> label;
                for (int i = 0; i < llen; ++i) label.push_back(rng.uniform_int(chars));
                if (ctc_min_frames(label) > m) continue;
                Tensor logits = rand_logits(m, chars + 1, rng);
                Tape t;
                Var l = ctc_loss_single(t, t.input(logits), label);
                double expect = ctc_bruteforce(logits, label);
                CHECK(std::abs(t.val(l).v[0] - expect) < 1e-8);
            }
}

TEST_CASE("ctc gradient matches finite differences") {
    Rng rng(13);
    for (unsigned seed = 0; seed < 5; ++seed) {
        Tensor logits = rand_logits(3, 3, rng);
        auto res = gradcheck(
            [](Tape& t, const std::vector<Var>& xs) { return ctc_loss_single(t, xs[0], {0, 1}); },
            {logits}, 1e-4);
        CHECK(res.max_err < 1e-4);
    }
}

TEST_CASE("ctc batched op masks frames and averages feasible items") {
    Rng rng(17);
    Tensor logits({2, 4, 3});
    fill_uniform(logits, -1.0, 1.0, rng);
    Tape t;
    // item 0: 4 frames label {0,1}; item 1: 2 valid frames label {1}
    auto res = ctc_loss(t, t.input(logits), {{0, 1}, {1}}, {4, 2});
    CHECK(res.skipped.empty());
    CHECK(res.feasible == 2);

    // reference: single-item losses
    Tensor l0({4, 3});
    std::copy_n(logits.v.begin(), 12, l0.v.begin());
    Tensor l1({2, 3});
    std::copy_n(logits.v.begin() + 12, 6, l1.v.begin());
    Tape t2;
    double a = t2.val(ctc_loss_single(t2, t2.input(l0), {0, 1})).v[0];
    double b = t2.val(ctc_loss_single(t2, t2.input(l1), {1})).v[0];
    CHECK(t.val(res.loss).v[0] == doctest::Approx(0.5 * (a + b)));
}

TEST_CASE("ctc reports infeasible items instead of zeroing them") {
    Tape t;
    Tensor logits({2, 2, 3});
    // item 0 label needs 3 frames ("aa" -> a blank a) but only 2 exist
    auto res = ctc_loss(t, t.input(logits), {{0, 0}, {1}}, {2, 2});
    REQUIRE(res.skipped.size() == 1);
    CHECK(res.skipped[0] == 0);
    CHECK(res.feasible == 1);
    CHECK(ctc_min_frames({0, 0}) == 3);
    CHECK(ctc_min_frames({0, 1}) == 2);
    CHECK(ctc_min_frames({}) == 0);
}

TEST_CASE("ctc single rejects an oversized label outright") {
    Tape t;
    Var logits = t.input(Tensor({2, 3}));
    CHECK_THROWS(ctc_loss_single(t, logits, {0, 0}));
}

TEST_CASE("hybrid loss boundaries and midpoint") {
    Tape t;
    Var ctc = t.input(Tensor::scalar(2.0));
    Var ce = t.input(Tensor::scalar(4.0));
    CHECK(t.val(hybrid_loss(t, ctc, ce, 0.0)).v[0] == doctest::Approx(4.0));
    CHECK(t.val(hybrid_loss(t, ctc, ce, 1.0)).v[0] == doctest::Approx(2.0));
    CHECK(t.val(hybrid_loss(t, ctc, ce, 0.5)).v[0] == doctest::Approx(3.0));
    CHECK_THROWS(hybrid_loss(t, ctc, ce, 1.5));
    CHECK_THROWS(hybrid_loss(t, ctc, ce, -0.1));
}

TEST_CASE("hybrid loss is strictly increasing in lambda when ctc dominates") {
    Tape t;
    Var ctc = t.input(Tensor::scalar(5.0));
    Var ce = t.input(Tensor::scalar(1.0));
    double prev = -1.0;
    for (double lam : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        double v = t.val(hybrid_loss(t, ctc, ce, lam)).v[0];
        CHECK(v > prev);
        prev = v;
    }
}
