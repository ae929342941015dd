#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "htr/attention.hpp"

using namespace htr;
using htr::testing::gradcheck;

namespace {

Tensor rand_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(s));
    fill_uniform(t, lo, hi, rng);
    return t;
}

Tensor ones(Shape s) { return Tensor::full(std::move(s), 1.0); }

// Marginal stop distribution of the left-to-right sampling process by
// explicit path enumeration; the recurrence under test never appears here.
struct MonotonicEnum {
    const std::vector<std::vector<double>>& p;  // T rows of M probabilities
    int frames;
    std::vector<std::vector<double>> alpha;     // T x M

    void walk(size_t t, int from, double prob) {
        if (t == p.size() || prob == 0.0) return;
        double cont = prob;
        for (int j = from; j < frames; ++j) {
            double stop = cont * p[t][j];
            alpha[t][j] += stop;
            walk(t + 1, j, stop);
            cont *= 1.0 - p[t][j];
        }
        // remaining mass fell off the end and never returns
    }
};

std::vector<std::vector<double>> enumerate_monotonic(const std::vector<std::vector<double>>& p,
                                                     int frames) {
    MonotonicEnum e{p, frames, std::vector<std::vector<double>>(p.size(),
                                                                std::vector<double>(frames, 0.0))};
    e.walk(0, 0, 1.0);
    return e.alpha;
}

// runs the fused recurrence step by step on plain values
std::vector<std::vector<double>> run_recurrence(const std::vector<std::vector<double>>& p,
                                                int frames) {
    std::vector<std::vector<double>> out;
    Tensor prev({1, frames});
    prev.v[0] = 1.0;
    for (const auto& row : p) {
        Tape t;
        Var pv = t.input(Tensor({1, frames}, std::vector<double>(row)));
        Var av = t.input(prev);
        Var alpha = monotonic_alignment(t, pv, av);
        prev = t.val(alpha);
        out.emplace_back(prev.v);
    }
    return out;
}

struct MechanismSetup {
    ParamStore ps;
    AttentionModule attn;
    Tensor h, s;
    Tensor mask;
    std::vector<int> lengths;
};

}  // namespace

TEST_CASE("sinusoid table matches the closed form") {
    Tensor pe = sinusoid_position_table(3, 4);
    CHECK(pe.at(0, 0) == doctest::Approx(0.0));
    CHECK(pe.at(0, 1) == doctest::Approx(1.0));
    CHECK(pe.at(0, 2) == doctest::Approx(0.0));
    CHECK(pe.at(0, 3) == doctest::Approx(1.0));
    CHECK(pe.at(1, 0) == doctest::Approx(std::sin(1.0)));
    CHECK(pe.at(1, 1) == doctest::Approx(std::cos(1.0)));
    CHECK(pe.at(1, 2) == doctest::Approx(std::sin(0.01)));
    CHECK(pe.at(1, 3) == doctest::Approx(std::cos(0.01)));
}

TEST_CASE("monotonic alignment: p equal to one pins the first frame") {
    int m = 5;
    std::vector<std::vector<double>> p(4, std::vector<double>(m, 1.0));
    auto a = run_recurrence(p, m);
    for (const auto& row : a) {
        CHECK(row[0] == doctest::Approx(1.0));
        for (int j = 1; j < m; ++j) CHECK(row[j] == 0.0);
    }
}

TEST_CASE("monotonic alignment: p equal to zero drops all mass") {
    int m = 4;
    std::vector<std::vector<double>> p(3, std::vector<double>(m, 0.0));
    auto a = run_recurrence(p, m);
    for (const auto& row : a)
        for (double x : row) CHECK(x == 0.0);
}

TEST_CASE("monotonic recurrence equals path enumeration") {
    Rng rng(7);
    for (int trial = 0; trial < 40; ++trial) {
        int m = 2 + rng.uniform_int(5);  // up to 6 frames
        int steps = 1 + rng.uniform_int(4);
        std::vector<std::vector<double>> p(steps, std::vector<double>(m));
        for (auto& row : p)
            for (double& x : row) x = rng.uniform();
        auto got = run_recurrence(p, m);
        auto want = enumerate_monotonic(p, m);
        for (int t = 0; t < steps; ++t)
            for (int j = 0; j < m; ++j) CHECK(std::abs(got[t][j] - want[t][j]) < 1e-10);
    }
}

TEST_CASE("monotonic mass never exceeds one and absorbed stop position is monotone") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        int m = 6;
        std::vector<std::vector<double>> p(5, std::vector<double>(m));
        for (auto& row : p)
            for (double& x : row) x = rng.uniform();
        auto a = run_recurrence(p, m);
        double prev_absorbed = -1.0;
        for (const auto& row : a) {
            double mass = 0.0, ez = 0.0;
            for (int j = 0; j < m; ++j) {
                CHECK(row[j] >= -1e-15);
                mass += row[j];
                ez += j * row[j];
            }
            CHECK(mass <= 1.0 + 1e-9);
            // mass that fell off the end counts as stopped at position m
            double absorbed = ez + m * (1.0 - mass);
            CHECK(absorbed >= prev_absorbed - 1e-9);
            prev_absorbed = absorbed;
        }
    }
}

TEST_CASE("monotonic alignment gradient") {
    Rng rng(13);
    for (unsigned seed = 0; seed < 5; ++seed) {
        auto res = gradcheck(
            [](Tape& t, const std::vector<Var>& xs) {
                Var a = monotonic_alignment(t, xs[0], xs[1]);
                Tensor w({2, 4});
                Rng r(99);
                fill_uniform(w, -1, 1, r);
                return sum_all(t, mul_mask(t, a, std::move(w)));
            },
            {rand_tensor({2, 4}, rng, 0.05, 0.95), rand_tensor({2, 4}, rng, 0.0, 0.3)});
        CHECK(res.max_err < 1e-6);
    }
}

TEST_CASE("chunkwise window of one reproduces monotonic alignment") {
    Rng rng(17);
    Tape t;
    Tensor alpha = rand_tensor({2, 5}, rng, 0.0, 0.5);
    Tensor u = rand_tensor({2, 5}, rng, -2.0, 2.0);
    Var av = t.input(alpha);
    Var uv = t.input(u);
    Var beta = chunkwise_spread(t, av, uv, 1, ones({2, 5}));
    for (size_t i = 0; i < alpha.v.size(); ++i)
        CHECK(t.val(beta).v[i] == doctest::Approx(alpha.v[i]).epsilon(1e-12));
}

TEST_CASE("chunkwise spread conserves mass") {
    Rng rng(19);
    for (int w : {1, 2, 3}) {
        for (int trial = 0; trial < 20; ++trial) {
            Tape t;
            int m = 6;
            Tensor alpha = rand_tensor({2, m}, rng, 0.0, 0.5);
            Tensor u = rand_tensor({2, m}, rng, -3.0, 3.0);
            Var beta = chunkwise_spread(t, t.input(alpha), t.input(u), w, ones({2, m}));
            for (int i = 0; i < 2; ++i) {
                double in = 0.0, out = 0.0;
                for (int j = 0; j < m; ++j) {
                    in += alpha.at(i, j);
                    out += t.val(beta).at(i, j);
                }
                CHECK(out == doctest::Approx(in).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("chunkwise spread with uniform energies splits alpha equally") {
    Tape t;
    int m = 5;
    Tensor alpha({1, m});
    alpha.v[3] = 0.9;  // all mass at k=3
    Var beta = chunkwise_spread(t, t.input(alpha), t.input(Tensor({1, m})), 3, ones({1, m}));
    CHECK(t.val(beta).v[1] == doctest::Approx(0.3));
    CHECK(t.val(beta).v[2] == doctest::Approx(0.3));
    CHECK(t.val(beta).v[3] == doctest::Approx(0.3));
    CHECK(t.val(beta).v[0] == 0.0);
    CHECK(t.val(beta).v[4] == 0.0);
}

TEST_CASE("chunkwise window truncates at the sequence start") {
    Tape t;
    int m = 4;
    Tensor alpha({1, m});
    alpha.v[0] = 1.0;  // stop at the first frame: window is just {0}
    Var beta = chunkwise_spread(t, t.input(alpha), t.input(Tensor({1, m})), 3, ones({1, m}));
    CHECK(t.val(beta).v[0] == doctest::Approx(1.0));
    for (int j = 1; j < m; ++j) CHECK(t.val(beta).v[j] == 0.0);
}

TEST_CASE("chunkwise spread gradient") {
    Rng rng(23);
    auto res = gradcheck(
        [](Tape& t, const std::vector<Var>& xs) {
            Var beta = chunkwise_spread(t, xs[0], xs[1], 3, ones({2, 5}));
            Tensor w({2, 5});
            Rng r(5);
            fill_uniform(w, -1, 1, r);
            return sum_all(t, mul_mask(t, beta, std::move(w)));
        },
        {rand_tensor({2, 5}, rng, 0.0, 0.4), rand_tensor({2, 5}, rng, -1.0, 1.0)});
    CHECK(res.max_err < 1e-6);
}

TEST_CASE("gaussian window concentrates, stays symmetric, and tracks kappa") {
    int m = 9;
    {
        Tape t;
        Var w = gaussian_window(t, t.input(Tensor({1}, {3.0})), t.input(Tensor({1}, {0.05})), m,
                                ones({1, m}));
        Var norm = div_by_col(t, w, row_sum(t, w));
        CHECK(t.val(norm).v[3] == doctest::Approx(1.0).epsilon(1e-9));
    }
    {
        Tape t;
        Var w = gaussian_window(t, t.input(Tensor({1}, {4.0})), t.input(Tensor({1}, {1.5})), m,
                                ones({1, m}));
        const Tensor& wv = t.val(w);
        for (int j = 0; j < m; ++j) CHECK(wv.v[j] == doctest::Approx(wv.v[m - 1 - j]));
    }
    {
        int prev_arg = -1;
        for (int step = 0; step < 4; ++step) {
            Tape t;
            double kappa = 1.0 + step;
            Var w = gaussian_window(t, t.input(Tensor({1}, {kappa})), t.input(Tensor({1}, {0.8})),
                                    m, ones({1, m}));
            const Tensor& wv = t.val(w);
            int arg = 0;
            for (int j = 1; j < m; ++j)
                if (wv.v[j] > wv.v[arg]) arg = j;
            if (prev_arg >= 0) CHECK(arg == prev_arg + 1);
            prev_arg = arg;
        }
    }
}

namespace {

MechanismSetup* make_setup(AttentionMechanism mech, ScoreForm form, ScoreStyle style,
                           PositionalScheme pe, unsigned seed, int b = 2, int m = 5, int o = 4,
                           int sdim = 6) {
    auto* su = new MechanismSetup{};
    Rng rng(1000 + seed);
    AttentionConfig cfg;
    cfg.mechanism = mech;
    cfg.score_form = form;
    cfg.score_style = style;
    cfg.attention_dim = 8;
    cfg.chunk_window = 3;
    cfg.location_conv_kernel = 3;
    cfg.location_conv_filters = 4;
    cfg.positional_encoding = pe;
    su->attn = AttentionModule(su->ps, cfg, sdim, o, rng);
    su->h = rand_tensor({b, m, o}, rng);
    su->s = rand_tensor({b, sdim}, rng);
    su->mask = ones({b, m});
    su->lengths.assign(b, m);
    return su;
}

EncodedFeatures fake_features(Tape& t, const MechanismSetup& su, Var feats) {
    EncodedFeatures enc;
    enc.features = feats;
    enc.lengths = su.lengths;
    enc.mask = su.mask;
    enc.logit_compatible = false;
    return enc;
}

}  // namespace

TEST_CASE("zero inputs give zero Bahdanau scores") {
    auto* su = make_setup(AttentionMechanism::Content, ScoreForm::Standard, ScoreStyle::Bahdanau,
                          PositionalScheme::None, 1);
    // zero out every scorer parameter input
    Tape t;
    EncodedFeatures enc = fake_features(t, *su, t.input(Tensor({2, 5, 4})));
    auto mem = su->attn.prepare(t, enc);
    auto st = su->attn.initial_state(t, 2, 5);
    Var e = su->attn.scores(t, mem, t.input(Tensor({2, 6})), st);
    for (double x : t.val(e).v) CHECK(x == doctest::Approx(0.0));
    delete su;
}

TEST_CASE("normalized score with unit gain ratio equals the standard score") {
    // two modules sharing parameter values; gain = ||v||, offset = 0
    auto* a = make_setup(AttentionMechanism::Content, ScoreForm::Standard, ScoreStyle::Bahdanau,
                         PositionalScheme::None, 2);
    auto* b = make_setup(AttentionMechanism::Content, ScoreForm::Normalized, ScoreStyle::Bahdanau,
                         PositionalScheme::None, 2);
    for (auto* p : b->ps.all()) {
        if (auto* src = a->ps.find(p->name)) p->value = src->value;
    }
    // construction already sets g to ||v|| and r to 0
    Tape ta, tb;
    EncodedFeatures ea = fake_features(ta, *a, ta.input(a->h));
    EncodedFeatures eb = fake_features(tb, *b, tb.input(a->h));
    auto ma = a->attn.prepare(ta, ea);
    auto mb = b->attn.prepare(tb, eb);
    Var sa = a->attn.scores(ta, ma, ta.input(a->s), a->attn.initial_state(ta, 2, 5));
    Var sb = b->attn.scores(tb, mb, tb.input(a->s), b->attn.initial_state(tb, 2, 5));
    for (size_t i = 0; i < ta.val(sa).v.size(); ++i)
        CHECK(ta.val(sa).v[i] == doctest::Approx(tb.val(sb).v[i]).epsilon(1e-9));
    delete a;
    delete b;
}

TEST_CASE("hybrid score with zero previous alignment equals the plain score") {
    auto* hy = make_setup(AttentionMechanism::HybridMonotonic, ScoreForm::Standard,
                          ScoreStyle::Bahdanau, PositionalScheme::None, 3);
    auto* plain = make_setup(AttentionMechanism::Monotonic, ScoreForm::Standard,
                             ScoreStyle::Bahdanau, PositionalScheme::None, 3);
    for (auto* p : plain->ps.all()) {
        if (auto* src = hy->ps.find(p->name)) p->value = src->value;
    }
    // zero conv bias is the default; zero alignment kills the conv output
    Tape t1, t2;
    auto m1 = hy->attn.prepare(t1, fake_features(t1, *hy, t1.input(hy->h)));
    auto m2 = plain->attn.prepare(t2, fake_features(t2, *plain, t2.input(hy->h)));
    auto st1 = hy->attn.initial_state(t1, 2, 5);
    st1.attended_weights = t1.constant(Tensor({2, 5}));  // zero alignment
    Var e1 = hy->attn.scores(t1, m1, t1.input(hy->s), st1);
    Var e2 = plain->attn.scores(t2, m2, t2.input(hy->s), plain->attn.initial_state(t2, 2, 5));
    for (size_t i = 0; i < t1.val(e1).v.size(); ++i)
        CHECK(t1.val(e1).v[i] == doctest::Approx(t2.val(e2).v[i]).epsilon(1e-9));
    delete hy;
    delete plain;
}

TEST_CASE("content attention: equal scores over valid positions spread uniformly") {
    auto* su = make_setup(AttentionMechanism::Content, ScoreForm::Standard, ScoreStyle::Bahdanau,
                          PositionalScheme::None, 4);
    su->mask.at(0, 4) = 0.0;  // item 0 has only 4 valid frames
    su->lengths[0] = 4;
    Tape t;
    // constant features make every score equal
    Tensor h({2, 5, 4});
    for (int i = 0; i < 2; ++i)
        for (int s = 0; s < 5; ++s)
            for (int j = 0; j < 4; ++j) h.v[(static_cast<size_t>(i) * 5 + s) * 4 + j] = 0.3 * j;
    auto mem = su->attn.prepare(t, fake_features(t, *su, t.input(h)));
    auto [ctx, st] = su->attn.step(t, mem, t.input(su->s), su->attn.initial_state(t, 2, 5));
    const Tensor& w = t.val(ctx.weights);
    for (int j = 0; j < 4; ++j) CHECK(w.at(0, j) == doctest::Approx(0.25));
    CHECK(w.at(0, 4) == 0.0);  // masked position carries exactly zero
    for (int j = 0; j < 5; ++j) CHECK(w.at(1, j) == doctest::Approx(0.2));
    delete su;
}

TEST_CASE("penalized attention: first step is softmax, repeats get discounted, uniform stays uniform") {
    auto* su = make_setup(AttentionMechanism::Penalized, ScoreForm::Standard, ScoreStyle::Bahdanau,
                          PositionalScheme::None, 5);
    Tape t;
    auto mem = su->attn.prepare(t, fake_features(t, *su, t.input(su->h)));
    auto st0 = su->attn.initial_state(t, 2, 5);
    Var s_t = t.input(su->s);

    Var e = su->attn.scores(t, mem, s_t, st0);
    auto [ctx1, st1] = su->attn.step(t, mem, s_t, st0);
    Var ref = softmax_rows(t, e, su->mask);
    for (size_t i = 0; i < t.val(ref).v.size(); ++i)
        CHECK(t.val(ctx1.weights).v[i] == doctest::Approx(t.val(ref).v[i]).epsilon(1e-9));

    // same query again: the dominant position must lose weight
    auto [ctx2, st2] = su->attn.step(t, mem, s_t, st1);
    const Tensor& w1 = t.val(ctx1.weights);
    const Tensor& w2 = t.val(ctx2.weights);
    for (int i = 0; i < 2; ++i) {
        int arg = 0;
        for (int j = 1; j < 5; ++j)
            if (w1.at(i, j) > w1.at(i, arg)) arg = j;
        CHECK(w2.at(i, arg) < w1.at(i, arg));
        // weights still normalized
        double sum = 0.0;
        for (int j = 0; j < 5; ++j) sum += w2.at(i, j);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }

    // uniform scores stay uniform through the penalty
    Tape t2;
    Tensor zero_h({2, 5, 4});
    auto mem2 = su->attn.prepare(t2, fake_features(t2, *su, t2.input(zero_h)));
    Var zs = t2.input(Tensor({2, 6}));
    auto stA = su->attn.initial_state(t2, 2, 5);
    auto [cA, stB] = su->attn.step(t2, mem2, zs, stA);
    auto [cB, stC] = su->attn.step(t2, mem2, zs, stB);
    for (double x : t2.val(cB.weights).v) CHECK(x == doctest::Approx(0.2));
    delete su;
}

TEST_CASE("penalized accumulator is non-decreasing") {
    auto* su = make_setup(AttentionMechanism::Penalized, ScoreForm::Standard, ScoreStyle::Bahdanau,
                          PositionalScheme::None, 6);
    Tape t;
    auto mem = su->attn.prepare(t, fake_features(t, *su, t.input(su->h)));
    auto st = su->attn.initial_state(t, 2, 5);
    Tensor prev_acc;
    for (int step = 0; step < 4; ++step) {
        auto [ctx, next] = su->attn.step(t, mem, t.input(su->s), st);
        if (step > 0) {
            const Tensor& acc = t.val(next.log_acc);
            for (size_t i = 0; i < acc.v.size(); ++i)
                CHECK(std::exp(acc.v[i]) >= std::exp(prev_acc.v[i]) - 1e-12);
        }
        prev_acc = t.val(next.log_acc);
        st = next;
    }
    delete su;
}

TEST_CASE("location attention walks right and stays normalized") {
    auto* su = make_setup(AttentionMechanism::Location, ScoreForm::Standard, ScoreStyle::Bahdanau,
                          PositionalScheme::None, 7, 1, 8, 4, 6);
    Tape t;
    auto mem = su->attn.prepare(t, fake_features(t, *su, t.input(rand_tensor(
                                                        {1, 8, 4}, *(new Rng(3))))));
    auto st = su->attn.initial_state(t, 1, 8);
    double prev_kappa = 0.0;
    for (int step = 0; step < 3; ++step) {
        auto [ctx, next] = su->attn.step(t, mem, t.input(su->s), st);
        double kappa = t.val(next.kappa).v[0];
        CHECK(kappa > prev_kappa);  // exp drift is strictly positive
        double sum = 0.0;
        for (double x : t.val(ctx.weights).v) {
            CHECK(x >= 0.0);
            sum += x;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        prev_kappa = kappa;
        st = next;
    }
    delete su;
}

TEST_CASE("context: one-hot selects, uniform averages, mixture interpolates") {
    Rng rng(31);
    Tensor h({1, 2, 2}, {1, 0, 0, 1});
    Tape t;
    Var hv = t.input(h);
    {
        Var w = t.input(Tensor({1, 2}, {1.0, 0.0}));
        Var c = weighted_seq_sum(t, hv, w);
        CHECK(t.val(c).v[0] == doctest::Approx(1.0));
        CHECK(t.val(c).v[1] == doctest::Approx(0.0));
    }
    {
        Var w = t.input(Tensor({1, 2}, {0.5, 0.5}));
        Var c = weighted_seq_sum(t, hv, w);
        CHECK(t.val(c).v[0] == doctest::Approx(0.5));
        CHECK(t.val(c).v[1] == doctest::Approx(0.5));
    }
    {
        Var w = t.input(Tensor({1, 2}, {0.25, 0.75}));
        Var c = weighted_seq_sum(t, hv, w);
        CHECK(t.val(c).v[0] == doctest::Approx(0.25));
        CHECK(t.val(c).v[1] == doctest::Approx(0.75));
    }
}

TEST_CASE("positional scheme none leaves features untouched") {
    auto* su = make_setup(AttentionMechanism::Content, ScoreForm::Standard, ScoreStyle::Bahdanau,
                          PositionalScheme::None, 8);
    Tape t;
    Var feats = t.input(su->h);
    auto mem = su->attn.prepare(t, fake_features(t, *su, feats));
    CHECK(t.val(mem.features).v == su->h.v);
    delete su;
}

TEST_CASE("sinusoid positions add onto valid frames only") {
    auto* su = make_setup(AttentionMechanism::Content, ScoreForm::Standard, ScoreStyle::Bahdanau,
                          PositionalScheme::Sinusoid, 9);
    su->mask.at(1, 4) = 0.0;
    su->lengths[1] = 4;
    Tensor h = su->h;
    // zero the padded frame so the expectation is clean
    for (int j = 0; j < 4; ++j) h.v[(1 * 5 + 4) * 4 + j] = 0.0;
    Tape t;
    auto mem = su->attn.prepare(t, fake_features(t, *su, t.input(h)));
    Tensor pe = sinusoid_position_table(5, 4);
    const Tensor& out = t.val(mem.features);
    for (int s = 0; s < 5; ++s)
        for (int j = 0; j < 4; ++j)
            CHECK(out.v[(0 * 5 + s) * 4 + j] ==
                  doctest::Approx(h.v[(0 * 5 + s) * 4 + j] + pe.at(s, j)));
    for (int j = 0; j < 4; ++j) CHECK(out.v[(1 * 5 + 4) * 4 + j] == 0.0);
    delete su;
}

TEST_CASE("learned positions reject overlong sequences") {
    Rng rng(41);
    ParamStore ps;
    AttentionConfig cfg;
    cfg.mechanism = AttentionMechanism::Content;
    cfg.attention_dim = 8;
    cfg.positional_encoding = PositionalScheme::Learned;
    cfg.max_learned_positions = 4;
    AttentionModule attn(ps, cfg, 6, 4, rng);
    Tape t;
    EncodedFeatures enc;
    enc.features = t.input(Tensor({1, 5, 4}));
    enc.lengths = {5};
    enc.mask = ones({1, 5});
    CHECK_THROWS(attn.prepare(t, enc));
}

TEST_CASE("luong scores are bilinear in state and features") {
    auto* su = make_setup(AttentionMechanism::Content, ScoreForm::Standard, ScoreStyle::Luong,
                          PositionalScheme::None, 10);
    Tape t;
    auto mem = su->attn.prepare(t, fake_features(t, *su, t.input(su->h)));
    Var e = su->attn.scores(t, mem, t.input(su->s), su->attn.initial_state(t, 2, 5));
    // doubling the state doubles the score
    Tensor s2 = su->s;
    for (double& x : s2.v) x *= 2.0;
    Var e2 = su->attn.scores(t, mem, t.input(s2), su->attn.initial_state(t, 2, 5));
    for (size_t i = 0; i < t.val(e).v.size(); ++i)
        CHECK(t.val(e2).v[i] == doctest::Approx(2.0 * t.val(e).v[i]).epsilon(1e-9));
    delete su;
}

TEST_CASE("luong with normalized form is rejected") {
    AttentionConfig cfg;
    cfg.score_style = ScoreStyle::Luong;
    cfg.score_form = ScoreForm::Normalized;
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("every mechanism end-to-end matches finite differences") {
    struct Case {
        AttentionMechanism mech;
        ScoreForm form;
        ScoreStyle style;
    };
    std::vector<Case> cases = {
        {AttentionMechanism::Content, ScoreForm::Standard, ScoreStyle::Bahdanau},
        {AttentionMechanism::Content, ScoreForm::Normalized, ScoreStyle::Bahdanau},
        {AttentionMechanism::Content, ScoreForm::Standard, ScoreStyle::Luong},
        {AttentionMechanism::Penalized, ScoreForm::Standard, ScoreStyle::Bahdanau},
        {AttentionMechanism::Location, ScoreForm::Standard, ScoreStyle::Bahdanau},
        {AttentionMechanism::Monotonic, ScoreForm::Standard, ScoreStyle::Bahdanau},
        {AttentionMechanism::Monotonic, ScoreForm::Normalized, ScoreStyle::Bahdanau},
        {AttentionMechanism::Chunkwise, ScoreForm::Standard, ScoreStyle::Bahdanau},
        {AttentionMechanism::HybridMonotonic, ScoreForm::Normalized, ScoreStyle::Bahdanau},
        {AttentionMechanism::HybridChunkwise, ScoreForm::Normalized, ScoreStyle::Bahdanau},
    };
    for (size_t ci = 0; ci < cases.size(); ++ci) {
        auto* su = make_setup(cases[ci].mech, cases[ci].form, cases[ci].style,
                              PositionalScheme::None, 60 + static_cast<unsigned>(ci));
        // two steps so state carry-over is differentiated as well
        auto loss_fn = [su](Tape& t, const std::vector<Var>& xs) {
            EncodedFeatures enc;
            enc.features = xs[0];
            enc.lengths = su->lengths;
            enc.mask = su->mask;
            auto mem = su->attn.prepare(t, enc);
            auto st = su->attn.initial_state(t, 2, 5);
            auto [c1, st1] = su->attn.step(t, mem, xs[1], st);
            auto [c2, st2] = su->attn.step(t, mem, xs[2], st1);
            Tensor w1({2, 4}), w2({2, 8});
            Rng r(77);
            fill_uniform(w1, -1, 1, r);
            fill_uniform(w2, -1, 1, r);
            Var l1 = sum_all(t, mul_mask(t, c2.context, std::move(w1)));
            Var l2 = sum_all(t, mul_mask(t, c2.attended_summary, std::move(w2)));
            Var l3 = sum_all(t, c1.context);
            return add(t, add(t, l1, l2), l3);
        };
        Rng rng(500 + static_cast<unsigned>(ci));
        INFO("mechanism ", to_string(cases[ci].mech), " form ", to_string(cases[ci].form));
        auto res = gradcheck(loss_fn,
                             {rand_tensor({2, 5, 4}, rng), rand_tensor({2, 6}, rng),
                              rand_tensor({2, 6}, rng)},
                             1e-5);
        CHECK(res.max_err < 1e-4);
        delete su;
    }
}

TEST_CASE("soft mechanisms normalize over valid positions at every step") {
    for (auto mech : {AttentionMechanism::Content, AttentionMechanism::Penalized,
                      AttentionMechanism::Location}) {
        auto* su = make_setup(mech, ScoreForm::Standard, ScoreStyle::Bahdanau,
                              PositionalScheme::None, 80 + static_cast<int>(mech));
        su->mask.at(0, 4) = 0.0;
        su->lengths[0] = 4;
        Tape t;
        auto mem = su->attn.prepare(t, fake_features(t, *su, t.input(su->h)));
        auto st = su->attn.initial_state(t, 2, 5);
        for (int step = 0; step < 3; ++step) {
            auto [ctx, next] = su->attn.step(t, mem, t.input(su->s), st);
            const Tensor& w = t.val(ctx.weights);
            for (int i = 0; i < 2; ++i) {
                double sum = 0.0;
                for (int j = 0; j < 5; ++j) sum += w.at(i, j);
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
            }
            CHECK(w.at(0, 4) == 0.0);
            st = next;
        }
        delete su;
    }
}

TEST_CASE("attention state round trip through values") {
    auto* su = make_setup(AttentionMechanism::HybridChunkwise, ScoreForm::Normalized,
                          ScoreStyle::Bahdanau, PositionalScheme::None, 90);
    Tape t;
    auto mem = su->attn.prepare(t, fake_features(t, *su, t.input(su->h)));
    auto st = su->attn.initial_state(t, 2, 5);
    auto [ctx, st1] = su->attn.step(t, mem, t.input(su->s), st);
    auto vals = su->attn.state_values(t, st1);
    Tape t2;
    auto st2 = su->attn.state_from_values(t2, vals);
    CHECK(t2.val(st2.prev_weights).v == t.val(st1.prev_weights).v);
    CHECK(st2.step == st1.step);
    delete su;
}
