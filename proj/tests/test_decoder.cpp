#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "htr/seq2seq.hpp"

using namespace htr;

namespace {

// Toy step model whose distribution is a deterministic pseudo-random function
// of the whole prefix; exhaustive enumeration below explores the same tree.
struct ToyModel {
    using State = std::vector<int>;  // the prefix
    int outputs;
    uint64_t seed;

    State initial() const { return {}; }
    int num_outputs() const { return outputs; }
    int eos_index() const { return outputs - 1; }

    std::vector<double> dist_for(const State& prefix) const {
        uint64_t h = seed * 0x9e3779b97f4a7c15ULL + 0x51ULL;
        for (int tok : prefix) h = (h ^ static_cast<uint64_t>(tok + 1)) * 0xbf58476d1ce4e5b9ULL;
        std::vector<double> logits(outputs);
        for (int k = 0; k < outputs; ++k) {
            h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
            logits[k] = static_cast<double>((h >> 11) % 1000) / 250.0;
        }
        double hi = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double& x : logits) z += std::exp(x - hi);
        for (double& x : logits) x = x - hi - std::log(z);
        return logits;
    }

    StepOut<State> step(const State& s, int prev) const {
        State next = s;
        if (prev >= 0) next.push_back(prev);
        StepOut<State> out;
        out.log_probs = dist_for(next);
        out.state = next;
        return out;
    }
};

struct Best {
    std::vector<int> tokens;
    double lp = -1e300;
};

// exhaustive search over every sequence that terminates with eos within the
// step budget
void enumerate(const ToyModel& m, std::vector<int>& prefix, double lp, int steps_left, Best& best) {
    auto dist = m.dist_for(prefix);
    // finish here
    double done = lp + dist[m.eos_index()];
    if (done > best.lp) {
        best.lp = done;
        best.tokens = prefix;
    }
    if (steps_left <= 1) return;
    for (int k = 0; k + 1 < m.outputs; ++k) {
        prefix.push_back(k);
        enumerate(m, prefix, lp + dist[k], steps_left - 1, best);
        prefix.pop_back();
    }
}

}  // namespace

TEST_CASE("beam width 16 finds the exhaustive argmax on enumerable toys") {
    for (uint64_t seed = 0; seed < 60; ++seed) {
        ToyModel m{4, seed};
        Best best;
        std::vector<int> prefix;
        enumerate(m, prefix, 0.0, 3, best);
        auto res = beam_search(m, 16, 3, m.eos_index());
        REQUIRE_FALSE(res.truncated);
        CHECK(res.tokens == best.tokens);
        CHECK(res.log_prob == doctest::Approx(best.lp).epsilon(1e-12));
    }
}

TEST_CASE("beam width 1 equals greedy on 100 random models") {
    for (uint64_t seed = 100; seed < 200; ++seed) {
        ToyModel m{4, seed};
        auto beam = beam_search(m, 1, 6, m.eos_index());
        auto greedy = greedy_decode(m, 6, m.eos_index());
        CHECK(beam.tokens == greedy.tokens);
        CHECK(beam.truncated == greedy.truncated);
        if (!beam.truncated) CHECK(beam.log_prob == doctest::Approx(greedy.log_prob));
    }
}

TEST_CASE("beam score is at least the greedy score") {
    for (uint64_t seed = 300; seed < 360; ++seed) {
        ToyModel m{4, seed};
        auto beam = beam_search(m, 16, 3, m.eos_index());
        auto greedy = greedy_decode(m, 3, m.eos_index());
        if (!beam.truncated && !greedy.truncated) CHECK(beam.log_prob >= greedy.log_prob - 1e-12);
    }
}

namespace {

// model that puts probability ~1 on eos immediately
struct EosModel {
    using State = int;
    State initial() const { return 0; }
    int num_outputs() const { return 3; }
    StepOut<State> step(const State& s, int) const {
        return {{std::log(1e-9), std::log(1e-9), std::log(1.0 - 2e-9)}, s + 1, {}};
    }
};

// model that never emits eos with non-negligible probability
struct NeverEndModel {
    using State = int;
    State initial() const { return 0; }
    int num_outputs() const { return 2; }
    StepOut<State> step(const State& s, int) const {
        return {{std::log(1.0 - 1e-12), std::log(1e-12)}, s + 1, {}};
    }
};

}  // namespace

TEST_CASE("immediate eos gives an empty transcript") {
    EosModel m;
    auto res = beam_search(m, 16, 10, 2);
    CHECK(res.tokens.empty());
    CHECK_FALSE(res.truncated);
}

TEST_CASE("no eos within the budget returns the best unfinished hypothesis flagged") {
    NeverEndModel m;
    // width 1 keeps the low-probability eos extension out of the beam
    auto res = beam_search(m, 1, 5, 1);
    CHECK(res.truncated);
    CHECK(res.tokens.size() == 5);

    // a finished hypothesis always wins over unfinished ones, however unlikely
    auto wide = beam_search(m, 4, 5, 1);
    CHECK_FALSE(wide.truncated);
    CHECK(wide.tokens.empty());
}

// ---------------------------------------------------------------- real model

namespace {

ModelConfig tiny_model_config() {
    ModelConfig mc;
    mc.encoder.conv_stack = parse_conv_stack("C4x4s4x2f4,P4x2s4x2,C3x3s1x1f6,P1x2s1x2");
    mc.encoder.blstm_units = 8;
    mc.encoder.blstm_layers = 1;
    mc.encoder.dropout = 0.0;
    mc.attention.mechanism = AttentionMechanism::HybridMonotonic;
    mc.attention.score_form = ScoreForm::Normalized;
    mc.attention.attention_dim = 8;
    mc.attention.location_conv_kernel = 3;
    mc.attention.location_conv_filters = 4;
    mc.decoder.hidden_units = 8;
    mc.decoder.embedding_dim = 4;
    mc.decoder.dropout = 0.0;
    return mc;
}

struct Fixture {
    ParamStore ps;
    Seq2SeqModel model;
    Tensor image;
    Fixture()
        : model(ps, tiny_model_config(), Alphabet::from_utf8("ab"), 99), image({1, 64, 48, 1}) {
        Rng rng(5);
        fill_uniform(image, 0.0, 1.0, rng);
    }
};

}  // namespace

TEST_CASE("decode_step returns a distribution summing to one") {
    Fixture f;
    Tape t;
    Rng rng(1);
    auto enc = f.model.encoder().encode(t, f.image, {48}, false, rng);
    auto mem = f.model.attention().prepare(t, enc);
    auto st = f.model.decoder().initial_state(t, mem, false, nullptr);
    auto [dist, st2] = f.model.decoder().decode_step(t, mem, {f.model.alphabet().sos_id()}, st,
                                                     false, nullptr);
    double sum = 0.0;
    for (double x : t.val(dist).v) sum += x;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(t.val(dist).dim(1) == 3);  // a, b, eos
    CHECK_THROWS(f.model.decoder().decode_step(t, mem, {99}, st, false, nullptr));
}

TEST_CASE("zero logits parameters give a uniform distribution") {
    Fixture f;
    f.ps.get("decoder/logits/w").value = Tensor(f.ps.get("decoder/logits/w").value.shape);
    f.ps.get("decoder/logits/b").value = Tensor(f.ps.get("decoder/logits/b").value.shape);
    Tape t;
    Rng rng(1);
    auto enc = f.model.encoder().encode(t, f.image, {48}, false, rng);
    auto mem = f.model.attention().prepare(t, enc);
    auto st = f.model.decoder().initial_state(t, mem, false, nullptr);
    auto [dist, st2] = f.model.decoder().decode_step(t, mem, {f.model.alphabet().sos_id()}, st,
                                                     false, nullptr);
    for (double x : t.val(dist).v) CHECK(x == doctest::Approx(1.0 / 3).epsilon(1e-9));
}

TEST_CASE("decode_step is pure: identical inputs, identical outputs") {
    Fixture f;
    auto run = [&] {
        Tape t;
        Rng rng(1);
        auto enc = f.model.encoder().encode(t, f.image, {48}, false, rng);
        auto mem = f.model.attention().prepare(t, enc);
        auto st = f.model.decoder().initial_state(t, mem, false, nullptr);
        auto [dist, st2] =
            f.model.decoder().decode_step(t, mem, {f.model.alphabet().sos_id()}, st, false, nullptr);
        return t.val(dist).v;
    };
    CHECK(run() == run());
}

TEST_CASE("teacher forced unroll: gold rows, determinism, noise reproducibility") {
    Fixture f;
    auto rows = f.model.target_rows({"ab"});
    REQUIRE(rows[0].size() == 4);  // sos a b eos

    auto run = [&](double noise, uint64_t seed) {
        Tape t;
        Rng rng(seed);
        auto enc = f.model.encoder().encode(t, f.image, {48}, false, rng);
        auto mem = f.model.attention().prepare(t, enc);
        auto un = f.model.decoder().teacher_forced_unroll(t, mem, rows, noise, false, rng);
        std::vector<double> flat;
        for (Var d : un.step_dists)
            for (double x : t.val(d).v) flat.push_back(x);
        return flat;
    };
    CHECK(run(0.0, 1) == run(0.0, 2));  // no noise: rng must not matter
    CHECK(run(1.0, 7) == run(1.0, 7));  // full noise: reproducible under a fixed seed

    Tape t;
    Rng rng(1);
    auto enc = f.model.encoder().encode(t, f.image, {48}, false, rng);
    auto mem = f.model.attention().prepare(t, enc);
    auto un = f.model.decoder().teacher_forced_unroll(t, mem, rows, 0.0, false, rng);
    CHECK(un.step_dists.size() == 3);
    CHECK(un.gold[0] == std::vector<int>{0, 1, 2});  // a, b, eos-output

    CHECK_THROWS(f.model.decoder().teacher_forced_unroll(t, mem, {{}}, 0.0, false, rng));
    CHECK_THROWS(
        f.model.decoder().teacher_forced_unroll(t, mem, {{f.model.alphabet().eos_id()}}, 0.0,
                                                false, rng));
}

TEST_CASE("beam decoding the same features twice gives identical results") {
    Fixture f;
    auto a = f.model.recognize_one(f.image, 48, 16);
    auto b = f.model.recognize_one(f.image, 48, 16);
    CHECK(a.text == b.text);
    CHECK(a.log_prob == b.log_prob);
    REQUIRE(a.attention_rows.size() == b.attention_rows.size());
    for (size_t i = 0; i < a.attention_rows.size(); ++i)
        CHECK(a.attention_rows[i] == b.attention_rows[i]);
    // the attention rows cover the valid frames
    if (!a.attention_rows.empty()) CHECK(a.attention_rows[0].size() == 6);  // ceil(48/8)
}

TEST_CASE("width-1 beam equals greedy on the real model") {
    Fixture f;
    auto beam1 = f.model.recognize_one(f.image, 48, 1);
    Tape t;
    Rng rng(0);
    auto enc = f.model.encoder().encode(t, f.image, {48}, false, rng);
    auto mem = f.model.attention().prepare(t, enc);
    DecoderStepModel stepper(f.model.decoder(), f.model.decoder().memory_values(t, mem));
    auto greedy = greedy_decode(stepper, f.model.decoder().max_steps_for(6), stepper.eos_index());
    std::vector<int> ids(greedy.tokens.begin(), greedy.tokens.end());
    CHECK(beam1.text == f.model.alphabet().decode(ids));
}

TEST_CASE("decoder config validation") {
    DecoderConfig cfg;
    cfg.validate();
    cfg.beam_width = 0;
    CHECK_THROWS(cfg.validate());
    DecoderConfig cfg2;
    CHECK(cfg2.max_decode_steps == 0);
    cfg2.hidden_units = -1;
    CHECK_THROWS(cfg2.validate());
}
