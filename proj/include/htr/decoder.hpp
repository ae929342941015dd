#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "htr/alphabet.hpp"
#include "htr/attention.hpp"

namespace htr {

struct DecoderConfig {
    int hidden_units = 256;
    int embedding_dim = 64;
    double dropout = 0.5;
    int beam_width = 16;
    int max_decode_steps = 0;  // 0 derives 2*frames + 10 per sequence
    void validate() const;
};

// Result of a decode; tokens are decoder output indices without the final
// eos. attention holds one row of weights per performed step.
struct BeamResult {
    std::vector<int> tokens;
    double log_prob = 0.0;
    bool truncated = false;  // no hypothesis finished within the step budget
    std::vector<std::vector<double>> attention;
};

// Generic beam search over any step model:
//   struct Model {
//     using State = ...;                       // value-copyable
//     State initial() const;
//     int num_outputs() const;                 // eos is one of them
//     StepOut<State> step(const State&, int prev_output) const;  // -1 first
//   };
template <typename State>
struct StepOut {
    std::vector<double> log_probs;
    State state;
    std::vector<double> attention;  // optional
};

template <typename Model>
BeamResult beam_search(const Model& model, int beam_width, int max_steps, int eos_index) {
    using State = typename Model::State;
    struct Hyp {
        std::vector<int> tokens;
        double log_prob = 0.0;
        State state;
        std::vector<std::vector<double>> att;
    };
    require(beam_width >= 1, "beam width must be at least 1");
    require(max_steps >= 1, "max decode steps must be at least 1");

    std::vector<Hyp> live;
    live.push_back(Hyp{{}, 0.0, model.initial(), {}});
    std::vector<Hyp> done;

    for (int step = 0; step < max_steps && !live.empty(); ++step) {
        struct Cand {
            double lp;
            int parent;
            int tok;
        };
        std::vector<Cand> cands;
        std::vector<StepOut<State>> outs;
        outs.reserve(live.size());
        for (size_t i = 0; i < live.size(); ++i) {
            outs.push_back(model.step(live[i].state, live[i].tokens.empty()
                                                         ? -1
                                                         : live[i].tokens.back()));
            for (int k = 0; k < static_cast<int>(outs[i].log_probs.size()); ++k)
                cands.push_back({live[i].log_prob + outs[i].log_probs[k], static_cast<int>(i), k});
        }
        // ties resolved toward earlier parents then lower token ids
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.lp != b.lp) return a.lp > b.lp;
            if (a.parent != b.parent) return a.parent < b.parent;
            return a.tok < b.tok;
        });
        std::vector<Hyp> next;
        int taken = 0;
        for (const Cand& c : cands) {
            if (taken >= beam_width) break;
            ++taken;
            Hyp h = live[c.parent];  // copy-on-branch
            h.log_prob = c.lp;
            h.state = outs[c.parent].state;
            if (!outs[c.parent].attention.empty()) h.att.push_back(outs[c.parent].attention);
            if (c.tok == eos_index) {
                done.push_back(std::move(h));
            } else {
                h.tokens.push_back(c.tok);
                next.push_back(std::move(h));
            }
        }
        live = std::move(next);
        if (!done.empty()) {
            double best_done = done[0].log_prob;
            for (const auto& h : done) best_done = std::max(best_done, h.log_prob);
            bool improvable = false;
            for (const auto& h : live) improvable = improvable || h.log_prob > best_done;
            if (!improvable) break;  // extensions only lower scores
        }
    }

    auto best_of = [](const std::vector<Hyp>& hs) {
        size_t best = 0;
        for (size_t i = 1; i < hs.size(); ++i)
            if (hs[i].log_prob > hs[best].log_prob) best = i;
        return best;
    };
    BeamResult res;
    if (!done.empty()) {
        const Hyp& h = done[best_of(done)];
        res.tokens = h.tokens;
        res.log_prob = h.log_prob;
        res.attention = h.att;
    } else {
        require(!live.empty(), "beam search lost every hypothesis");
        const Hyp& h = live[best_of(live)];
        res.tokens = h.tokens;
        res.log_prob = h.log_prob;
        res.attention = h.att;
        res.truncated = true;
    }
    return res;
}

template <typename Model>
BeamResult greedy_decode(const Model& model, int max_steps, int eos_index) {
    BeamResult res;
    auto state = model.initial();
    int prev = -1;
    for (int step = 0; step < max_steps; ++step) {
        auto out = model.step(state, prev);
        int best = 0;
        for (int k = 1; k < static_cast<int>(out.log_probs.size()); ++k)
            if (out.log_probs[k] > out.log_probs[best]) best = k;
        res.log_prob += out.log_probs[best];
        if (!out.attention.empty()) res.attention.push_back(out.attention);
        if (best == eos_index) return res;
        res.tokens.push_back(best);
        state = out.state;
        prev = best;
    }
    res.truncated = true;
    return res;
}

class Decoder {
  public:
    Decoder() = default;
    Decoder(ParamStore& ps, const DecoderConfig& cfg, const Alphabet& alphabet,
            const AttentionModule* attention, Rng& rng);

    struct StepState {
        Var h, c;      // decoder LSTM carry
        Var cbar;      // attended summary fed to the next input
        AttentionState attn;
    };

    // Initial state: zero LSTM carry; cbar computed by an attention pass
    // with a zero decoder state.
    StepState initial_state(Tape& t, const AttentionModule::Memory& mem, bool train,
                            Rng* rng) const;

    // One decoding step for a batch of previous tokens (raw alphabet ids).
    // Returns the softmax distribution over decoder outputs [B, chars+eos].
    std::pair<Var, StepState> decode_step(Tape& t, const AttentionModule::Memory& mem,
                                          const std::vector<int>& prev_tokens,
                                          const StepState& state, bool train, Rng* rng) const;

    struct Unroll {
        std::vector<Var> step_dists;             // T entries of [B,K]
        std::vector<std::vector<int>> gold;      // per-item gold output indices
    };
    // Teacher forcing with sampling noise; target rows are raw token ids
    // beginning with sos and ending with eos.
    Unroll teacher_forced_unroll(Tape& t, const AttentionModule::Memory& mem,
                                 const std::vector<std::vector<int>>& target_rows,
                                 double noise_prob, bool train, Rng& rng) const;

    // Value-based state for cross-tape inference.
    struct StateValues {
        Tensor h, c, cbar;
        AttentionStateValues attn;
    };
    struct MemoryValues {
        Tensor features, score_proj, chunk_proj, mask;
        std::vector<int> lengths;
        bool has_score_proj = false, has_chunk_proj = false;
    };
    MemoryValues memory_values(const Tape& t, const AttentionModule::Memory& mem) const;
    AttentionModule::Memory memory_on_tape(Tape& t, const MemoryValues& mv) const;

    const DecoderConfig& config() const { return cfg_; }
    const Alphabet& alphabet() const { return *alphabet_; }
    const AttentionModule& attention() const { return *attention_; }
    int max_steps_for(int frames) const {
        return cfg_.max_decode_steps > 0 ? cfg_.max_decode_steps : 2 * frames + 10;
    }

  private:
    DecoderConfig cfg_;
    const Alphabet* alphabet_ = nullptr;
    const AttentionModule* attention_ = nullptr;
    Embedding embedding_;
    Lstm lstm_;
    Dense logits_;
};

// Step model running the real decoder one hypothesis at a time; plugs into
// beam_search / greedy_decode.
class DecoderStepModel {
  public:
    using State = Decoder::StateValues;

    DecoderStepModel(const Decoder& dec, Decoder::MemoryValues mem);
    State initial() const;
    int num_outputs() const;
    StepOut<State> step(const State& s, int prev_output) const;
    int eos_index() const;

  private:
    const Decoder& dec_;
    Decoder::MemoryValues mem_;
};

}  // namespace htr
