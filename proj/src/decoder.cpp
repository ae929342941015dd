#include "htr/decoder.hpp"

#include <cmath>

namespace htr {

void DecoderConfig::validate() const {
    require(hidden_units > 0 && embedding_dim > 0, "decoder dims must be positive");
    require(dropout >= 0.0 && dropout < 1.0, "decoder dropout must lie in [0,1)");
    require(beam_width >= 1, "beam width must be at least 1");
    require(max_decode_steps >= 0, "max decode steps must be non-negative");
}

Decoder::Decoder(ParamStore& ps, const DecoderConfig& cfg, const Alphabet& alphabet,
                 const AttentionModule* attention, Rng& rng)
    : cfg_(cfg), alphabet_(&alphabet), attention_(attention) {
    cfg_.validate();
    require(attention != nullptr, "decoder needs an attention module");
    embedding_ = Embedding(ps, "decoder/embedding", alphabet.total_ids(), cfg.embedding_dim, rng);
    int attn_dim = attention->config().attention_dim;
    lstm_ = Lstm(ps, "decoder/lstm", cfg.embedding_dim + attn_dim, cfg.hidden_units, rng);
    logits_ = Dense(ps, "decoder/logits", cfg.hidden_units + attn_dim, alphabet.decoder_outputs(),
                    rng);
}

Decoder::StepState Decoder::initial_state(Tape& t, const AttentionModule::Memory& mem, bool train,
                                          Rng* rng) const {
    StepState st;
    st.h = t.constant(Tensor({mem.batch, cfg_.hidden_units}));
    st.c = t.constant(Tensor({mem.batch, cfg_.hidden_units}));
    AttentionState attn0 = attention_->initial_state(t, mem.batch, mem.frames);
    // cbar_0 from a zero decoder state
    auto [ctx, attn1] = attention_->step(t, mem, st.h, attn0, train ? rng : nullptr);
    st.cbar = ctx.attended_summary;
    st.attn = attn1;
    return st;
}

std::pair<Var, Decoder::StepState> Decoder::decode_step(Tape& t,
                                                        const AttentionModule::Memory& mem,
                                                        const std::vector<int>& prev_tokens,
                                                        const StepState& state, bool train,
                                                        Rng* rng) const {
    for (int id : prev_tokens)
        require(id >= 0 && id < alphabet_->total_ids(),
                "decode_step: previous token " + std::to_string(id) + " out of range");
    Var emb = embedding_.lookup(t, prev_tokens);
    Var x = concat_cols(t, emb, state.cbar);
    auto [h, c] = lstm_.step(t, x, state.h, state.c);
    Var s = h;
    if (train && rng) s = dropout(t, s, cfg_.dropout, train, *rng);
    auto [ctx, attn] = attention_->step(t, mem, s, state.attn, train ? rng : nullptr);
    Var logits = logits_.apply(t, concat_cols(t, s, ctx.attended_summary));
    Var dist = softmax_rows(t, logits);
    StepState next;
    next.h = h;
    next.c = c;
    next.cbar = ctx.attended_summary;
    next.attn = attn;
    return {dist, next};
}

Decoder::Unroll Decoder::teacher_forced_unroll(Tape& t, const AttentionModule::Memory& mem,
                                               const std::vector<std::vector<int>>& target_rows,
                                               double noise_prob, bool train, Rng& rng) const {
    require(noise_prob >= 0.0 && noise_prob <= 1.0, "teacher noise must lie in [0,1]");
    int b = mem.batch;
    require(static_cast<int>(target_rows.size()) == b, "unroll: batch size mismatch");
    for (const auto& row : target_rows) {
        require(row.size() >= 2, "unroll: target must hold at least sos and eos");
        require(row.front() == alphabet_->sos_id(), "unroll: target must start with sos");
    }
    // row positions 0..L-2 are inputs, 1..L-1 the gold outputs
    Unroll un;
    un.gold.resize(b);
    for (int i = 0; i < b; ++i) {
        const auto& row = target_rows[i];
        bool saw_eos = false;
        for (size_t p = 1; p < row.size(); ++p) {
            if (saw_eos) {
                require(row[p] == alphabet_->pad_id(), "unroll: tokens after eos must be pad");
                continue;
            }
            un.gold[i].push_back(alphabet_->output_index_of(row[p]));
            if (row[p] == alphabet_->eos_id()) saw_eos = true;
        }
        require(saw_eos, "unroll: target must contain eos");
    }

    StepState st = initial_state(t, mem, train, &rng);
    std::vector<int> prev(b, alphabet_->sos_id());
    size_t steps = 0;
    for (const auto& g : un.gold) steps = std::max(steps, g.size());
    for (size_t s = 0; s < steps; ++s) {
        if (s > 0) {
            const Tensor& last = t.val(un.step_dists.back());
            for (int i = 0; i < b; ++i) {
                if (s >= un.gold[i].size()) {  // item already emitted its eos
                    prev[i] = alphabet_->pad_id();
                    continue;
                }
                if (noise_prob > 0.0 && rng.uniform() < noise_prob) {
                    // replace the teacher input by a sample from the previous
                    // output distribution
                    double u = rng.uniform();
                    double acc = 0.0;
                    int pick = alphabet_->decoder_outputs() - 1;
                    for (int k = 0; k < alphabet_->decoder_outputs(); ++k) {
                        acc += last.at(i, k);
                        if (u < acc) {
                            pick = k;
                            break;
                        }
                    }
                    prev[i] = alphabet_->token_of_output(pick);
                } else {
                    prev[i] = target_rows[i][s];
                }
            }
        }
        auto [dist, next] = decode_step(t, mem, prev, st, train, &rng);
        un.step_dists.push_back(dist);
        st = next;
    }
    return un;
}

Decoder::MemoryValues Decoder::memory_values(const Tape& t,
                                             const AttentionModule::Memory& mem) const {
    MemoryValues mv;
    mv.features = t.val(mem.features);
    mv.mask = mem.mask;
    mv.lengths = mem.lengths;
    if (mem.score_proj.valid()) {
        mv.score_proj = t.val(mem.score_proj);
        mv.has_score_proj = true;
    }
    if (mem.chunk_proj.valid()) {
        mv.chunk_proj = t.val(mem.chunk_proj);
        mv.has_chunk_proj = true;
    }
    return mv;
}

AttentionModule::Memory Decoder::memory_on_tape(Tape& t, const MemoryValues& mv) const {
    AttentionModule::Memory mem;
    mem.features = t.constant(mv.features);
    if (mv.has_score_proj) mem.score_proj = t.constant(mv.score_proj);
    if (mv.has_chunk_proj) mem.chunk_proj = t.constant(mv.chunk_proj);
    mem.mask = mv.mask;
    mem.lengths = mv.lengths;
    mem.batch = mv.features.dim(0);
    mem.frames = mv.features.dim(1);
    return mem;
}

DecoderStepModel::DecoderStepModel(const Decoder& dec, Decoder::MemoryValues mem)
    : dec_(dec), mem_(std::move(mem)) {
    require(mem_.features.dim(0) == 1, "DecoderStepModel decodes one item at a time");
}

DecoderStepModel::State DecoderStepModel::initial() const {
    Tape t;
    auto mem = dec_.memory_on_tape(t, mem_);
    auto st = dec_.initial_state(t, mem, false, nullptr);
    State v;
    v.h = t.val(st.h);
    v.c = t.val(st.c);
    v.cbar = t.val(st.cbar);
    v.attn = dec_.attention().state_values(t, st.attn);
    return v;
}

int DecoderStepModel::num_outputs() const { return dec_.alphabet().decoder_outputs(); }

int DecoderStepModel::eos_index() const {
    return dec_.alphabet().output_index_of(dec_.alphabet().eos_id());
}

StepOut<DecoderStepModel::State> DecoderStepModel::step(const State& s, int prev_output) const {
    Tape t;
    auto mem = dec_.memory_on_tape(t, mem_);
    Decoder::StepState st;
    st.h = t.constant(s.h);
    st.c = t.constant(s.c);
    st.cbar = t.constant(s.cbar);
    st.attn = dec_.attention().state_from_values(t, s.attn);
    int prev_token =
        prev_output < 0 ? dec_.alphabet().sos_id() : dec_.alphabet().token_of_output(prev_output);
    auto [dist, next] = dec_.decode_step(t, mem, {prev_token}, st, false, nullptr);
    StepOut<State> out;
    const Tensor& d = t.val(dist);
    out.log_probs.resize(d.v.size());
    for (size_t i = 0; i < d.v.size(); ++i) out.log_probs[i] = std::log(std::max(d.v[i], 1e-300));
    out.state.h = t.val(next.h);
    out.state.c = t.val(next.c);
    out.state.cbar = t.val(next.cbar);
    out.state.attn = dec_.attention().state_values(t, next.attn);
    const Tensor& w = t.val(next.attn.attended_weights);
    out.attention.assign(w.v.begin(), w.v.end());
    return out;
}

}  // namespace htr
