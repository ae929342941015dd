#pragma once

#include <optional>
#include <string>
#include <vector>

#include "htr/encoder.hpp"
#include "htr/nn.hpp"

namespace htr {

enum class AttentionMechanism {
    Content,
    Penalized,
    Location,
    Monotonic,
    Chunkwise,
    HybridMonotonic,
    HybridChunkwise,
};

enum class ScoreForm { Standard, Normalized };
enum class ScoreStyle { Bahdanau, Luong };
enum class PositionalScheme { None, Sinusoid, Learned };

AttentionMechanism attention_mechanism_from_string(const std::string& s);
std::string to_string(AttentionMechanism m);
ScoreForm score_form_from_string(const std::string& s);
std::string to_string(ScoreForm f);
ScoreStyle score_style_from_string(const std::string& s);
std::string to_string(ScoreStyle s);
PositionalScheme positional_scheme_from_string(const std::string& s);
std::string to_string(PositionalScheme p);

struct AttentionConfig {
    AttentionMechanism mechanism = AttentionMechanism::Content;
    ScoreForm score_form = ScoreForm::Standard;
    ScoreStyle score_style = ScoreStyle::Bahdanau;
    int attention_dim = 128;
    int chunk_window = 3;
    int location_conv_kernel = 7;
    int location_conv_filters = 20;
    PositionalScheme positional_encoding = PositionalScheme::None;
    double presigmoid_noise = 0.0;  // optional noise on monotonic energies
    int max_learned_positions = 512;

    bool monotonic_family() const {
        return mechanism == AttentionMechanism::Monotonic ||
               mechanism == AttentionMechanism::Chunkwise ||
               mechanism == AttentionMechanism::HybridMonotonic ||
               mechanism == AttentionMechanism::HybridChunkwise;
    }
    bool chunkwise_family() const {
        return mechanism == AttentionMechanism::Chunkwise ||
               mechanism == AttentionMechanism::HybridChunkwise;
    }
    bool hybrid() const {
        return mechanism == AttentionMechanism::HybridMonotonic ||
               mechanism == AttentionMechanism::HybridChunkwise;
    }
    void validate() const;
};

// Carry-over between decoding steps. Vars live on the tape that produced
// them; use to_values/from_values to move a state across tapes.
struct AttentionState {
    Var prev_weights;      // alignment driving the next step's recurrence [B,M]
    Var attended_weights;  // weights that formed the last context (location features)
    Var log_acc;           // penalized: logsumexp of past scores [B,M]
    Var kappa;             // location: window center [B]
    int step = 0;
};

struct AttentionStateValues {
    Tensor prev_weights, attended_weights, log_acc, kappa;
    int step = 0;
};

struct ContextVector {
    Var context;           // c_t [B,o]
    Var weights;           // attention weights used for c_t [B,M]
    Var attended_summary;  // cbar_t = tanh(W [c_t; s_t]) [B,attention_dim]
};

// Positional encoding table PE(pos,2i)=sin(pos/10000^(2i/d)),
// PE(pos,2i+1)=cos(pos/10000^(2i/d)).
Tensor sinusoid_position_table(int positions, int depth);

class AttentionModule {
  public:
    AttentionModule() = default;
    AttentionModule(ParamStore& ps, const AttentionConfig& cfg, int state_dim, int feature_dim,
                    Rng& rng);

    struct Memory {
        Var features;      // encoder features with positions injected [B,M,o]
        Var score_proj;    // cached W_h H
        Var chunk_proj;    // cached projection for the chunk-energy scorer
        Tensor mask;       // [B,M]
        std::vector<int> lengths;
        int batch = 0, frames = 0;
    };

    // Applies the positional encoding and caches the per-sequence projections.
    Memory prepare(Tape& t, const EncodedFeatures& enc) const;

    AttentionState initial_state(Tape& t, int batch, int frames) const;
    AttentionStateValues state_values(const Tape& t, const AttentionState& s) const;
    AttentionState state_from_values(Tape& t, const AttentionStateValues& v) const;

    // One attention evaluation for decoder state s_t. noise_rng enables the
    // optional monotonic pre-sigmoid noise (training only).
    std::pair<ContextVector, AttentionState> step(Tape& t, const Memory& mem, Var s_t,
                                                  const AttentionState& state,
                                                  Rng* noise_rng = nullptr) const;

    // Raw scores e_t for the main scorer (tests and diagnostics).
    Var scores(Tape& t, const Memory& mem, Var s_t, const AttentionState& state) const;

    const AttentionConfig& config() const { return cfg_; }

  private:
    Var scorer_scores(Tape& t, Var cached_proj, Var s_t, std::optional<Var> location_features,
                      bool chunk_scorer) const;
    Var location_feature_proj(Tape& t, Var prev_attended) const;

    AttentionConfig cfg_;
    int state_dim_ = 0, feature_dim_ = 0;

    // main scorer
    Parameter* w_s_ = nullptr;
    Parameter* w_h_ = nullptr;
    Parameter* bias_ = nullptr;
    Parameter* v_ = nullptr;
    Parameter* gain_ = nullptr;    // normalized form
    Parameter* offset_ = nullptr;  // normalized form
    // chunk-energy scorer
    Parameter* cw_s_ = nullptr;
    Parameter* cw_h_ = nullptr;
    Parameter* cbias_ = nullptr;
    Parameter* cv_ = nullptr;
    Parameter* cgain_ = nullptr;
    Parameter* coffset_ = nullptr;
    // hybrid location conv + projection
    Parameter* loc_kernel_ = nullptr;
    Parameter* loc_bias_ = nullptr;
    Parameter* w_f_ = nullptr;
    // location (Gaussian window) predictor
    Dense loc_predict_;
    // learned positional encodings
    Parameter* pos_table_ = nullptr;
    // attended summary
    Dense cbar_;
};

// Fused recurrences, exposed for direct testing.
// Expected monotonic alignment: alpha[j] = p[j] * (aprev[j] + (1-p[j-1]) * q[j-1]).
Var monotonic_alignment(Tape& t, Var p, Var alpha_prev);
// MoChA spread of monotonic mass over a trailing window via window softmax
// of the chunk energies. Windows truncate at the sequence start and at the
// valid-length boundary.
Var chunkwise_spread(Tape& t, Var alpha, Var energies, int window, Tensor mask);
// Unnormalized Gaussian window, stabilized by the per-row minimum distance;
// consume only through row normalization.
Var gaussian_window(Tape& t, Var kappa, Var sigma, int frames, Tensor mask);

}  // namespace htr
