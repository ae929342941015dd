#include "htr/attention.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace htr {

AttentionMechanism attention_mechanism_from_string(const std::string& s) {
    if (s == "content") return AttentionMechanism::Content;
    if (s == "penalized") return AttentionMechanism::Penalized;
    if (s == "location") return AttentionMechanism::Location;
    if (s == "monotonic") return AttentionMechanism::Monotonic;
    if (s == "chunkwise") return AttentionMechanism::Chunkwise;
    if (s == "hybrid-monotonic") return AttentionMechanism::HybridMonotonic;
    if (s == "hybrid-chunkwise") return AttentionMechanism::HybridChunkwise;
    fail("unknown attention mechanism: " + s);
}

std::string to_string(AttentionMechanism m) {
    switch (m) {
        case AttentionMechanism::Content: return "content";
        case AttentionMechanism::Penalized: return "penalized";
        case AttentionMechanism::Location: return "location";
        case AttentionMechanism::Monotonic: return "monotonic";
        case AttentionMechanism::Chunkwise: return "chunkwise";
        case AttentionMechanism::HybridMonotonic: return "hybrid-monotonic";
        case AttentionMechanism::HybridChunkwise: return "hybrid-chunkwise";
    }
    return "?";
}

ScoreForm score_form_from_string(const std::string& s) {
    if (s == "standard") return ScoreForm::Standard;
    if (s == "normalized") return ScoreForm::Normalized;
    fail("unknown score form: " + s);
}

std::string to_string(ScoreForm f) {
    return f == ScoreForm::Standard ? "standard" : "normalized";
}

ScoreStyle score_style_from_string(const std::string& s) {
    if (s == "bahdanau") return ScoreStyle::Bahdanau;
    if (s == "luong") return ScoreStyle::Luong;
    fail("unknown score style: " + s);
}

std::string to_string(ScoreStyle s) { return s == ScoreStyle::Bahdanau ? "bahdanau" : "luong"; }

PositionalScheme positional_scheme_from_string(const std::string& s) {
    if (s == "none") return PositionalScheme::None;
    if (s == "sinusoid") return PositionalScheme::Sinusoid;
    if (s == "learned") return PositionalScheme::Learned;
    fail("unknown positional encoding: " + s);
}

std::string to_string(PositionalScheme p) {
    switch (p) {
        case PositionalScheme::None: return "none";
        case PositionalScheme::Sinusoid: return "sinusoid";
        case PositionalScheme::Learned: return "learned";
    }
    return "?";
}

void AttentionConfig::validate() const {
    require(attention_dim > 0, "attention dim must be positive");
    require(chunk_window >= 1, "chunk window must be at least 1");
    require(location_conv_kernel >= 1 && location_conv_filters >= 1,
            "location conv shape must be positive");
    require(presigmoid_noise >= 0.0, "pre-sigmoid noise must be non-negative");
    require(max_learned_positions > 0, "learned positional table needs rows");
    if (score_style == ScoreStyle::Luong)
        require(score_form == ScoreForm::Standard,
                "the normalized score form is defined for the Bahdanau style only");
    if (hybrid())
        require(score_style == ScoreStyle::Bahdanau,
                "hybrid attention scores require the Bahdanau style");
}

Tensor sinusoid_position_table(int positions, int depth) {
    Tensor out({positions, depth});
    for (int pos = 0; pos < positions; ++pos)
        for (int i = 0; i < depth; ++i) {
            double rate = std::pow(10000.0, (2.0 * (i / 2)) / depth);
            double x = pos / rate;
            out.at(pos, i) = (i % 2 == 0) ? std::sin(x) : std::cos(x);
        }
    return out;
}

// ------------------------------------------------------------- fused ops

Var monotonic_alignment(Tape& t, Var p, Var alpha_prev) {
    const Tensor& pv = t.val(p);
    const Tensor& av = t.val(alpha_prev);
    require(pv.ndim() == 2 && pv.same_shape(av), "monotonic_alignment: want matching [B,M]");
    int b = pv.dim(0), m = pv.dim(1);
    auto q = std::make_shared<Tensor>(Shape{b, m});
    Tensor out({b, m});
    for (int i = 0; i < b; ++i) {
        double carry = 0.0;
        for (int j = 0; j < m; ++j) {
            double qj = av.at(i, j) + carry;
            q->at(i, j) = qj;
            out.at(i, j) = pv.at(i, j) * qj;
            carry = (1.0 - pv.at(i, j)) * qj;
        }
    }
    int pp = p.id, pa = alpha_prev.id;
    bool np = t.needs_grad(p), na = t.needs_grad(alpha_prev);
    return t.make(std::move(out), {p, alpha_prev}, [pp, pa, np, na, q, b, m](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        const auto& pv2 = tt.val(Var{pp});
        double* gp = np ? tt.grad(pp).data() : nullptr;
        double* ga = na ? tt.grad(pa).data() : nullptr;
        for (int i = 0; i < b; ++i) {
            double gq_next = 0.0;  // gradient flowing into q[j] from q[j+1]
            for (int j = m - 1; j >= 0; --j) {
                double gout = g[static_cast<size_t>(i) * m + j];
                double qj = q->at(i, j);
                double pj = pv2.at(i, j);
                // q[j+1] = aprev[j+1] + (1-p[j]) q[j]
                double gq = gout * pj + gq_next * (1.0 - pj);
                if (gp) gp[static_cast<size_t>(i) * m + j] += gout * qj - gq_next * qj;
                if (ga) ga[static_cast<size_t>(i) * m + j] += gq;
                gq_next = gq;
            }
        }
    });
}

Var chunkwise_spread(Tape& t, Var alpha, Var energies, int window, Tensor mask) {
    const Tensor& av = t.val(alpha);
    const Tensor& uv = t.val(energies);
    require(av.ndim() == 2 && av.same_shape(uv), "chunkwise_spread: want matching [B,M]");
    require(window >= 1, "chunkwise_spread: window must be >= 1");
    require(mask.same_shape(av), "chunkwise_spread: mask shape mismatch");
    int b = av.dim(0), m = av.dim(1);
    Tensor out({b, m});
    auto mk = std::make_shared<Tensor>(std::move(mask));
    for (int i = 0; i < b; ++i) {
        const double* arow = &av.v[static_cast<size_t>(i) * m];
        const double* urow = &uv.v[static_cast<size_t>(i) * m];
        double* brow = &out.v[static_cast<size_t>(i) * m];
        for (int k = 0; k < m; ++k) {
            if (mk->at(i, k) == 0.0 || arow[k] == 0.0) continue;
            int lo = std::max(0, k - window + 1);
            // window softmax, shifted by its max
            double hi = -std::numeric_limits<double>::infinity();
            for (int l = lo; l <= k; ++l)
                if (mk->at(i, l) != 0.0) hi = std::max(hi, urow[l]);
            double z = 0.0;
            for (int l = lo; l <= k; ++l)
                if (mk->at(i, l) != 0.0) z += std::exp(urow[l] - hi);
            for (int l = lo; l <= k; ++l)
                if (mk->at(i, l) != 0.0) brow[l] += arow[k] * std::exp(urow[l] - hi) / z;
        }
    }
    int pa = alpha.id, pu = energies.id;
    bool na = t.needs_grad(alpha), nu = t.needs_grad(energies);
    return t.make(std::move(out), {alpha, energies},
                  [pa, pu, na, nu, mk, b, m, window](Tape& tt, int self) {
                      const auto& g = tt.grad(self);
                      const auto& av2 = tt.val(Var{pa});
                      const auto& uv2 = tt.val(Var{pu});
                      double* ga = na ? tt.grad(pa).data() : nullptr;
                      double* gu = nu ? tt.grad(pu).data() : nullptr;
                      if (!ga && !gu) return;
                      for (int i = 0; i < b; ++i) {
                          const double* arow = &av2.v[static_cast<size_t>(i) * m];
                          const double* urow = &uv2.v[static_cast<size_t>(i) * m];
                          const double* gb = &g[static_cast<size_t>(i) * m];
                          for (int k = 0; k < m; ++k) {
                              if (mk->at(i, k) == 0.0) continue;
                              int lo = std::max(0, k - window + 1);
                              double hi = -std::numeric_limits<double>::infinity();
                              for (int l = lo; l <= k; ++l)
                                  if (mk->at(i, l) != 0.0) hi = std::max(hi, urow[l]);
                              double z = 0.0;
                              for (int l = lo; l <= k; ++l)
                                  if (mk->at(i, l) != 0.0) z += std::exp(urow[l] - hi);
                              double gdot = 0.0;
                              for (int l = lo; l <= k; ++l)
                                  if (mk->at(i, l) != 0.0)
                                      gdot += std::exp(urow[l] - hi) / z * gb[l];
                              if (ga) ga[static_cast<size_t>(i) * m + k] += gdot;
                              if (gu) {
                                  double ak = arow[k];
                                  if (ak != 0.0)
                                      for (int l = lo; l <= k; ++l)
                                          if (mk->at(i, l) != 0.0) {
                                              double w = std::exp(urow[l] - hi) / z;
                                              gu[static_cast<size_t>(i) * m + l] +=
                                                  ak * w * (gb[l] - gdot);
                                          }
                              }
                          }
                      }
                  });
}

Var gaussian_window(Tape& t, Var kappa, Var sigma, int frames, Tensor mask) {
    const Tensor& kv = t.val(kappa);
    const Tensor& sv = t.val(sigma);
    require(kv.ndim() == 1 && sv.ndim() == 1 && kv.dim(0) == sv.dim(0),
            "gaussian_window: kappa and sigma must be [B]");
    int b = kv.dim(0);
    require(mask.ndim() == 2 && mask.dim(0) == b && mask.dim(1) == frames,
            "gaussian_window: mask must be [B,frames]");
    Tensor out({b, frames});
    auto mk = std::make_shared<Tensor>(std::move(mask));
    auto dmin2 = std::make_shared<std::vector<double>>(b, 0.0);
    for (int i = 0; i < b; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int j = 0; j < frames; ++j)
            if (mk->at(i, j) != 0.0) {
                double d = j - kv.v[i];
                best = std::min(best, d * d);
            }
        require(best < std::numeric_limits<double>::infinity(),
                "gaussian_window: row with no valid positions");
        (*dmin2)[i] = best;
        double s2 = 2.0 * sv.v[i] * sv.v[i];
        for (int j = 0; j < frames; ++j) {
            if (mk->at(i, j) == 0.0) continue;
            double d = j - kv.v[i];
            out.at(i, j) = std::exp(-(d * d - best) / s2);
        }
    }
    int pk = kappa.id, ps = sigma.id;
    bool nk = t.needs_grad(kappa), ns = t.needs_grad(sigma);
    return t.make(std::move(out), {kappa, sigma},
                  [pk, ps, nk, ns, mk, dmin2, b, frames](Tape& tt, int self) {
                      const auto& g = tt.grad(self);
                      const auto& y = tt.val(Var{self});
                      const auto& kv2 = tt.val(Var{pk});
                      const auto& sv2 = tt.val(Var{ps});
                      double* gk = nk ? tt.grad(pk).data() : nullptr;
                      double* gs = ns ? tt.grad(ps).data() : nullptr;
                      if (!gk && !gs) return;
                      // the dmin shift is treated as locally constant; its
                      // contribution cancels after row normalization
                      for (int i = 0; i < b; ++i) {
                          double sig = sv2.v[i];
                          for (int j = 0; j < frames; ++j) {
                              if (mk->at(i, j) == 0.0) continue;
                              double go = g[static_cast<size_t>(i) * frames + j];
                              if (go == 0.0) continue;
                              double w = y.at(i, j);
                              double d = j - kv2.v[i];
                              if (gk) gk[i] += go * w * d / (sig * sig);
                              if (gs)
                                  gs[i] += go * w * (d * d - (*dmin2)[i]) / (sig * sig * sig);
                          }
                      }
                  });
}

// ------------------------------------------------------------- module

AttentionModule::AttentionModule(ParamStore& ps, const AttentionConfig& cfg, int state_dim,
                                 int feature_dim, Rng& rng)
    : cfg_(cfg), state_dim_(state_dim), feature_dim_(feature_dim) {
    cfg_.validate();
    int a = cfg_.attention_dim;

    auto make_scorer = [&](const std::string& prefix, Parameter*& ws, Parameter*& wh,
                           Parameter*& bias, Parameter*& v, Parameter*& gain, Parameter*& offset) {
        if (cfg_.score_style == ScoreStyle::Luong) {
            Tensor w({feature_dim, state_dim});
            fill_xavier_uniform(w, feature_dim, state_dim, rng);
            wh = &ps.create(prefix + "/w_h", std::move(w));
            return;
        }
        Tensor tw_s({state_dim, a}), tw_h({feature_dim, a}), tv({a});
        fill_xavier_uniform(tw_s, state_dim, a, rng);
        fill_xavier_uniform(tw_h, feature_dim, a, rng);
        fill_xavier_uniform(tv, a, 1, rng);
        ws = &ps.create(prefix + "/w_s", std::move(tw_s));
        wh = &ps.create(prefix + "/w_h", std::move(tw_h));
        bias = &ps.create(prefix + "/b", Tensor({a}));
        double vnorm = 0.0;
        for (double x : tv.v) vnorm += x * x;
        v = &ps.create(prefix + "/v", std::move(tv));
        if (cfg_.score_form == ScoreForm::Normalized) {
            // gain starts at ||v|| and offset at 0 so the normalized score
            // initially equals the standard one
            gain = &ps.create(prefix + "/g", Tensor::scalar(std::sqrt(vnorm)));
            offset = &ps.create(prefix + "/r", Tensor::scalar(0.0));
        }
    };

    if (cfg_.mechanism != AttentionMechanism::Location)
        make_scorer("attention/score", w_s_, w_h_, bias_, v_, gain_, offset_);
    if (cfg_.chunkwise_family())
        make_scorer("attention/chunk", cw_s_, cw_h_, cbias_, cv_, cgain_, coffset_);
    if (cfg_.hybrid()) {
        Tensor k({cfg_.location_conv_kernel, 1, cfg_.location_conv_filters});
        fill_xavier_uniform(k, cfg_.location_conv_kernel, cfg_.location_conv_filters, rng);
        loc_kernel_ = &ps.create("attention/loc_conv/k", std::move(k));
        loc_bias_ = &ps.create("attention/loc_conv/b", Tensor({cfg_.location_conv_filters}));
        Tensor wf({cfg_.location_conv_filters, a});
        fill_xavier_uniform(wf, cfg_.location_conv_filters, a, rng);
        w_f_ = &ps.create("attention/score/w_f", std::move(wf));
    }
    if (cfg_.mechanism == AttentionMechanism::Location)
        loc_predict_ = Dense(ps, "attention/location_predict", state_dim, 2, rng);
    if (cfg_.positional_encoding == PositionalScheme::Learned)
        pos_table_ = &ps.create("attention/pos_table",
                                Tensor({cfg_.max_learned_positions, feature_dim}));
    cbar_ = Dense(ps, "attention/cbar", feature_dim + state_dim, a, rng);
}

AttentionModule::Memory AttentionModule::prepare(Tape& t, const EncodedFeatures& enc) const {
    Memory mem;
    mem.mask = enc.mask;
    mem.lengths = enc.lengths;
    const Tensor& f = t.val(enc.features);
    mem.batch = f.dim(0);
    mem.frames = f.dim(1);
    require(f.dim(2) == feature_dim_, "attention: encoder depth mismatch");

    Var h = enc.features;
    switch (cfg_.positional_encoding) {
        case PositionalScheme::None: break;
        case PositionalScheme::Sinusoid:
            h = add_seq_const(t, h, sinusoid_position_table(mem.frames, feature_dim_));
            h = scale_time(t, h, mem.mask);
            break;
        case PositionalScheme::Learned:
            require(mem.frames <= cfg_.max_learned_positions,
                    "sequence length " + std::to_string(mem.frames) +
                        " exceeds the learned positional table (" +
                        std::to_string(cfg_.max_learned_positions) + ")");
            h = seq_add_position_rows(t, h, t.param(*pos_table_));
            h = scale_time(t, h, mem.mask);
            break;
    }
    mem.features = h;
    if (cfg_.mechanism != AttentionMechanism::Location)
        mem.score_proj = seq_linear(t, h, t.param(*w_h_), Var{});
    if (cfg_.chunkwise_family()) mem.chunk_proj = seq_linear(t, h, t.param(*cw_h_), Var{});
    return mem;
}

AttentionState AttentionModule::initial_state(Tape& t, int batch, int frames) const {
    AttentionState st;
    Tensor start({batch, frames});
    if (cfg_.monotonic_family())
        for (int i = 0; i < batch; ++i) start.at(i, 0) = 1.0;  // one-hot at the first frame
    st.prev_weights = t.constant(start);
    st.attended_weights = st.prev_weights;
    st.log_acc = t.constant(Tensor({batch, frames}));
    st.kappa = t.constant(Tensor({batch}));
    st.step = 0;
    return st;
}

AttentionStateValues AttentionModule::state_values(const Tape& t, const AttentionState& s) const {
    AttentionStateValues v;
    v.prev_weights = t.val(s.prev_weights);
    v.attended_weights = t.val(s.attended_weights);
    v.log_acc = t.val(s.log_acc);
    v.kappa = t.val(s.kappa);
    v.step = s.step;
    return v;
}

AttentionState AttentionModule::state_from_values(Tape& t, const AttentionStateValues& v) const {
    AttentionState s;
    s.prev_weights = t.constant(v.prev_weights);
    s.attended_weights = t.constant(v.attended_weights);
    s.log_acc = t.constant(v.log_acc);
    s.kappa = t.constant(v.kappa);
    s.step = v.step;
    return s;
}

Var AttentionModule::location_feature_proj(Tape& t, Var prev_attended) const {
    // f = conv1d(alpha_{t-1}) over time, then projected into the score space
    const Tensor& w = t.val(prev_attended);
    int b = w.dim(0), m = w.dim(1);
    Var as_seq = t.make(Tensor({b, m, 1}, w.v), {prev_attended}, [pa = prev_attended.id,
                                                                  na = t.needs_grad(prev_attended)](
                                                                     Tape& tt, int self) {
        if (!na) return;
        const auto& g = tt.grad(self);
        double* gx = tt.grad(pa).data();
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    Var f = conv1d_same(t, as_seq, t.param(*loc_kernel_), t.param(*loc_bias_));
    return seq_linear(t, f, t.param(*w_f_), Var{});
}

Var AttentionModule::scorer_scores(Tape& t, Var cached_proj, Var s_t,
                                   std::optional<Var> location_features, bool chunk_scorer) const {
    Parameter* ws = chunk_scorer ? cw_s_ : w_s_;
    Parameter* bias = chunk_scorer ? cbias_ : bias_;
    Parameter* v = chunk_scorer ? cv_ : v_;
    Parameter* gain = chunk_scorer ? cgain_ : gain_;
    Parameter* offset = chunk_scorer ? coffset_ : offset_;

    if (cfg_.score_style == ScoreStyle::Luong) return seq_dot_state(t, cached_proj, s_t);

    Var q = add_rowvec(t, matmul(t, s_t, t.param(*ws)), t.param(*bias));
    Var sum = add_seq_rowvec(t, cached_proj, q);
    if (location_features) sum = add(t, sum, *location_features);
    Var th = tanh_op(t, sum);

    Var veff = t.param(*v);
    if (cfg_.score_form == ScoreForm::Normalized) {
        Var vnorm = sqrt_op(t, sum_all(t, mul(t, veff, veff)));
        veff = scale_by(t, veff, divide(t, t.param(*gain), vnorm));
    }
    Var e = seq_dot_vec(t, th, veff);
    if (cfg_.score_form == ScoreForm::Normalized) e = add_bcast(t, e, t.param(*offset));
    return e;
}

Var AttentionModule::scores(Tape& t, const Memory& mem, Var s_t, const AttentionState& state) const {
    require(cfg_.mechanism != AttentionMechanism::Location,
            "location attention does not score encoder features");
    std::optional<Var> loc;
    if (cfg_.hybrid()) loc = location_feature_proj(t, state.attended_weights);
    return scorer_scores(t, mem.score_proj, s_t, loc, false);
}

std::pair<ContextVector, AttentionState> AttentionModule::step(Tape& t, const Memory& mem, Var s_t,
                                                               const AttentionState& state,
                                                               Rng* noise_rng) const {
    AttentionState next;
    next.kappa = state.kappa;
    next.log_acc = state.log_acc;
    next.step = state.step + 1;

    Var weights;  // weights forming the context
    switch (cfg_.mechanism) {
        case AttentionMechanism::Content: {
            Var e = scorer_scores(t, mem.score_proj, s_t, std::nullopt, false);
            weights = softmax_rows(t, e, mem.mask);
            next.prev_weights = weights;
            break;
        }
        case AttentionMechanism::Penalized: {
            Var e = scorer_scores(t, mem.score_proj, s_t, std::nullopt, false);
            if (state.step == 0) {
                weights = softmax_rows(t, e, mem.mask);
                next.log_acc = e;
            } else {
                weights = softmax_rows(t, sub(t, e, state.log_acc), mem.mask);
                next.log_acc = logaddexp(t, state.log_acc, e);
            }
            next.prev_weights = weights;
            break;
        }
        case AttentionMechanism::Location: {
            Var pred = loc_predict_.apply(t, s_t);  // [B,2] -> (d kappa, sigma) via exp
            Var dk = exp_op(t, slice_cols(t, pred, 0, 1));
            Var sg = exp_op(t, slice_cols(t, pred, 1, 2));
            // flatten [B,1] -> [B]
            auto flat = [&](Var x) {
                const Tensor& xv = t.val(x);
                return t.make(Tensor({xv.dim(0)}, xv.v), {x},
                              [pa = x.id, na = t.needs_grad(x)](Tape& tt, int self) {
                                  if (!na) return;
                                  const auto& g = tt.grad(self);
                                  double* gx = tt.grad(pa).data();
                                  for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                              });
            };
            next.kappa = add(t, state.kappa, flat(dk));
            Var gw = gaussian_window(t, next.kappa, flat(sg), mem.frames, mem.mask);
            Var denom = row_sum(t, gw);
            weights = div_by_col(t, gw, denom);
            next.prev_weights = weights;
            break;
        }
        default: {  // monotonic family
            std::optional<Var> loc;
            if (cfg_.hybrid()) loc = location_feature_proj(t, state.attended_weights);
            Var e = scorer_scores(t, mem.score_proj, s_t, loc, false);
            if (noise_rng && cfg_.presigmoid_noise > 0.0) {
                Tensor noise(t.val(e).shape);
                fill_normal(noise, 0.0, cfg_.presigmoid_noise, *noise_rng);
                e = t.make(
                    [&] {
                        Tensor out = t.val(e);
                        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += noise.v[i];
                        return out;
                    }(),
                    {e}, [pa = e.id, na = t.needs_grad(e)](Tape& tt, int self) {
                        if (!na) return;
                        const auto& g = tt.grad(self);
                        double* gx = tt.grad(pa).data();
                        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                    });
            }
            Var p = mul_mask(t, sigmoid(t, e), mem.mask);
            Var alpha = monotonic_alignment(t, p, state.prev_weights);
            next.prev_weights = alpha;
            if (cfg_.chunkwise_family()) {
                Var u = scorer_scores(t, mem.chunk_proj, s_t, std::nullopt, true);
                weights = chunkwise_spread(t, alpha, u, cfg_.chunk_window, mem.mask);
            } else {
                weights = alpha;
            }
            break;
        }
    }
    next.attended_weights = weights;

    ContextVector ctx;
    ctx.weights = weights;
    ctx.context = weighted_seq_sum(t, mem.features, weights);
    ctx.attended_summary = tanh_op(t, cbar_.apply(t, concat_cols(t, ctx.context, s_t)));
    return {ctx, next};
}

}  // namespace htr
