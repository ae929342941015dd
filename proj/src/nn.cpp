#include "htr/nn.hpp"

namespace htr {

Dense::Dense(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng) {
    Tensor w({in, out});
    fill_xavier_uniform(w, in, out, rng);
    w_ = &ps.create(prefix + "/w", std::move(w));
    b_ = &ps.create(prefix + "/b", Tensor({out}));
}

Var Dense::apply(Tape& t, Var x) const {
    return add_rowvec(t, matmul(t, x, t.param(*w_)), t.param(*b_));
}

Var Dense::apply_seq(Tape& t, Var seq) const {
    return seq_linear(t, seq, t.param(*w_), t.param(*b_));
}

Lstm::Lstm(ParamStore& ps, const std::string& prefix, int in, int hidden, Rng& rng)
    : hidden_(hidden) {
    Tensor wih({in, 4 * hidden});
    Tensor whh({hidden, 4 * hidden});
    fill_xavier_uniform(wih, in, 4 * hidden, rng);
    fill_xavier_uniform(whh, hidden, 4 * hidden, rng);
    Tensor b({4 * hidden});
    for (int j = 0; j < hidden; ++j) b.v[hidden + j] = 1.0;  // forget gate
    w_ih_ = &ps.create(prefix + "/w_ih", std::move(wih));
    w_hh_ = &ps.create(prefix + "/w_hh", std::move(whh));
    b_ = &ps.create(prefix + "/b", std::move(b));
}

std::pair<Var, Var> Lstm::step(Tape& t, Var x, Var h, Var c) const {
    Var hc = lstm_cell(t, x, h, c, t.param(*w_ih_), t.param(*w_hh_), t.param(*b_));
    return {slice_cols(t, hc, 0, hidden_), slice_cols(t, hc, hidden_, 2 * hidden_)};
}

std::pair<Var, Var> Lstm::zero_state(Tape& t, int batch) const {
    return {t.constant(Tensor({batch, hidden_})), t.constant(Tensor({batch, hidden_}))};
}

Var Lstm::run(Tape& t, Var seq) const {
    const Tensor& sv = t.val(seq);
    require(sv.ndim() == 3, "Lstm::run expects [B,M,C]");
    int b = sv.dim(0), m = sv.dim(1);
    auto [h, c] = zero_state(t, b);
    Var wih = t.param(*w_ih_), whh = t.param(*w_hh_), bias = t.param(*b_);
    std::vector<Var> outs;
    outs.reserve(m);
    for (int s = 0; s < m; ++s) {
        Var x = time_slice(t, seq, s);
        Var hc = lstm_cell(t, x, h, c, wih, whh, bias);
        h = slice_cols(t, hc, 0, hidden_);
        c = slice_cols(t, hc, hidden_, 2 * hidden_);
        outs.push_back(h);
    }
    return stack_time(t, outs);
}

Blstm::Blstm(ParamStore& ps, const std::string& prefix, int in, int hidden, Rng& rng)
    : fwd_(ps, prefix + "/fwd", in, hidden, rng), bwd_(ps, prefix + "/bwd", in, hidden, rng) {}

Var Blstm::apply(Tape& t, Var seq, const std::vector<int>& lengths) const {
    Var f = fwd_.run(t, seq);
    Var rev_in = reverse_sequence(t, seq, lengths);
    Var rev_out = bwd_.run(t, rev_in);
    Var b = reverse_sequence(t, rev_out, lengths);
    return add(t, f, b);
}

Embedding::Embedding(ParamStore& ps, const std::string& name, int vocab, int dim, Rng& rng) {
    Tensor tab({vocab, dim});
    fill_xavier_uniform(tab, vocab, dim, rng);
    table_ = &ps.create(name, std::move(tab));
}

Var Embedding::lookup(Tape& t, const std::vector<int>& ids) const {
    for (int id : ids)
        require(id >= 0 && id < table_->value.dim(0),
                "embedding id " + std::to_string(id) + " out of range");
    return embedding_lookup(t, t.param(*table_), ids);
}

Tensor dropout_mask(const Shape& shape, double p, Rng& rng) {
    Tensor mask(shape);
    double keep = 1.0 - p;
    for (double& x : mask.v) x = (rng.uniform() < keep) ? 1.0 / keep : 0.0;
    return mask;
}

Var dropout(Tape& t, Var x, double p, bool train, Rng& rng) {
    require(p >= 0.0 && p < 1.0, "dropout probability must be in [0,1)");
    if (!train || p == 0.0) return x;
    return mul_mask(t, x, dropout_mask(t.val(x).shape, p, rng));
}

}  // namespace htr
