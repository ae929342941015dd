#pragma once

#include <string>
#include <vector>

#include "htr/model.hpp"
#include "htr/tape.hpp"

namespace htr {

// Fully connected layer, Xavier-initialized, zero bias.
class Dense {
  public:
    Dense() = default;
    Dense(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng);
    Var apply(Tape& t, Var x) const;           // [B,in] -> [B,out]
    Var apply_seq(Tape& t, Var seq) const;     // [B,M,in] -> [B,M,out]
    int in_dim() const { return w_->value.dim(0); }
    int out_dim() const { return w_->value.dim(1); }

  private:
    Parameter* w_ = nullptr;
    Parameter* b_ = nullptr;
};

// Single-direction LSTM. Forget-gate bias starts at 1.
class Lstm {
  public:
    Lstm() = default;
    Lstm(ParamStore& ps, const std::string& prefix, int in, int hidden, Rng& rng);
    // One cell step; returns {h, c}.
    std::pair<Var, Var> step(Tape& t, Var x, Var h, Var c) const;
    // Whole sequence [B,M,in] -> hidden states [B,M,hidden], zero initial state.
    Var run(Tape& t, Var seq) const;
    std::pair<Var, Var> zero_state(Tape& t, int batch) const;
    int hidden() const { return hidden_; }

  private:
    Parameter* w_ih_ = nullptr;
    Parameter* w_hh_ = nullptr;
    Parameter* b_ = nullptr;
    int hidden_ = 0;
};

// Bidirectional LSTM layer; output is the sum of the forward and backward
// hidden-state sequences. The backward pass runs over the reversed valid
// prefix of each item so padding never reaches valid positions.
class Blstm {
  public:
    Blstm() = default;
    Blstm(ParamStore& ps, const std::string& prefix, int in, int hidden, Rng& rng);
    Var apply(Tape& t, Var seq, const std::vector<int>& lengths) const;
    int hidden() const { return fwd_.hidden(); }

  private:
    Lstm fwd_, bwd_;
};

class Embedding {
  public:
    Embedding() = default;
    Embedding(ParamStore& ps, const std::string& name, int vocab, int dim, Rng& rng);
    Var lookup(Tape& t, const std::vector<int>& ids) const;
    int dim() const { return table_->value.dim(1); }
    int vocab() const { return table_->value.dim(0); }

  private:
    Parameter* table_ = nullptr;
};

// Inverted dropout: at train time keeps entries with probability 1-p and
// scales them by 1/(1-p); at inference it is the identity.
Var dropout(Tape& t, Var x, double p, bool train, Rng& rng);
Tensor dropout_mask(const Shape& shape, double p, Rng& rng);

}  // namespace htr
