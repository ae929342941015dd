#pragma once

#include <functional>
#include <vector>

#include "htr/tensor.hpp"

namespace htr {

struct Parameter;

// Handle to a node on a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode differentiation tape. Operations evaluate eagerly and push a
// node holding the result plus a closure that propagates gradients to the
// node's parents. Creation order is a topological order, so backward() is a
// single reverse sweep. One tape per forward pass; single-threaded.
class Tape {
  public:
    using BackFn = std::function<void(Tape&, int self)>;

    Var input(Tensor value, bool needs_grad = false);
    Var constant(Tensor value) { return input(std::move(value), false); }
    // Leaf bound to a Parameter; needs_grad iff trainable. backward()
    // accumulates the leaf gradient into p.grad.
    Var param(Parameter& p);

    const Tensor& val(Var x) const { return nodes_[x.id].value; }
    bool needs_grad(Var x) const { return nodes_[x.id].needs_grad; }

    // Gradient buffer of a node, allocated zeroed on first use.
    std::vector<double>& grad(int id);
    std::vector<double>& grad(Var x) { return grad(x.id); }
    bool has_grad(int id) const { return !nodes_[id].grad.empty(); }

    // Registers an op node. needs_grad is inherited from the parents.
    Var make(Tensor value, std::vector<Var> parents, BackFn back);

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Bound
    // parameter gradients are accumulated into Parameter::grad; bound
    // trainable parameters untouched by the sweep get zero gradients.
    void backward(Var loss);

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        std::vector<double> grad;  // empty until touched
        std::vector<int> parents;
        BackFn back;
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;
    std::vector<std::pair<Parameter*, int>> bindings_;
};

// ---- elementwise and scalar ----
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var divide(Tape& t, Var a, Var b);
Var logaddexp(Tape& t, Var a, Var b);
Var add_const(Tape& t, Var a, double c);
Var scale(Tape& t, Var a, double c);
Var neg(Tape& t, Var a);
Var scale_by(Tape& t, Var a, Var s);   // s is a single-element tensor
Var add_bcast(Tape& t, Var a, Var s);  // a + s with s a single element
Var tanh_op(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var exp_op(Tape& t, Var a);
Var log_op(Tape& t, Var a);
Var sqrt_op(Tape& t, Var a);
Var leaky_relu(Tape& t, Var a, double slope);
// elementwise product with a constant mask of the same shape (dropout etc.)
Var mul_mask(Tape& t, Var a, Tensor mask);

// ---- matrix ----
Var matmul(Tape& t, Var a, Var b);          // [R,K]x[K,C] -> [R,C]
Var add_rowvec(Tape& t, Var m, Var v);      // [R,C] + [C]
Var concat_cols(Tape& t, Var a, Var b);     // [R,A],[R,B] -> [R,A+B]
Var slice_cols(Tape& t, Var a, int begin, int end);
Var gather_rows(Tape& t, Var a, std::vector<int> rows);
Var embedding_lookup(Tape& t, Var table, std::vector<int> ids);

// ---- reductions ----
Var sum_all(Tape& t, Var a);                // -> [1]
Var row_sum(Tape& t, Var a);                // [R,C] -> [R]
Var div_by_col(Tape& t, Var m, Var c);      // [R,C] / [R], broadcast over C
Var mean_all(Tape& t, Var a);
// Row softmax; entries where mask==0 come out exactly 0. mask may be empty.
// Rows with no valid entry are a contract violation.
Var softmax_rows(Tape& t, Var a, Tensor mask = Tensor());

// probs: [B,K] rows of probabilities; returns sum_b w[b] * -log(max(probs[b,ids[b]], floor)).
Var pick_neg_log(Tape& t, Var probs, std::vector<int> ids, std::vector<double> weights,
                 double floor = 1e-12);

// ---- sequence layout [B,M,C] ----
Var time_slice(Tape& t, Var seq, int step);             // -> [B,C]
Var stack_time(Tape& t, const std::vector<Var>& steps); // T x [B,C] -> [B,T,C]
Var add_seq_rowvec(Tape& t, Var seq, Var x);            // [B,M,C] + [B,C]
Var add_seq_const(Tape& t, Var seq, Tensor table);      // [B,M,C] + const [M,C]
Var seq_dot_vec(Tape& t, Var seq, Var v);               // -> [B,M]
Var seq_dot_state(Tape& t, Var seq, Var s);             // sum_c seq[b,m,c]*s[b,c] -> [B,M]
Var weighted_seq_sum(Tape& t, Var seq, Var w);          // sum_m w[b,m]*seq[b,m,:] -> [B,C]
Var scale_time(Tape& t, Var seq, Tensor mask_bm);       // [B,M,C] * mask[B,M]
Var seq_linear(Tape& t, Var seq, Var w, Var b);         // per-step [C_in]->[C_out]
Var reverse_sequence(Tape& t, Var seq, std::vector<int> lengths);
Var seq_add_position_rows(Tape& t, Var seq, Var table); // seq[b,m,:] += table[m,:]

// ---- image layout [B,H,W,C] ----
// "same" padding with ceil(in/stride) output size; conv pads zeros, pool
// ignores padded cells.
Var conv2d(Tape& t, Var x, Var kernel, Var bias, int sy, int sx);
Var maxpool2d(Tape& t, Var x, int ky, int kx, int sy, int sx);
Var scale_width(Tape& t, Var x, Tensor mask_bw);        // [B,H,W,C] * mask[B,W]
Var columns_to_sequence(Tape& t, Var x);                // [B,H,W,C] -> [B,W,H*C]
// 1-D convolution over time, stride 1, same padding: x [B,M,Cin], kernel
// [K,Cin,F] -> [B,M,F]
Var conv1d_same(Tape& t, Var x, Var kernel, Var bias);

// Fused LSTM cell. Gate order i,f,g,o in the 4H axis. Returns [B,2H] with
// h in columns [0,H) and the cell state in [H,2H).
Var lstm_cell(Tape& t, Var x, Var h_prev, Var c_prev, Var w_ih, Var w_hh, Var b);

// ---- raw kernels shared by ops (no tape) ----
namespace kernels {
// c = a*b (+c if accumulate), a [R,K], b [K,C]
void gemm_nn(const double* a, const double* b, double* c, int r, int k, int cdim, bool accumulate);
// c += a^T * b, a [K,R], b [K,C] -> c [R,C]
void gemm_tn_acc(const double* a, const double* b, double* c, int r, int k, int cdim);
// c += a * b^T, a [R,K], b [C,K] -> c [R,C]
void gemm_nt_acc(const double* a, const double* b, double* c, int r, int k, int cdim);
}  // namespace kernels

}  // namespace htr
