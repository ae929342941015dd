#include "htr/tape.hpp"

#include <algorithm>
#include <cmath>

#include "htr/model.hpp"

namespace htr {

Var Tape::input(Tensor value, bool needs_grad) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
    Var v = input(p.value, p.trainable);
    bindings_.emplace_back(&p, v.id);
    return v;
}

std::vector<double>& Tape::grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.v.size(), 0.0);
    return n.grad;
}

Var Tape::make(Tensor value, std::vector<Var> parents, BackFn back) {
    Node n;
    n.value = std::move(value);
    for (Var p : parents) {
        require(p.valid(), "op consumed an invalid Var");
        n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
        n.parents.push_back(p.id);
    }
    if (n.needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var loss) {
    require(loss.valid(), "backward on invalid Var");
    require(nodes_[loss.id].value.numel() == 1, "backward requires a scalar loss, got shape " +
                                                    shape_str(nodes_[loss.id].value.shape));
    grad(loss.id)[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.needs_grad || n.grad.empty() || !n.back) continue;
        n.back(*this, id);
    }
    for (auto& [p, id] : bindings_) {
        if (!p->trainable) continue;
        if (p->grad.v.empty()) p->grad = Tensor(p->value.shape);
        if (!has_grad(id)) continue;  // unreachable from the loss: stays zero
        const auto& g = nodes_[id].grad;
        for (size_t i = 0; i < g.size(); ++i) p->grad.v[i] += g[i];
    }
}

namespace {

// gradient buffer of a parent if it participates, else nullptr
double* pgrad(Tape& t, int parent_id, bool parent_needs) {
    if (!parent_needs) return nullptr;
    return t.grad(parent_id).data();
}

struct Two {
    int a, b;
    bool na, nb;
};

Two two(Tape& t, Var a, Var b) { return Two{a.id, b.id, t.needs_grad(a), t.needs_grad(b)}; }

}  // namespace

// ---------------------------------------------------------------- elementwise

static void check_same_shape(const Tape& t, Var a, Var b, const char* what) {
    require(t.val(a).same_shape(t.val(b)),
            std::string(what) + ": shape mismatch " + shape_str(t.val(a).shape) + " vs " +
                shape_str(t.val(b).shape));
}

Var add(Tape& t, Var a, Var b) {
    check_same_shape(t, a, b, "add");
    Tensor out = t.val(a);
    const auto& bv = t.val(b).v;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += bv[i];
    Two p = two(t, a, b);
    return t.make(std::move(out), {a, b}, [p](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        if (double* ga = pgrad(tt, p.a, p.na))
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        if (double* gb = pgrad(tt, p.b, p.nb))
            for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    });
}

Var sub(Tape& t, Var a, Var b) {
    check_same_shape(t, a, b, "sub");
    Tensor out = t.val(a);
    const auto& bv = t.val(b).v;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= bv[i];
    Two p = two(t, a, b);
    return t.make(std::move(out), {a, b}, [p](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        if (double* ga = pgrad(tt, p.a, p.na))
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        if (double* gb = pgrad(tt, p.b, p.nb))
            for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
}

Var mul(Tape& t, Var a, Var b) {
    check_same_shape(t, a, b, "mul");
    Tensor out = t.val(a);
    const auto& bv = t.val(b).v;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= bv[i];
    Two p = two(t, a, b);
    return t.make(std::move(out), {a, b}, [p](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        const auto& av = tt.val(Var{p.a}).v;
        const auto& bv2 = tt.val(Var{p.b}).v;
        if (double* ga = pgrad(tt, p.a, p.na))
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
        if (double* gb = pgrad(tt, p.b, p.nb))
            for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    });
}

Var divide(Tape& t, Var a, Var b) {
    check_same_shape(t, a, b, "divide");
    Tensor out = t.val(a);
    const auto& bv = t.val(b).v;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] /= bv[i];
    Two p = two(t, a, b);
    return t.make(std::move(out), {a, b}, [p](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        const auto& y = tt.val(Var{self}).v;  // a/b
        const auto& bv2 = tt.val(Var{p.b}).v;
        if (double* ga = pgrad(tt, p.a, p.na))
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv2[i];
        if (double* gb = pgrad(tt, p.b, p.nb))
            for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * y[i] / bv2[i];
    });
}

Var logaddexp(Tape& t, Var a, Var b) {
    check_same_shape(t, a, b, "logaddexp");
    const auto& av = t.val(a).v;
    const auto& bv = t.val(b).v;
    Tensor out(t.val(a).shape);
    for (size_t i = 0; i < out.v.size(); ++i) {
        double hi = std::max(av[i], bv[i]);
        double lo = std::min(av[i], bv[i]);
        out.v[i] = (hi == -std::numeric_limits<double>::infinity())
                       ? hi
                       : hi + std::log1p(std::exp(lo - hi));
    }
    Two p = two(t, a, b);
    return t.make(std::move(out), {a, b}, [p](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        const auto& av2 = tt.val(Var{p.a}).v;
        const auto& y = tt.val(Var{self}).v;
        // d/da = exp(a - y), d/db = exp(b - y) = 1 - exp(a - y)
        if (double* ga = pgrad(tt, p.a, p.na))
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * std::exp(av2[i] - y[i]);
        if (double* gb = pgrad(tt, p.b, p.nb))
            for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (1.0 - std::exp(av2[i] - y[i]));
    });
}

Var add_const(Tape& t, Var a, double c) {
    Tensor out = t.val(a);
    for (double& x : out.v) x += c;
    int pa = a.id;
    bool na = t.needs_grad(a);
    return t.make(std::move(out), {a}, [pa, na](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        if (double* ga = pgrad(tt, pa, na))
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Var scale(Tape& t, Var a, double c) {
    Tensor out = t.val(a);
    for (double& x : out.v) x *= c;
    int pa = a.id;
    bool na = t.needs_grad(a);
    return t.make(std::move(out), {a}, [pa, na, c](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        if (double* ga = pgrad(tt, pa, na))
            for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

Var neg(Tape& t, Var a) { return scale(t, a, -1.0); }

Var add_bcast(Tape& t, Var a, Var s) {
    require(t.val(s).numel() == 1, "add_bcast: addend must be a single element");
    double sv = t.val(s).v[0];
    Tensor out = t.val(a);
    for (double& x : out.v) x += sv;
    Two p = two(t, a, s);
    return t.make(std::move(out), {a, s}, [p](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        if (double* ga = pgrad(tt, p.a, p.na))
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        if (double* gs = pgrad(tt, p.b, p.nb)) {
            double acc = 0.0;
            for (double x : g) acc += x;
            gs[0] += acc;
        }
    });
}

Var scale_by(Tape& t, Var a, Var s) {
    require(t.val(s).numel() == 1, "scale_by: scale must be a single element");
    double sv = t.val(s).v[0];
    Tensor out = t.val(a);
    for (double& x : out.v) x *= sv;
    Two p = two(t, a, s);
    return t.make(std::move(out), {a, s}, [p, sv](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        const auto& av = tt.val(Var{p.a}).v;
        if (double* ga = pgrad(tt, p.a, p.na))
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv;
        if (double* gs = pgrad(tt, p.b, p.nb)) {
            double acc = 0.0;
            for (size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
            gs[0] += acc;
        }
    });
}

template <typename F, typename DF>
static Var unary_op(Tape& t, Var a, F f, DF df_from_y, const char*) {
    Tensor out = t.val(a);
    for (double& x : out.v) x = f(x);
    int pa = a.id;
    bool na = t.needs_grad(a);
    return t.make(std::move(out), {a}, [pa, na, df_from_y](Tape& tt, int self) {
        if (double* ga = pgrad(tt, pa, na)) {
            const auto& g = tt.grad(self);
            const auto& y = tt.val(Var{self}).v;
            const auto& x = tt.val(Var{pa}).v;
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df_from_y(x[i], y[i]);
        }
    });
}

Var tanh_op(Tape& t, Var a) {
    return unary_op(
        t, a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; }, "tanh");
}

Var sigmoid(Tape& t, Var a) {
    return unary_op(
        t, a,
        [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

Var exp_op(Tape& t, Var a) {
    return unary_op(
        t, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; }, "exp");
}

Var log_op(Tape& t, Var a) {
    return unary_op(
        t, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; },
        "log");
}

Var sqrt_op(Tape& t, Var a) {
    return unary_op(
        t, a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / y; }, "sqrt");
}

Var leaky_relu(Tape& t, Var a, double slope) {
    return unary_op(
        t, a, [slope](double x) { return x >= 0 ? x : slope * x; },
        [slope](double x, double) { return x >= 0 ? 1.0 : slope; }, "leaky_relu");
}

Var mul_mask(Tape& t, Var a, Tensor mask) {
    require(t.val(a).same_shape(mask), "mul_mask: mask shape mismatch");
    Tensor out = t.val(a);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= mask.v[i];
    int pa = a.id;
    bool na = t.needs_grad(a);
    auto m = std::make_shared<Tensor>(std::move(mask));
    return t.make(std::move(out), {a}, [pa, na, m](Tape& tt, int self) {
        if (double* ga = pgrad(tt, pa, na)) {
            const auto& g = tt.grad(self);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * m->v[i];
        }
    });
}

// ---------------------------------------------------------------- matrix

namespace kernels {

void gemm_nn(const double* a, const double* b, double* c, int r, int k, int cdim, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<size_t>(r) * cdim, 0.0);
    for (int i = 0; i < r; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * cdim;
        for (int kk = 0; kk < k; ++kk) {
            double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<size_t>(kk) * cdim;
            for (int j = 0; j < cdim; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_tn_acc(const double* a, const double* b, double* c, int r, int k, int cdim) {
    // c[r,cdim] += a^T b with a [k,r], b [k,cdim]
    for (int kk = 0; kk < k; ++kk) {
        const double* arow = a + static_cast<size_t>(kk) * r;
        const double* brow = b + static_cast<size_t>(kk) * cdim;
        for (int i = 0; i < r; ++i) {
            double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + static_cast<size_t>(i) * cdim;
            for (int j = 0; j < cdim; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt_acc(const double* a, const double* b, double* c, int r, int k, int cdim) {
    // c[r,cdim] += a b^T with a [r,k], b [cdim,k]
    for (int i = 0; i < r; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * cdim;
        for (int j = 0; j < cdim; ++j) {
            const double* brow = b + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] += acc;
        }
    }
}

}  // namespace kernels

Var matmul(Tape& t, Var a, Var b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    require(av.ndim() == 2 && bv.ndim() == 2, "matmul expects 2-D operands");
    require(av.dim(1) == bv.dim(0), "matmul: inner dims differ, " + shape_str(av.shape) + " x " +
                                        shape_str(bv.shape));
    int r = av.dim(0), k = av.dim(1), c = bv.dim(1);
    Tensor out({r, c});
    kernels::gemm_nn(av.v.data(), bv.v.data(), out.v.data(), r, k, c, false);
    Two p = two(t, a, b);
    return t.make(std::move(out), {a, b}, [p, r, k, c](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        const auto& av2 = tt.val(Var{p.a}).v;
        const auto& bv2 = tt.val(Var{p.b}).v;
        // dA = G B^T, dB = A^T G
        if (double* ga = pgrad(tt, p.a, p.na)) kernels::gemm_nt_acc(g.data(), bv2.data(), ga, r, c, k);
        if (double* gb = pgrad(tt, p.b, p.nb)) kernels::gemm_tn_acc(av2.data(), g.data(), gb, k, r, c);
    });
}

Var add_rowvec(Tape& t, Var m, Var v) {
    const Tensor& mv = t.val(m);
    const Tensor& vv = t.val(v);
    require(mv.ndim() == 2 && vv.ndim() == 1 && mv.dim(1) == vv.dim(0),
            "add_rowvec: want [R,C] + [C]");
    int r = mv.dim(0), c = mv.dim(1);
    Tensor out = mv;
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.v[static_cast<size_t>(i) * c + j] += vv.v[j];
    Two p = two(t, m, v);
    return t.make(std::move(out), {m, v}, [p, r, c](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        if (double* gm = pgrad(tt, p.a, p.na))
            for (size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
        if (double* gv = pgrad(tt, p.b, p.nb))
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gv[j] += g[static_cast<size_t>(i) * c + j];
    });
}

Var concat_cols(Tape& t, Var a, Var b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    require(av.ndim() == 2 && bv.ndim() == 2 && av.dim(0) == bv.dim(0),
            "concat_cols: row counts differ");
    int r = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
    Tensor out({r, ca + cb});
    for (int i = 0; i < r; ++i) {
        std::copy_n(&av.v[static_cast<size_t>(i) * ca], ca, &out.v[static_cast<size_t>(i) * (ca + cb)]);
        std::copy_n(&bv.v[static_cast<size_t>(i) * cb], cb,
                    &out.v[static_cast<size_t>(i) * (ca + cb) + ca]);
    }
    Two p = two(t, a, b);
    return t.make(std::move(out), {a, b}, [p, r, ca, cb](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        if (double* ga = pgrad(tt, p.a, p.na))
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < ca; ++j)
                    ga[static_cast<size_t>(i) * ca + j] += g[static_cast<size_t>(i) * (ca + cb) + j];
        if (double* gb = pgrad(tt, p.b, p.nb))
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < cb; ++j)
                    gb[static_cast<size_t>(i) * cb + j] +=
                        g[static_cast<size_t>(i) * (ca + cb) + ca + j];
    });
}

Var slice_cols(Tape& t, Var a, int begin, int end) {
    const Tensor& av = t.val(a);
    require(av.ndim() == 2, "slice_cols expects 2-D");
    require(0 <= begin && begin < end && end <= av.dim(1), "slice_cols: bad range");
    int r = av.dim(0), c = av.dim(1), w = end - begin;
    Tensor out({r, w});
    for (int i = 0; i < r; ++i)
        std::copy_n(&av.v[static_cast<size_t>(i) * c + begin], w, &out.v[static_cast<size_t>(i) * w]);
    int pa = a.id;
    bool na = t.needs_grad(a);
    return t.make(std::move(out), {a}, [pa, na, r, c, w, begin](Tape& tt, int self) {
        if (double* ga = pgrad(tt, pa, na)) {
            const auto& g = tt.grad(self);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < w; ++j)
                    ga[static_cast<size_t>(i) * c + begin + j] += g[static_cast<size_t>(i) * w + j];
        }
    });
}

Var gather_rows(Tape& t, Var a, std::vector<int> rows) {
    const Tensor& av = t.val(a);
    require(av.ndim() == 2, "gather_rows expects 2-D");
    int c = av.dim(1);
    Tensor out({static_cast<int>(rows.size()), c});
    for (size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] >= 0 && rows[i] < av.dim(0), "gather_rows: row index out of range");
        std::copy_n(&av.v[static_cast<size_t>(rows[i]) * c], c, &out.v[i * c]);
    }
    int pa = a.id;
    bool na = t.needs_grad(a);
    auto idx = std::make_shared<std::vector<int>>(std::move(rows));
    return t.make(std::move(out), {a}, [pa, na, c, idx](Tape& tt, int self) {
        if (double* ga = pgrad(tt, pa, na)) {
            const auto& g = tt.grad(self);
            for (size_t i = 0; i < idx->size(); ++i)
                for (int j = 0; j < c; ++j)
                    ga[static_cast<size_t>((*idx)[i]) * c + j] += g[i * static_cast<size_t>(c) + j];
        }
    });
}

Var embedding_lookup(Tape& t, Var table, std::vector<int> ids) { return gather_rows(t, table, std::move(ids)); }

// ---------------------------------------------------------------- reductions

Var sum_all(Tape& t, Var a) {
    double acc = 0.0;
    for (double x : t.val(a).v) acc += x;
    int pa = a.id;
    bool na = t.needs_grad(a);
    return t.make(Tensor::scalar(acc), {a}, [pa, na](Tape& tt, int self) {
        if (double* ga = pgrad(tt, pa, na)) {
            double g = tt.grad(self)[0];
            size_t n = tt.val(Var{pa}).v.size();
            for (size_t i = 0; i < n; ++i) ga[i] += g;
        }
    });
}

Var mean_all(Tape& t, Var a) {
    long n = t.val(a).numel();
    require(n > 0, "mean over empty tensor");
    return scale(t, sum_all(t, a), 1.0 / static_cast<double>(n));
}

Var row_sum(Tape& t, Var a) {
    const Tensor& av = t.val(a);
    require(av.ndim() == 2, "row_sum expects 2-D");
    int r = av.dim(0), c = av.dim(1);
    Tensor out({r});
    for (int i = 0; i < r; ++i) {
        double acc = 0.0;
        for (int j = 0; j < c; ++j) acc += av.v[static_cast<size_t>(i) * c + j];
        out.v[i] = acc;
    }
    int pa = a.id;
    bool na = t.needs_grad(a);
    return t.make(std::move(out), {a}, [pa, na, r, c](Tape& tt, int self) {
        if (double* ga = pgrad(tt, pa, na)) {
            const auto& g = tt.grad(self);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) ga[static_cast<size_t>(i) * c + j] += g[i];
        }
    });
}

Var div_by_col(Tape& t, Var m, Var c) {
    const Tensor& mv = t.val(m);
    const Tensor& cv = t.val(c);
    require(mv.ndim() == 2 && cv.ndim() == 1 && mv.dim(0) == cv.dim(0),
            "div_by_col: want [R,C] / [R]");
    int r = mv.dim(0), cc = mv.dim(1);
    Tensor out = mv;
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < cc; ++j) out.v[static_cast<size_t>(i) * cc + j] /= cv.v[i];
    Two p = two(t, m, c);
    return t.make(std::move(out), {m, c}, [p, r, cc](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        const auto& y = tt.val(Var{self}).v;
        const auto& cv2 = tt.val(Var{p.b}).v;
        if (double* gm = pgrad(tt, p.a, p.na))
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < cc; ++j)
                    gm[static_cast<size_t>(i) * cc + j] += g[static_cast<size_t>(i) * cc + j] / cv2[i];
        if (double* gc = pgrad(tt, p.b, p.nb))
            for (int i = 0; i < r; ++i) {
                double acc = 0.0;
                for (int j = 0; j < cc; ++j)
                    acc -= g[static_cast<size_t>(i) * cc + j] * y[static_cast<size_t>(i) * cc + j];
                gc[i] += acc / cv2[i];
            }
    });
}

Var softmax_rows(Tape& t, Var a, Tensor mask) {
    const Tensor& av = t.val(a);
    require(av.ndim() == 2, "softmax_rows expects 2-D");
    int r = av.dim(0), c = av.dim(1);
    bool masked = !mask.v.empty();
    if (masked) require(mask.same_shape(av), "softmax_rows: mask shape mismatch");
    Tensor out({r, c});
    for (int i = 0; i < r; ++i) {
        const double* x = &av.v[static_cast<size_t>(i) * c];
        double* y = &out.v[static_cast<size_t>(i) * c];
        double hi = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < c; ++j)
            if (!masked || mask.at(i, j) != 0.0) hi = std::max(hi, x[j]);
        require(hi > -std::numeric_limits<double>::infinity(),
                "softmax_rows: row " + std::to_string(i) + " has no valid entries");
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            bool ok = !masked || mask.at(i, j) != 0.0;
            y[j] = ok ? std::exp(x[j] - hi) : 0.0;
            z += y[j];
        }
        for (int j = 0; j < c; ++j) y[j] /= z;
    }
    int pa = a.id;
    bool na = t.needs_grad(a);
    return t.make(std::move(out), {a}, [pa, na, r, c](Tape& tt, int self) {
        if (double* ga = pgrad(tt, pa, na)) {
            const auto& g = tt.grad(self);
            const auto& y = tt.val(Var{self}).v;
            for (int i = 0; i < r; ++i) {
                const double* yi = &y[static_cast<size_t>(i) * c];
                const double* gi = &g[static_cast<size_t>(i) * c];
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += yi[j] * gi[j];
                double* gout = ga + static_cast<size_t>(i) * c;
                for (int j = 0; j < c; ++j) gout[j] += yi[j] * (gi[j] - dot);
            }
        }
    });
}

Var pick_neg_log(Tape& t, Var probs, std::vector<int> ids, std::vector<double> weights,
                 double floor) {
    const Tensor& pv = t.val(probs);
    require(pv.ndim() == 2, "pick_neg_log expects [B,K] probabilities");
    int b = pv.dim(0), k = pv.dim(1);
    require(static_cast<int>(ids.size()) == b && static_cast<int>(weights.size()) == b,
            "pick_neg_log: ids/weights length mismatch");
    double acc = 0.0;
    for (int i = 0; i < b; ++i) {
        require(ids[i] >= 0 && ids[i] < k, "pick_neg_log: id out of range");
        acc -= weights[i] * std::log(std::max(pv.at(i, ids[i]), floor));
    }
    int pa = probs.id;
    bool na = t.needs_grad(probs);
    auto idp = std::make_shared<std::vector<int>>(std::move(ids));
    auto wp = std::make_shared<std::vector<double>>(std::move(weights));
    return t.make(Tensor::scalar(acc), {probs}, [pa, na, k, idp, wp, floor](Tape& tt, int self) {
        if (double* ga = pgrad(tt, pa, na)) {
            double g = tt.grad(self)[0];
            const auto& pv2 = tt.val(Var{pa});
            for (size_t i = 0; i < idp->size(); ++i) {
                double p = pv2.at(static_cast<int>(i), (*idp)[i]);
                if (p > floor) ga[i * static_cast<size_t>(k) + (*idp)[i]] -= g * (*wp)[i] / p;
            }
        }
    });
}

// ---------------------------------------------------------------- sequences

static void check_seq(const Tensor& s, const char* what) {
    require(s.ndim() == 3, std::string(what) + " expects [B,M,C], got " + shape_str(s.shape));
}

Var time_slice(Tape& t, Var seq, int step) {
    const Tensor& sv = t.val(seq);
    check_seq(sv, "time_slice");
    int b = sv.dim(0), m = sv.dim(1), c = sv.dim(2);
    require(step >= 0 && step < m, "time_slice: step out of range");
    Tensor out({b, c});
    for (int i = 0; i < b; ++i)
        std::copy_n(&sv.v[(static_cast<size_t>(i) * m + step) * c], c, &out.v[static_cast<size_t>(i) * c]);
    int pa = seq.id;
    bool na = t.needs_grad(seq);
    return t.make(std::move(out), {seq}, [pa, na, b, m, c, step](Tape& tt, int self) {
        if (double* ga = pgrad(tt, pa, na)) {
            const auto& g = tt.grad(self);
            for (int i = 0; i < b; ++i)
                for (int j = 0; j < c; ++j)
                    ga[(static_cast<size_t>(i) * m + step) * c + j] += g[static_cast<size_t>(i) * c + j];
        }
    });
}

Var stack_time(Tape& t, const std::vector<Var>& steps) {
    require(!steps.empty(), "stack_time: no steps");
    const Tensor& first = t.val(steps[0]);
    require(first.ndim() == 2, "stack_time expects [B,C] steps");
    int b = first.dim(0), c = first.dim(1), m = static_cast<int>(steps.size());
    Tensor out({b, m, c});
    std::vector<Var> parents;
    parents.reserve(steps.size());
    for (int s = 0; s < m; ++s) {
        const Tensor& sv = t.val(steps[s]);
        require(sv.same_shape(first), "stack_time: inconsistent step shapes");
        for (int i = 0; i < b; ++i)
            std::copy_n(&sv.v[static_cast<size_t>(i) * c], c,
                        &out.v[(static_cast<size_t>(i) * m + s) * c]);
        parents.push_back(steps[s]);
    }
    auto ids = std::make_shared<std::vector<int>>();
    auto needs = std::make_shared<std::vector<bool>>();
    for (Var s : steps) {
        ids->push_back(s.id);
        needs->push_back(t.needs_grad(s));
    }
    return t.make(std::move(out), parents, [ids, needs, b, m, c](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        for (int s = 0; s < m; ++s) {
            if (!(*needs)[s]) continue;
            double* gs = tt.grad((*ids)[s]).data();
            for (int i = 0; i < b; ++i)
                for (int j = 0; j < c; ++j)
                    gs[static_cast<size_t>(i) * c + j] += g[(static_cast<size_t>(i) * m + s) * c + j];
        }
    });
}

Var add_seq_rowvec(Tape& t, Var seq, Var x) {
    const Tensor& sv = t.val(seq);
    const Tensor& xv = t.val(x);
    check_seq(sv, "add_seq_rowvec");
    require(xv.ndim() == 2 && xv.dim(0) == sv.dim(0) && xv.dim(1) == sv.dim(2),
            "add_seq_rowvec: want [B,M,C] + [B,C]");
    int b = sv.dim(0), m = sv.dim(1), c = sv.dim(2);
    Tensor out = sv;
    for (int i = 0; i < b; ++i)
        for (int s = 0; s < m; ++s)
            for (int j = 0; j < c; ++j)
                out.v[(static_cast<size_t>(i) * m + s) * c + j] += xv.v[static_cast<size_t>(i) * c + j];
    Two p = two(t, seq, x);
    return t.make(std::move(out), {seq, x}, [p, b, m, c](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        if (double* gs = pgrad(tt, p.a, p.na))
            for (size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
        if (double* gx = pgrad(tt, p.b, p.nb))
            for (int i = 0; i < b; ++i)
                for (int s = 0; s < m; ++s)
                    for (int j = 0; j < c; ++j)
                        gx[static_cast<size_t>(i) * c + j] += g[(static_cast<size_t>(i) * m + s) * c + j];
    });
}

Var add_seq_const(Tape& t, Var seq, Tensor table) {
    const Tensor& sv = t.val(seq);
    check_seq(sv, "add_seq_const");
    require(table.ndim() == 2 && table.dim(0) == sv.dim(1) && table.dim(1) == sv.dim(2),
            "add_seq_const: table must be [M,C]");
    int b = sv.dim(0), m = sv.dim(1), c = sv.dim(2);
    Tensor out = sv;
    for (int i = 0; i < b; ++i)
        for (int s = 0; s < m; ++s)
            for (int j = 0; j < c; ++j)
                out.v[(static_cast<size_t>(i) * m + s) * c + j] += table.v[static_cast<size_t>(s) * c + j];
    int pa = seq.id;
    bool na = t.needs_grad(seq);
    return t.make(std::move(out), {seq}, [pa, na](Tape& tt, int self) {
        if (double* gs = pgrad(tt, pa, na)) {
            const auto& g = tt.grad(self);
            for (size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
        }
    });
}

Var seq_add_position_rows(Tape& t, Var seq, Var table) {
    const Tensor& sv = t.val(seq);
    const Tensor& tv = t.val(table);
    check_seq(sv, "seq_add_position_rows");
    require(tv.ndim() == 2 && tv.dim(1) == sv.dim(2), "seq_add_position_rows: depth mismatch");
    require(tv.dim(0) >= sv.dim(1), "positional table has " + std::to_string(tv.dim(0)) +
                                        " rows, sequence needs " + std::to_string(sv.dim(1)));
    int b = sv.dim(0), m = sv.dim(1), c = sv.dim(2);
    Tensor out = sv;
    for (int i = 0; i < b; ++i)
        for (int s = 0; s < m; ++s)
            for (int j = 0; j < c; ++j)
                out.v[(static_cast<size_t>(i) * m + s) * c + j] += tv.v[static_cast<size_t>(s) * c + j];
    Two p = two(t, seq, table);
    return t.make(std::move(out), {seq, table}, [p, b, m, c](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        if (double* gs = pgrad(tt, p.a, p.na))
            for (size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
        if (double* gt = pgrad(tt, p.b, p.nb))
            for (int i = 0; i < b; ++i)
                for (int s = 0; s < m; ++s)
                    for (int j = 0; j < c; ++j)
                        gt[static_cast<size_t>(s) * c + j] += g[(static_cast<size_t>(i) * m + s) * c + j];
    });
}

Var seq_dot_vec(Tape& t, Var seq, Var v) {
    const Tensor& sv = t.val(seq);
    const Tensor& vv = t.val(v);
    check_seq(sv, "seq_dot_vec");
    require(vv.ndim() == 1 && vv.dim(0) == sv.dim(2), "seq_dot_vec: vector dim mismatch");
    int b = sv.dim(0), m = sv.dim(1), c = sv.dim(2);
    Tensor out({b, m});
    for (int i = 0; i < b; ++i)
        for (int s = 0; s < m; ++s) {
            const double* row = &sv.v[(static_cast<size_t>(i) * m + s) * c];
            double acc = 0.0;
            for (int j = 0; j < c; ++j) acc += row[j] * vv.v[j];
            out.at(i, s) = acc;
        }
    Two p = two(t, seq, v);
    return t.make(std::move(out), {seq, v}, [p, b, m, c](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        const auto& sv2 = tt.val(Var{p.a}).v;
        const auto& vv2 = tt.val(Var{p.b}).v;
        if (double* gs = pgrad(tt, p.a, p.na))
            for (int i = 0; i < b; ++i)
                for (int s = 0; s < m; ++s) {
                    double gw = g[static_cast<size_t>(i) * m + s];
                    double* row = gs + (static_cast<size_t>(i) * m + s) * c;
                    for (int j = 0; j < c; ++j) row[j] += gw * vv2[j];
                }
        if (double* gv = pgrad(tt, p.b, p.nb))
            for (int i = 0; i < b; ++i)
                for (int s = 0; s < m; ++s) {
                    double gw = g[static_cast<size_t>(i) * m + s];
                    const double* row = &sv2[(static_cast<size_t>(i) * m + s) * c];
                    for (int j = 0; j < c; ++j) gv[j] += gw * row[j];
                }
    });
}

Var seq_dot_state(Tape& t, Var seq, Var s) {
    const Tensor& sv = t.val(seq);
    const Tensor& xv = t.val(s);
    check_seq(sv, "seq_dot_state");
    require(xv.ndim() == 2 && xv.dim(0) == sv.dim(0) && xv.dim(1) == sv.dim(2),
            "seq_dot_state: want [B,M,C] . [B,C]");
    int b = sv.dim(0), m = sv.dim(1), c = sv.dim(2);
    Tensor out({b, m});
    for (int i = 0; i < b; ++i)
        for (int st = 0; st < m; ++st) {
            const double* row = &sv.v[(static_cast<size_t>(i) * m + st) * c];
            const double* x = &xv.v[static_cast<size_t>(i) * c];
            double acc = 0.0;
            for (int j = 0; j < c; ++j) acc += row[j] * x[j];
            out.at(i, st) = acc;
        }
    Two p = two(t, seq, s);
    return t.make(std::move(out), {seq, s}, [p, b, m, c](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        const auto& sv2 = tt.val(Var{p.a}).v;
        const auto& xv2 = tt.val(Var{p.b}).v;
        if (double* gs = pgrad(tt, p.a, p.na))
            for (int i = 0; i < b; ++i)
                for (int st = 0; st < m; ++st) {
                    double gw = g[static_cast<size_t>(i) * m + st];
                    double* row = gs + (static_cast<size_t>(i) * m + st) * c;
                    const double* x = &xv2[static_cast<size_t>(i) * c];
                    for (int j = 0; j < c; ++j) row[j] += gw * x[j];
                }
        if (double* gx = pgrad(tt, p.b, p.nb))
            for (int i = 0; i < b; ++i)
                for (int st = 0; st < m; ++st) {
                    double gw = g[static_cast<size_t>(i) * m + st];
                    const double* row = &sv2[(static_cast<size_t>(i) * m + st) * c];
                    double* x = gx + static_cast<size_t>(i) * c;
                    for (int j = 0; j < c; ++j) x[j] += gw * row[j];
                }
    });
}

Var weighted_seq_sum(Tape& t, Var seq, Var w) {
    const Tensor& sv = t.val(seq);
    const Tensor& wv = t.val(w);
    check_seq(sv, "weighted_seq_sum");
    require(wv.ndim() == 2 && wv.dim(0) == sv.dim(0) && wv.dim(1) == sv.dim(1),
            "weighted_seq_sum: want weights [B,M]");
    int b = sv.dim(0), m = sv.dim(1), c = sv.dim(2);
    Tensor out({b, c});
    for (int i = 0; i < b; ++i)
        for (int s = 0; s < m; ++s) {
            double wt = wv.at(i, s);
            if (wt == 0.0) continue;
            const double* row = &sv.v[(static_cast<size_t>(i) * m + s) * c];
            double* o = &out.v[static_cast<size_t>(i) * c];
            for (int j = 0; j < c; ++j) o[j] += wt * row[j];
        }
    Two p = two(t, seq, w);
    return t.make(std::move(out), {seq, w}, [p, b, m, c](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        const auto& sv2 = tt.val(Var{p.a}).v;
        const auto& wv2 = tt.val(Var{p.b}).v;
        if (double* gs = pgrad(tt, p.a, p.na))
            for (int i = 0; i < b; ++i)
                for (int s = 0; s < m; ++s) {
                    double wt = wv2[static_cast<size_t>(i) * m + s];
                    if (wt == 0.0) continue;
                    double* row = gs + (static_cast<size_t>(i) * m + s) * c;
                    const double* go = &g[static_cast<size_t>(i) * c];
                    for (int j = 0; j < c; ++j) row[j] += wt * go[j];
                }
        if (double* gw = pgrad(tt, p.b, p.nb))
            for (int i = 0; i < b; ++i)
                for (int s = 0; s < m; ++s) {
                    const double* row = &sv2[(static_cast<size_t>(i) * m + s) * c];
                    const double* go = &g[static_cast<size_t>(i) * c];
                    double acc = 0.0;
                    for (int j = 0; j < c; ++j) acc += row[j] * go[j];
                    gw[static_cast<size_t>(i) * m + s] += acc;
                }
    });
}

Var scale_time(Tape& t, Var seq, Tensor mask_bm) {
    const Tensor& sv = t.val(seq);
    check_seq(sv, "scale_time");
    require(mask_bm.ndim() == 2 && mask_bm.dim(0) == sv.dim(0) && mask_bm.dim(1) == sv.dim(1),
            "scale_time: mask must be [B,M]");
    int b = sv.dim(0), m = sv.dim(1), c = sv.dim(2);
    Tensor out = sv;
    for (int i = 0; i < b; ++i)
        for (int s = 0; s < m; ++s) {
            double f = mask_bm.at(i, s);
            double* row = &out.v[(static_cast<size_t>(i) * m + s) * c];
            for (int j = 0; j < c; ++j) row[j] *= f;
        }
    int pa = seq.id;
    bool na = t.needs_grad(seq);
    auto mk = std::make_shared<Tensor>(std::move(mask_bm));
    return t.make(std::move(out), {seq}, [pa, na, b, m, c, mk](Tape& tt, int self) {
        if (double* gs = pgrad(tt, pa, na)) {
            const auto& g = tt.grad(self);
            for (int i = 0; i < b; ++i)
                for (int s = 0; s < m; ++s) {
                    double f = mk->at(i, s);
                    if (f == 0.0) continue;
                    double* row = gs + (static_cast<size_t>(i) * m + s) * c;
                    const double* go = &g[(static_cast<size_t>(i) * m + s) * c];
                    for (int j = 0; j < c; ++j) row[j] += f * go[j];
                }
        }
    });
}

Var seq_linear(Tape& t, Var seq, Var w, Var b) {
    const Tensor& sv = t.val(seq);
    const Tensor& wv = t.val(w);
    check_seq(sv, "seq_linear");
    require(wv.ndim() == 2 && wv.dim(0) == sv.dim(2), "seq_linear: weight rows must match depth");
    int bb = sv.dim(0), m = sv.dim(1), cin = sv.dim(2), cout = wv.dim(1);
    // flatten [B,M,Cin] -> [B*M,Cin], multiply, reshape back
    int rows = bb * m;
    Tensor out({bb, m, cout});
    kernels::gemm_nn(sv.v.data(), wv.v.data(), out.v.data(), rows, cin, cout, false);
    if (b.valid()) {
        const Tensor& bv = t.val(b);
        require(bv.ndim() == 1 && bv.dim(0) == cout, "seq_linear: bias dim mismatch");
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cout; ++j) out.v[static_cast<size_t>(i) * cout + j] += bv.v[j];
    }
    std::vector<Var> parents = {seq, w};
    if (b.valid()) parents.push_back(b);
    int ps = seq.id, pw = w.id, pb = b.valid() ? b.id : -1;
    bool ns = t.needs_grad(seq), nw = t.needs_grad(w), nb = b.valid() && t.needs_grad(b);
    return t.make(std::move(out), parents, [ps, pw, pb, ns, nw, nb, rows, cin, cout](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        const auto& sv2 = tt.val(Var{ps}).v;
        const auto& wv2 = tt.val(Var{pw}).v;
        if (double* gs = pgrad(tt, ps, ns)) kernels::gemm_nt_acc(g.data(), wv2.data(), gs, rows, cout, cin);
        if (double* gw = pgrad(tt, pw, nw)) kernels::gemm_tn_acc(sv2.data(), g.data(), gw, cin, rows, cout);
        if (pb >= 0)
            if (double* gb = pgrad(tt, pb, nb))
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < cout; ++j) gb[j] += g[static_cast<size_t>(i) * cout + j];
    });
}

Var reverse_sequence(Tape& t, Var seq, std::vector<int> lengths) {
    const Tensor& sv = t.val(seq);
    check_seq(sv, "reverse_sequence");
    int b = sv.dim(0), m = sv.dim(1), c = sv.dim(2);
    require(static_cast<int>(lengths.size()) == b, "reverse_sequence: lengths size mismatch");
    Tensor out = sv;
    for (int i = 0; i < b; ++i) {
        int len = lengths[i];
        require(len >= 0 && len <= m, "reverse_sequence: bad length");
        for (int s = 0; s < len; ++s) {
            const double* src = &sv.v[(static_cast<size_t>(i) * m + (len - 1 - s)) * c];
            double* dst = &out.v[(static_cast<size_t>(i) * m + s) * c];
            std::copy_n(src, c, dst);
        }
    }
    int pa = seq.id;
    bool na = t.needs_grad(seq);
    auto lens = std::make_shared<std::vector<int>>(std::move(lengths));
    return t.make(std::move(out), {seq}, [pa, na, b, m, c, lens](Tape& tt, int self) {
        if (double* ga = pgrad(tt, pa, na)) {
            const auto& g = tt.grad(self);
            for (int i = 0; i < b; ++i) {
                int len = (*lens)[i];
                for (int s = 0; s < m; ++s) {
                    int src = (s < len) ? (len - 1 - s) : s;
                    double* dst = ga + (static_cast<size_t>(i) * m + src) * c;
                    const double* go = &g[(static_cast<size_t>(i) * m + s) * c];
                    for (int j = 0; j < c; ++j) dst[j] += go[j];
                }
            }
        }
    });
}

}  // namespace htr
