#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "htr/tape.hpp"

namespace htr {

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

// "same" padding offset for ceil(in/stride) outputs
int pad_before(int in, int out, int k, int s) {
    int total = std::max((out - 1) * s + k - in, 0);
    return total / 2;
}

}  // namespace

Var conv2d(Tape& t, Var x, Var kernel, Var bias, int sy, int sx) {
    const Tensor& xv = t.val(x);
    const Tensor& kv = t.val(kernel);
    require(xv.ndim() == 4, "conv2d expects [B,H,W,C] input, got " + shape_str(xv.shape));
    require(kv.ndim() == 4, "conv2d expects [kh,kw,Cin,F] kernel");
    require(sy > 0 && sx > 0, "conv2d: strides must be positive");
    int b = xv.dim(0), h = xv.dim(1), w = xv.dim(2), cin = xv.dim(3);
    int kh = kv.dim(0), kw = kv.dim(1), f = kv.dim(3);
    require(h > 0 && w > 0, "conv2d: zero-sized spatial dimension");
    require(kv.dim(2) == cin, "conv2d: kernel input channels mismatch");
    int oh = ceil_div(h, sy), ow = ceil_div(w, sx);
    int py = pad_before(h, oh, kh, sy), px = pad_before(w, ow, kw, sx);

    Tensor out({b, oh, ow, f});
    const Tensor& bv = t.val(bias);
    require(bv.ndim() == 1 && bv.dim(0) == f, "conv2d: bias dim mismatch");
    for (long i = 0; i < out.numel(); ++i) out.v[i] = bv.v[i % f];
    for (int bi = 0; bi < b; ++bi)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double* orow = &out.v[((static_cast<size_t>(bi) * oh + oy) * ow + ox) * f];
                for (int dy = 0; dy < kh; ++dy) {
                    int iy = oy * sy - py + dy;
                    if (iy < 0 || iy >= h) continue;
                    for (int dx = 0; dx < kw; ++dx) {
                        int ix = ox * sx - px + dx;
                        if (ix < 0 || ix >= w) continue;
                        const double* xrow = &xv.v[((static_cast<size_t>(bi) * h + iy) * w + ix) * cin];
                        const double* krow = &kv.v[(static_cast<size_t>(dy) * kw + dx) * cin * f];
                        for (int ci = 0; ci < cin; ++ci) {
                            double xcv = xrow[ci];
                            if (xcv == 0.0) continue;
                            const double* kf = krow + static_cast<size_t>(ci) * f;
                            for (int fi = 0; fi < f; ++fi) orow[fi] += xcv * kf[fi];
                        }
                    }
                }
            }

    int pxid = x.id, pkid = kernel.id, pbid = bias.id;
    bool nx = t.needs_grad(x), nk = t.needs_grad(kernel), nb = t.needs_grad(bias);
    return t.make(std::move(out), {x, kernel, bias},
                  [=](Tape& tt, int self) {
                      const auto& g = tt.grad(self);
                      const auto& xv2 = tt.val(Var{pxid});
                      const auto& kv2 = tt.val(Var{pkid});
                      double* gx = nx ? tt.grad(pxid).data() : nullptr;
                      double* gk = nk ? tt.grad(pkid).data() : nullptr;
                      double* gb = nb ? tt.grad(pbid).data() : nullptr;
                      if (gb)
                          for (size_t i = 0; i < g.size(); ++i) gb[i % f] += g[i];
                      if (!gx && !gk) return;
                      for (int bi = 0; bi < b; ++bi)
                          for (int oy = 0; oy < oh; ++oy)
                              for (int ox = 0; ox < ow; ++ox) {
                                  const double* grow =
                                      &g[((static_cast<size_t>(bi) * oh + oy) * ow + ox) * f];
                                  for (int dy = 0; dy < kh; ++dy) {
                                      int iy = oy * sy - py + dy;
                                      if (iy < 0 || iy >= h) continue;
                                      for (int dx = 0; dx < kw; ++dx) {
                                          int ix = ox * sx - px + dx;
                                          if (ix < 0 || ix >= w) continue;
                                          size_t xoff = ((static_cast<size_t>(bi) * h + iy) * w + ix) * cin;
                                          size_t koff = (static_cast<size_t>(dy) * kw + dx) * cin * f;
                                          for (int ci = 0; ci < cin; ++ci) {
                                              const double* kf = &kv2.v[koff + static_cast<size_t>(ci) * f];
                                              if (gx) {
                                                  double acc = 0.0;
                                                  for (int fi = 0; fi < f; ++fi) acc += grow[fi] * kf[fi];
                                                  gx[xoff + ci] += acc;
                                              }
                                              if (gk) {
                                                  double xcv = xv2.v[xoff + ci];
                                                  if (xcv != 0.0) {
                                                      double* kg = gk + koff + static_cast<size_t>(ci) * f;
                                                      for (int fi = 0; fi < f; ++fi)
                                                          kg[fi] += xcv * grow[fi];
                                                  }
                                              }
                                          }
                                      }
                                  }
                              }
                  });
}

Var maxpool2d(Tape& t, Var x, int ky, int kx, int sy, int sx) {
    const Tensor& xv = t.val(x);
    require(xv.ndim() == 4, "maxpool2d expects [B,H,W,C]");
    require(ky > 0 && kx > 0 && sy > 0 && sx > 0, "maxpool2d: bad window");
    int b = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
    int oh = ceil_div(h, sy), ow = ceil_div(w, sx);
    int py = pad_before(h, oh, ky, sy), px = pad_before(w, ow, kx, sx);
    Tensor out({b, oh, ow, c});
    auto argmax = std::make_shared<std::vector<size_t>>(out.v.size());
    for (int bi = 0; bi < b; ++bi)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
                for (int ci = 0; ci < c; ++ci) {
                    double best = -std::numeric_limits<double>::infinity();
                    size_t best_at = 0;
                    for (int dy = 0; dy < ky; ++dy) {
                        int iy = oy * sy - py + dy;
                        if (iy < 0 || iy >= h) continue;
                        for (int dx = 0; dx < kx; ++dx) {
                            int ix = ox * sx - px + dx;
                            if (ix < 0 || ix >= w) continue;
                            size_t at = ((static_cast<size_t>(bi) * h + iy) * w + ix) * c + ci;
                            if (xv.v[at] > best) {
                                best = xv.v[at];
                                best_at = at;
                            }
                        }
                    }
                    size_t oat = ((static_cast<size_t>(bi) * oh + oy) * ow + ox) * c + ci;
                    out.v[oat] = best;
                    (*argmax)[oat] = best_at;
                }
    int pa = x.id;
    bool na = t.needs_grad(x);
    return t.make(std::move(out), {x}, [pa, na, argmax](Tape& tt, int self) {
        if (double* gx = na ? tt.grad(pa).data() : nullptr) {
            const auto& g = tt.grad(self);
            for (size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
        }
    });
}

Var scale_width(Tape& t, Var x, Tensor mask_bw) {
    const Tensor& xv = t.val(x);
    require(xv.ndim() == 4, "scale_width expects [B,H,W,C]");
    int b = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
    require(mask_bw.ndim() == 2 && mask_bw.dim(0) == b && mask_bw.dim(1) == w,
            "scale_width: mask must be [B,W]");
    Tensor out = xv;
    for (int bi = 0; bi < b; ++bi)
        for (int iy = 0; iy < h; ++iy)
            for (int ix = 0; ix < w; ++ix) {
                double f = mask_bw.at(bi, ix);
                double* row = &out.v[((static_cast<size_t>(bi) * h + iy) * w + ix) * c];
                for (int ci = 0; ci < c; ++ci) row[ci] *= f;
            }
    int pa = x.id;
    bool na = t.needs_grad(x);
    auto mk = std::make_shared<Tensor>(std::move(mask_bw));
    return t.make(std::move(out), {x}, [pa, na, b, h, w, c, mk](Tape& tt, int self) {
        if (double* gx = na ? tt.grad(pa).data() : nullptr) {
            const auto& g = tt.grad(self);
            for (int bi = 0; bi < b; ++bi)
                for (int iy = 0; iy < h; ++iy)
                    for (int ix = 0; ix < w; ++ix) {
                        double f = mk->at(bi, ix);
                        if (f == 0.0) continue;
                        size_t off = ((static_cast<size_t>(bi) * h + iy) * w + ix) * c;
                        for (int ci = 0; ci < c; ++ci) gx[off + ci] += f * g[off + ci];
                    }
        }
    });
}

Var columns_to_sequence(Tape& t, Var x) {
    const Tensor& xv = t.val(x);
    require(xv.ndim() == 4, "columns_to_sequence expects [B,H,W,C]");
    int b = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
    Tensor out({b, w, h * c});
    for (int bi = 0; bi < b; ++bi)
        for (int iy = 0; iy < h; ++iy)
            for (int ix = 0; ix < w; ++ix) {
                const double* src = &xv.v[((static_cast<size_t>(bi) * h + iy) * w + ix) * c];
                double* dst = &out.v[(static_cast<size_t>(bi) * w + ix) * (h * c) + static_cast<size_t>(iy) * c];
                std::copy_n(src, c, dst);
            }
    int pa = x.id;
    bool na = t.needs_grad(x);
    return t.make(std::move(out), {x}, [pa, na, b, h, w, c](Tape& tt, int self) {
        if (double* gx = na ? tt.grad(pa).data() : nullptr) {
            const auto& g = tt.grad(self);
            for (int bi = 0; bi < b; ++bi)
                for (int iy = 0; iy < h; ++iy)
                    for (int ix = 0; ix < w; ++ix) {
                        double* dst = gx + ((static_cast<size_t>(bi) * h + iy) * w + ix) * c;
                        const double* src =
                            &g[(static_cast<size_t>(bi) * w + ix) * (h * c) + static_cast<size_t>(iy) * c];
                        for (int ci = 0; ci < c; ++ci) dst[ci] += src[ci];
                    }
        }
    });
}

Var conv1d_same(Tape& t, Var x, Var kernel, Var bias) {
    const Tensor& xv = t.val(x);
    const Tensor& kv = t.val(kernel);
    require(xv.ndim() == 3, "conv1d_same expects [B,M,C]");
    require(kv.ndim() == 3, "conv1d_same expects kernel [K,Cin,F]");
    int b = xv.dim(0), m = xv.dim(1), cin = xv.dim(2);
    int k = kv.dim(0), f = kv.dim(2);
    require(kv.dim(1) == cin, "conv1d_same: channel mismatch");
    int pad = (k - 1) / 2;
    Tensor out({b, m, f});
    const Tensor& bv = t.val(bias);
    require(bv.ndim() == 1 && bv.dim(0) == f, "conv1d_same: bias dim mismatch");
    for (long i = 0; i < out.numel(); ++i) out.v[i] = bv.v[i % f];
    for (int bi = 0; bi < b; ++bi)
        for (int s = 0; s < m; ++s) {
            double* orow = &out.v[(static_cast<size_t>(bi) * m + s) * f];
            for (int dk = 0; dk < k; ++dk) {
                int is = s - pad + dk;
                if (is < 0 || is >= m) continue;
                const double* xrow = &xv.v[(static_cast<size_t>(bi) * m + is) * cin];
                const double* krow = &kv.v[static_cast<size_t>(dk) * cin * f];
                for (int ci = 0; ci < cin; ++ci) {
                    double xcv = xrow[ci];
                    if (xcv == 0.0) continue;
                    const double* kf = krow + static_cast<size_t>(ci) * f;
                    for (int fi = 0; fi < f; ++fi) orow[fi] += xcv * kf[fi];
                }
            }
        }
    int pxid = x.id, pkid = kernel.id, pbid = bias.id;
    bool nx = t.needs_grad(x), nk = t.needs_grad(kernel), nb = t.needs_grad(bias);
    return t.make(std::move(out), {x, kernel, bias}, [=](Tape& tt, int self) {
        const auto& g = tt.grad(self);
        const auto& xv2 = tt.val(Var{pxid});
        const auto& kv2 = tt.val(Var{pkid});
        double* gx = nx ? tt.grad(pxid).data() : nullptr;
        double* gk = nk ? tt.grad(pkid).data() : nullptr;
        double* gb = nb ? tt.grad(pbid).data() : nullptr;
        if (gb)
            for (size_t i = 0; i < g.size(); ++i) gb[i % f] += g[i];
        if (!gx && !gk) return;
        for (int bi = 0; bi < b; ++bi)
            for (int s = 0; s < m; ++s) {
                const double* grow = &g[(static_cast<size_t>(bi) * m + s) * f];
                for (int dk = 0; dk < k; ++dk) {
                    int is = s - pad + dk;
                    if (is < 0 || is >= m) continue;
                    size_t xoff = (static_cast<size_t>(bi) * m + is) * cin;
                    size_t koff = static_cast<size_t>(dk) * cin * f;
                    for (int ci = 0; ci < cin; ++ci) {
                        const double* kf = &kv2.v[koff + static_cast<size_t>(ci) * f];
                        if (gx) {
                            double acc = 0.0;
                            for (int fi = 0; fi < f; ++fi) acc += grow[fi] * kf[fi];
                            gx[xoff + ci] += acc;
                        }
                        if (gk) {
                            double xcv = xv2.v[xoff + ci];
                            if (xcv != 0.0) {
                                double* kg = gk + koff + static_cast<size_t>(ci) * f;
                                for (int fi = 0; fi < f; ++fi) kg[fi] += xcv * grow[fi];
                            }
                        }
                    }
                }
            }
    });
}

Var lstm_cell(Tape& t, Var x, Var h_prev, Var c_prev, Var w_ih, Var w_hh, Var b) {
    const Tensor& xv = t.val(x);
    const Tensor& hv = t.val(h_prev);
    const Tensor& cv = t.val(c_prev);
    const Tensor& wih = t.val(w_ih);
    const Tensor& whh = t.val(w_hh);
    const Tensor& bv = t.val(b);
    require(xv.ndim() == 2 && hv.ndim() == 2 && cv.ndim() == 2, "lstm_cell expects 2-D states");
    int bb = xv.dim(0), in = xv.dim(1), hh = hv.dim(1);
    require(hv.dim(0) == bb && cv.dim(0) == bb && cv.dim(1) == hh, "lstm_cell: state shape mismatch");
    require(wih.ndim() == 2 && wih.dim(0) == in && wih.dim(1) == 4 * hh, "lstm_cell: w_ih shape");
    require(whh.ndim() == 2 && whh.dim(0) == hh && whh.dim(1) == 4 * hh, "lstm_cell: w_hh shape");
    require(bv.ndim() == 1 && bv.dim(0) == 4 * hh, "lstm_cell: bias shape");

    // gate order i,f,g,o
    auto acts = std::make_shared<Tensor>(Shape{bb, 4 * hh});
    for (int i = 0; i < bb; ++i)
        for (int j = 0; j < 4 * hh; ++j) acts->at(i, j) = bv.v[j];
    kernels::gemm_nn(xv.v.data(), wih.v.data(), acts->v.data(), bb, in, 4 * hh, true);
    kernels::gemm_nn(hv.v.data(), whh.v.data(), acts->v.data(), bb, hh, 4 * hh, true);

    auto tanh_c = std::make_shared<Tensor>(Shape{bb, hh});
    Tensor out({bb, 2 * hh});
    for (int i = 0; i < bb; ++i) {
        double* a = &acts->v[static_cast<size_t>(i) * 4 * hh];
        for (int j = 0; j < hh; ++j) {
            double ig = 1.0 / (1.0 + std::exp(-a[j]));
            double fg = 1.0 / (1.0 + std::exp(-a[hh + j]));
            double gg = std::tanh(a[2 * hh + j]);
            double og = 1.0 / (1.0 + std::exp(-a[3 * hh + j]));
            a[j] = ig;
            a[hh + j] = fg;
            a[2 * hh + j] = gg;
            a[3 * hh + j] = og;
            double cn = fg * cv.at(i, j) + ig * gg;
            double tc = std::tanh(cn);
            tanh_c->at(i, j) = tc;
            out.at(i, j) = og * tc;       // h
            out.at(i, hh + j) = cn;       // c
        }
    }

    struct Ids {
        int x, h, c, wih, whh, b;
        bool nx, nh, nc, nwih, nwhh, nb;
    } ids{x.id,           h_prev.id,        c_prev.id,        w_ih.id,
          w_hh.id,        b.id,             t.needs_grad(x),  t.needs_grad(h_prev),
          t.needs_grad(c_prev), t.needs_grad(w_ih), t.needs_grad(w_hh), t.needs_grad(b)};

    return t.make(std::move(out), {x, h_prev, c_prev, w_ih, w_hh, b},
                  [ids, acts, tanh_c, bb, in, hh](Tape& tt, int self) {
                      const auto& g = tt.grad(self);
                      const auto& cv2 = tt.val(Var{ids.c});
                      Tensor da({bb, 4 * hh});  // gradients on gate pre-activations
                      for (int i = 0; i < bb; ++i) {
                          const double* a = &acts->v[static_cast<size_t>(i) * 4 * hh];
                          for (int j = 0; j < hh; ++j) {
                              double gh = g[static_cast<size_t>(i) * 2 * hh + j];
                              double gc = g[static_cast<size_t>(i) * 2 * hh + hh + j];
                              double ig = a[j], fg = a[hh + j], gg = a[2 * hh + j], og = a[3 * hh + j];
                              double tc = tanh_c->at(i, j);
                              double d_c = gc + gh * og * (1.0 - tc * tc);
                              da.at(i, j) = d_c * gg * ig * (1.0 - ig);
                              da.at(i, hh + j) = d_c * cv2.at(i, j) * fg * (1.0 - fg);
                              da.at(i, 2 * hh + j) = d_c * ig * (1.0 - gg * gg);
                              da.at(i, 3 * hh + j) = gh * tc * og * (1.0 - og);
                              if (ids.nc) tt.grad(ids.c)[static_cast<size_t>(i) * hh + j] += d_c * fg;
                          }
                      }
                      const auto& xv2 = tt.val(Var{ids.x}).v;
                      const auto& hv2 = tt.val(Var{ids.h}).v;
                      const auto& wihv = tt.val(Var{ids.wih}).v;
                      const auto& whhv = tt.val(Var{ids.whh}).v;
                      if (ids.nx)
                          kernels::gemm_nt_acc(da.v.data(), wihv.data(), tt.grad(ids.x).data(), bb,
                                               4 * hh, in);
                      if (ids.nh)
                          kernels::gemm_nt_acc(da.v.data(), whhv.data(), tt.grad(ids.h).data(), bb,
                                               4 * hh, hh);
                      if (ids.nwih)
                          kernels::gemm_tn_acc(xv2.data(), da.v.data(), tt.grad(ids.wih).data(), in,
                                               bb, 4 * hh);
                      if (ids.nwhh)
                          kernels::gemm_tn_acc(hv2.data(), da.v.data(), tt.grad(ids.whh).data(), hh,
                                               bb, 4 * hh);
                      if (ids.nb) {
                          double* gb = tt.grad(ids.b).data();
                          for (int i = 0; i < bb; ++i)
                              for (int j = 0; j < 4 * hh; ++j)
                                  gb[j] += da.v[static_cast<size_t>(i) * 4 * hh + j];
                      }
                  });
}

}  // namespace htr
