#include "htr/loss.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "htr/alphabet.hpp"
#include "htr/metrics.hpp"

namespace htr {

Alphabet Alphabet::from_utf8(const std::string& chars) {
    Alphabet a;
    a.chars_ = utf8_decode(chars);
    require(!a.chars_.empty(), "alphabet must contain at least one character");
    for (size_t i = 0; i < a.chars_.size(); ++i) {
        require(a.index_.emplace(a.chars_[i], static_cast<int>(i)).second,
                "duplicate character in alphabet");
    }
    return a;
}

int Alphabet::output_index_of(int token_id) const {
    if (token_id >= 0 && token_id < size()) return token_id;
    if (token_id == eos_id()) return size();
    fail("token id " + std::to_string(token_id) + " has no decoder output slot");
}

int Alphabet::token_of_output(int output_index) const {
    require(output_index >= 0 && output_index <= size(), "bad decoder output index");
    return output_index == size() ? eos_id() : output_index;
}

int Alphabet::id_of(char32_t c) const {
    auto it = index_.find(c);
    require(it != index_.end(),
            "character not in alphabet: '" + utf8_encode({c}) + "'");
    return it->second;
}

char32_t Alphabet::char_at(int id) const {
    require(id >= 0 && id < size(), "character id out of range");
    return chars_[static_cast<size_t>(id)];
}

std::vector<int> Alphabet::encode(const std::string& utf8_text) const {
    std::vector<int> out;
    for (char32_t c : utf8_decode(utf8_text)) out.push_back(id_of(c));
    return out;
}

std::string Alphabet::decode(const std::vector<int>& char_ids) const {
    std::vector<char32_t> cps;
    for (int id : char_ids) cps.push_back(char_at(id));
    return utf8_encode(cps);
}

std::string Alphabet::to_utf8() const { return utf8_encode(chars_); }

void LossConfig::validate() const {
    require(lambda >= 0.0 && lambda <= 1.0, "loss lambda must lie in [0,1]");
    require(lambda == 0.0 || ctc_enabled, "lambda > 0 requires the CTC head");
}

Var cross_entropy(Tape& t, const std::vector<Var>& step_dists,
                  const std::vector<std::vector<int>>& targets) {
    require(!step_dists.empty(), "cross_entropy: no distributions");
    int batch = t.val(step_dists[0]).dim(0);
    require(static_cast<int>(targets.size()) == batch, "cross_entropy: batch size mismatch");
    size_t steps = step_dists.size();
    for (const auto& row : targets) {
        require(!row.empty(), "cross_entropy: empty target");
        require(row.size() <= steps, "cross_entropy: target longer than the unroll");
    }
    double inv_b = 1.0 / static_cast<double>(batch);
    Var total;
    for (size_t s = 0; s < steps; ++s) {
        std::vector<int> ids(batch, 0);
        std::vector<double> w(batch, 0.0);
        bool any = false;
        for (int b = 0; b < batch; ++b)
            if (s < targets[b].size()) {
                ids[b] = targets[b][s];
                w[b] = inv_b;
                any = true;
            }
        if (!any) break;
        Var term = pick_neg_log(t, step_dists[s], std::move(ids), std::move(w));
        total = total.valid() ? add(t, total, term) : term;
    }
    return total;
}

int ctc_min_frames(const std::vector<int>& label) {
    int repeats = 0;
    for (size_t i = 1; i < label.size(); ++i)
        if (label[i] == label[i - 1]) ++repeats;
    return static_cast<int>(label.size()) + repeats;
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lse2(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    double hi = std::max(a, b);
    return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

// one item's forward/backward pass; returns -log p and the gradient wrt the
// item's logits (layout [M,K])
double ctc_item(const double* logits, int m, int k, const std::vector<int>& label,
                std::vector<double>* grad_out) {
    const int blank = k - 1;
    const int s_len = 2 * static_cast<int>(label.size()) + 1;
    auto z = [&](int s) { return (s % 2 == 0) ? blank : label[static_cast<size_t>(s / 2)]; };

    // log softmax per frame
    std::vector<double> lp(static_cast<size_t>(m) * k);
    for (int tt = 0; tt < m; ++tt) {
        const double* row = logits + static_cast<size_t>(tt) * k;
        double hi = *std::max_element(row, row + k);
        double sum = 0.0;
        for (int c = 0; c < k; ++c) sum += std::exp(row[c] - hi);
        double logz = hi + std::log(sum);
        for (int c = 0; c < k; ++c) lp[static_cast<size_t>(tt) * k + c] = row[c] - logz;
    }

    auto at = [&](std::vector<double>& a, int tt, int s) -> double& {
        return a[static_cast<size_t>(tt) * s_len + s];
    };

    std::vector<double> la(static_cast<size_t>(m) * s_len, kNegInf);
    at(la, 0, 0) = lp[static_cast<size_t>(0) * k + blank];
    if (s_len > 1) at(la, 0, 1) = lp[static_cast<size_t>(0) * k + z(1)];
    for (int tt = 1; tt < m; ++tt)
        for (int s = 0; s < s_len; ++s) {
            double best = at(la, tt - 1, s);
            if (s >= 1) best = lse2(best, at(la, tt - 1, s - 1));
            if (s >= 2 && z(s) != blank && z(s) != z(s - 2)) best = lse2(best, at(la, tt - 1, s - 2));
            if (best != kNegInf) at(la, tt, s) = best + lp[static_cast<size_t>(tt) * k + z(s)];
        }

    double logp = at(la, m - 1, s_len - 1);
    if (s_len > 1) logp = lse2(logp, at(la, m - 1, s_len - 2));
    require(logp != kNegInf, "ctc: no feasible alignment path");

    if (grad_out) {
        // beta excludes the emission at the current frame, so alpha+beta is
        // the log posterior of passing through (t, s)
        std::vector<double> lb(static_cast<size_t>(m) * s_len, kNegInf);
        at(lb, m - 1, s_len - 1) = 0.0;
        if (s_len > 1) at(lb, m - 1, s_len - 2) = 0.0;
        for (int tt = m - 2; tt >= 0; --tt)
            for (int s = 0; s < s_len; ++s) {
                double acc = at(lb, tt + 1, s) + lp[static_cast<size_t>(tt + 1) * k + z(s)];
                if (s + 1 < s_len)
                    acc = lse2(acc, at(lb, tt + 1, s + 1) + lp[static_cast<size_t>(tt + 1) * k + z(s + 1)]);
                if (s + 2 < s_len && z(s + 2) != blank && z(s + 2) != z(s))
                    acc = lse2(acc, at(lb, tt + 1, s + 2) + lp[static_cast<size_t>(tt + 1) * k + z(s + 2)]);
                at(lb, tt, s) = acc;
            }

        grad_out->assign(static_cast<size_t>(m) * k, 0.0);
        for (int tt = 0; tt < m; ++tt) {
            // sum posterior mass per channel
            std::vector<double> mass(static_cast<size_t>(k), kNegInf);
            for (int s = 0; s < s_len; ++s) {
                double post = at(la, tt, s) + at(lb, tt, s);
                if (post == kNegInf) continue;
                int c = z(s);
                mass[static_cast<size_t>(c)] = lse2(mass[static_cast<size_t>(c)], post);
            }
            double* g = grad_out->data() + static_cast<size_t>(tt) * k;
            for (int c = 0; c < k; ++c) {
                double y = std::exp(lp[static_cast<size_t>(tt) * k + c]);
                double post = mass[static_cast<size_t>(c)] == kNegInf
                                  ? 0.0
                                  : std::exp(mass[static_cast<size_t>(c)] - logp);
                g[c] = y - post;
            }
        }
    }
    return -logp;
}

}  // namespace

CtcResult ctc_loss(Tape& t, Var logits, const std::vector<std::vector<int>>& labels,
                   const std::vector<int>& lengths) {
    const Tensor& lv = t.val(logits);
    require(lv.ndim() == 3, "ctc_loss expects [B,M,K] logits");
    int b = lv.dim(0), m = lv.dim(1), k = lv.dim(2);
    require(k >= 2, "ctc_loss needs at least one character channel plus blank");
    require(static_cast<int>(labels.size()) == b && static_cast<int>(lengths.size()) == b,
            "ctc_loss: labels/lengths size mismatch");

    CtcResult res;
    std::vector<int> use;
    for (int i = 0; i < b; ++i) {
        require(lengths[i] >= 1 && lengths[i] <= m, "ctc_loss: bad frame length");
        for (int c : labels[i])
            require(c >= 0 && c < k - 1, "ctc_loss: label channel out of range");
        if (ctc_min_frames(labels[i]) > lengths[i])
            res.skipped.push_back(i);
        else
            use.push_back(i);
    }
    res.feasible = static_cast<int>(use.size());
    if (use.empty()) {
        res.loss = t.constant(Tensor::scalar(0.0));
        return res;
    }

    double inv = 1.0 / static_cast<double>(use.size());
    auto grads = std::make_shared<std::vector<std::vector<double>>>();
    double total = 0.0;
    for (int i : use) {
        std::vector<double> g;
        total += ctc_item(lv.v.data() + static_cast<size_t>(i) * m * k, lengths[i], k, labels[i], &g);
        grads->push_back(std::move(g));
    }

    int pid = logits.id;
    bool ng = t.needs_grad(logits);
    auto idx = std::make_shared<std::vector<int>>(use);
    auto lens = std::make_shared<std::vector<int>>(lengths);
    res.loss = t.make(Tensor::scalar(total * inv), {logits},
                      [pid, ng, idx, lens, grads, m, k, inv](Tape& tt, int self) {
                          if (!ng) return;
                          double g0 = tt.grad(self)[0] * inv;
                          double* gx = tt.grad(pid).data();
                          for (size_t u = 0; u < idx->size(); ++u) {
                              int i = (*idx)[u];
                              const auto& gi = (*grads)[u];
                              int mi = (*lens)[i];
                              for (int tt2 = 0; tt2 < mi; ++tt2)
                                  for (int c = 0; c < k; ++c)
                                      gx[(static_cast<size_t>(i) * m + tt2) * k + c] +=
                                          g0 * gi[static_cast<size_t>(tt2) * k + c];
                          }
                      });
    return res;
}

Var ctc_loss_single(Tape& t, Var logits_mk, const std::vector<int>& label) {
    const Tensor& lv = t.val(logits_mk);
    require(lv.ndim() == 2, "ctc_loss_single expects [M,K]");
    int m = lv.dim(0), k = lv.dim(1);
    require(ctc_min_frames(label) <= m,
            "label needs " + std::to_string(ctc_min_frames(label)) + " frames but only " +
                std::to_string(m) + " are available");
    // reshape to [1,M,K]; the flat layout is identical
    int pid = logits_mk.id;
    bool ng = t.needs_grad(logits_mk);
    Var reshaped = t.make(Tensor({1, m, k}, lv.v), {logits_mk}, [pid, ng](Tape& tt, int self) {
        if (!ng) return;
        const auto& g = tt.grad(self);
        double* gx = tt.grad(pid).data();
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    auto res = ctc_loss(t, reshaped, {label}, {m});
    return res.loss;
}

Var hybrid_loss(Tape& t, Var l_ctc, Var l_ce, double lambda) {
    require(lambda >= 0.0 && lambda <= 1.0, "hybrid loss lambda must lie in [0,1]");
    if (lambda == 0.0) return l_ce;
    if (lambda == 1.0) return l_ctc;
    return add(t, scale(t, l_ctc, lambda), scale(t, l_ce, 1.0 - lambda));
}

}  // namespace htr
