#pragma once

#include <vector>

#include "htr/tape.hpp"

namespace htr {

struct LossConfig {
    double lambda = 0.5;      // weight of the CTC term in the hybrid loss
    bool ctc_enabled = true;  // requires a logit-compatible encoder head
    void validate() const;
};

// Sequence cross entropy over teacher-forced step distributions.
// step_dists: T entries of [B,K] probabilities (already softmaxed);
// targets[b]: gold output-space indices for item b (length <= T);
// positions beyond an item's length are masked out. Sum over time,
// mean over the batch. Gold probabilities are floored at 1e-12.
Var cross_entropy(Tape& t, const std::vector<Var>& step_dists,
                  const std::vector<std::vector<int>>& targets);

struct CtcResult {
    Var loss;                  // mean over feasible items, sum over frames
    std::vector<int> skipped;  // batch indices whose label cannot fit in the frames
    int feasible = 0;
};

// Log-space CTC forward/backward over the blank-expanded label. logits:
// [B,M,K] with blank as the last channel; frames beyond lengths[b] are
// ignored. Labels hold character channel indices (< K-1). Items whose
// expanded label needs more frames than available are skipped and reported.
CtcResult ctc_loss(Tape& t, Var logits, const std::vector<std::vector<int>>& labels,
                   const std::vector<int>& lengths);

// Convenience for a single item [M,K]; throws if the label does not fit.
Var ctc_loss_single(Tape& t, Var logits_mk, const std::vector<int>& label);

// lambda*ctc + (1-lambda)*ce
Var hybrid_loss(Tape& t, Var l_ctc, Var l_ce, double lambda);

// Frames needed by a label under CTC: length plus one per adjacent repeat.
int ctc_min_frames(const std::vector<int>& label);

}  // namespace htr
