#pragma once

// Independent reference implementations used as test oracles. Everything
// here is deliberately written the slow, obvious way and must stay
// decoupled from the implementation paths it checks.

#include <functional>
#include <vector>

#include "mdfn/boxes.hpp"
#include "mdfn/eval.hpp"
#include "mdfn/tensor.hpp"

namespace oracle {

// direct 6-loop cross-correlation, no im2col
std::vector<double> naive_conv2d(const std::vector<double>& x, int b, int cin, int h, int w,
                                 const std::vector<double>& weights,
                                 const std::vector<double>& bias, int cout, int k, int stride,
                                 int pad);

// brute-force window maxima, floor division
std::vector<double> naive_max_pool(const std::vector<double>& x, int b, int c, int h, int w,
                                   int window, int stride);

// per-row logsumexp cross-entropy, mean reduction
double logsumexp_ce(const std::vector<double>& logits, int n, int c,
                    const std::vector<int>& targets);

double smooth_l1_ref(const std::vector<double>& pred, const std::vector<double>& target);

// Central finite differences of f against the analytic gradients populated
// by backward(). f rebuilds the graph on every call. Returns the max
// relative error |a-n| / max(1, |a|, |n|) over every element of every
// checked tensor.
double finite_diff_check(const std::function<mdfn::Tensor()>& f,
                         const std::vector<mdfn::Tensor>& checked, double eps = 1e-5);

// exhaustive matcher: same contract as mdfn::match, independently coded
struct BruteMatch {
  std::vector<int> gt_index;
  std::vector<bool> forced;
};
BruteMatch brute_force_match(const std::vector<mdfn::Box>& defaults,
                             const std::vector<mdfn::GroundTruthBox>& gts, double threshold);

// repeated max-extraction suppression
std::vector<mdfn::Detection> nms_reference(std::vector<mdfn::Detection> dets,
                                           double iou_threshold);

// all-point AP via explicit enumeration of the PR curve
double ap_reference(std::vector<mdfn::DetRecord> dets, const std::vector<mdfn::GtRecord>& gts,
                    double iou_threshold);

// uniform random tensor in [lo, hi]
mdfn::Tensor random_tensor(std::vector<int> shape, mdfn::Rng& rng, double lo = -1.0,
                           double hi = 1.0);

}  // namespace oracle
