#pragma once

#include <json.hpp>

#include "mdfn/boxes.hpp"

namespace mdfn {

struct LossReport {
  double total = 0.0;  // (conf + alpha*loc) / n_matched, 0 when nothing matched
  double conf = 0.0;   // raw confidence-loss sum (positives + mined negatives)
  double loc = 0.0;    // raw localization-loss sum over positives
  int n_matched = 0;
  int n_negatives_used = 0;

  nlohmann::json to_json() const;
};

struct DetectionLossResult {
  Tensor loss;  // scalar graph node; constant zero when n_matched == 0
  LossReport report;
};

// Joint objective over a batch: smooth-L1 on the encoded offsets of matched
// boxes plus softmax cross-entropy on matched positives and the
// highest-loss negatives (mined per image at neg_pos_ratio : 1), everything
// normalized by the total match count.
DetectionLossResult detection_loss(const std::vector<Tensor>& preds,
                                   const DefaultBoxGrid& grid,
                                   const std::vector<MatchAssignment>& assignments,
                                   const std::vector<std::vector<GroundTruthBox>>& gts,
                                   int num_classes, double alpha = 1.0,
                                   double neg_pos_ratio = 3.0);

}  // namespace mdfn
