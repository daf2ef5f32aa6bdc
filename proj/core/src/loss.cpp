#include "mdfn/loss.hpp"

#include <algorithm>
#include <cmath>

namespace mdfn {

nlohmann::json LossReport::to_json() const {
  return {{"total", total},
          {"conf", conf},
          {"loc", loc},
          {"n_matched", n_matched},
          {"n_negatives_used", n_negatives_used}};
}

DetectionLossResult detection_loss(const std::vector<Tensor>& preds,
                                   const DefaultBoxGrid& grid,
                                   const std::vector<MatchAssignment>& assignments,
                                   const std::vector<std::vector<GroundTruthBox>>& gts,
                                   int num_classes, double alpha, double neg_pos_ratio) {
  if (preds.size() != grid.taps.size())
    throw ShapeError(msg("detection_loss: ", preds.size(), " prediction tensors for ",
                         grid.taps.size(), " taps"));
  if (preds.empty()) throw ValueError("detection_loss: no predictions");
  const int batch = preds[0].dim(0);
  if (static_cast<int>(assignments.size()) != batch ||
      static_cast<int>(gts.size()) != batch)
    throw ShapeError(msg("detection_loss: batch ", batch, " vs ", assignments.size(),
                         " assignments / ", gts.size(), " gt lists"));
  const int cols = num_classes + 4;
  const int k = grid.boxes_per_cell;

  // flatten every tap to (B*m*n*k, c+4) rows, then stack taps
  std::vector<Tensor> tap_rows;
  std::vector<int> tap_row_offset(grid.taps.size());
  std::vector<int> tap_box_offset(grid.taps.size());
  int row_total = 0, box_total = 0;
  for (size_t t = 0; t < preds.size(); ++t) {
    const int m = grid.taps[t][0], n = grid.taps[t][1];
    if (preds[t].dim(0) != batch || preds[t].dim(1) != k * cols ||
        preds[t].dim(2) != m || preds[t].dim(3) != n)
      throw ShapeError(msg("detection_loss: prediction ", t, " has shape ",
                           shape_str(preds[t].shape()), ", expected (", batch, ",", k * cols,
                           ",", m, ",", n, ")"));
    tap_row_offset[t] = row_total;
    tap_box_offset[t] = box_total;
    tap_rows.push_back(reshape(permute_bhwc(preds[t]), {batch * m * n * k, cols}));
    row_total += batch * m * n * k;
    box_total += m * n * k;
  }
  if (box_total != grid.total())
    throw ShapeError(msg("detection_loss: predictions cover ", box_total,
                         " boxes, grid has ", grid.total()));
  Tensor rows = concat_rows(tap_rows);

  // row index of default box d for batch item b
  auto row_of = [&](int b, int d) {
    size_t t = 0;
    while (t + 1 < tap_box_offset.size() && d >= tap_box_offset[t + 1]) ++t;
    const int local = d - tap_box_offset[t];
    const int per_img = grid.boxes_per_tap[t];
    return tap_row_offset[t] + b * per_img + local;
  };

  std::vector<int> pos_rows;
  std::vector<int> pos_targets;
  std::vector<double> pos_offsets;
  std::vector<int> n_pos_per_image(batch, 0);
  for (int b = 0; b < batch; ++b) {
    const MatchAssignment& as = assignments[b];
    if (static_cast<int>(as.gt_index.size()) != grid.total())
      throw ShapeError(msg("detection_loss: assignment ", b, " covers ", as.gt_index.size(),
                           " boxes, grid has ", grid.total()));
    for (int d = 0; d < grid.total(); ++d) {
      const int g = as.gt_index[d];
      if (g == kNegative) continue;
      const GroundTruthBox& gt = gts[b].at(static_cast<size_t>(g));
      if (gt.class_id <= 0 || gt.class_id >= num_classes)
        throw ValueError(msg("detection_loss: gt class ", gt.class_id, " outside [1,",
                             num_classes, ")"));
      pos_rows.push_back(row_of(b, d));
      pos_targets.push_back(gt.class_id);
      const auto enc = encode_offsets(grid.boxes[d], gt.box);
      pos_offsets.insert(pos_offsets.end(), enc.begin(), enc.end());
      ++n_pos_per_image[b];
    }
  }

  const int n_matched = static_cast<int>(pos_rows.size());
  DetectionLossResult result;
  result.report.n_matched = n_matched;
  if (n_matched == 0) {
    result.loss = Tensor::scalar(0.0);
    return result;
  }

  // hard negative mining: rank unmatched boxes by their background
  // cross-entropy (values only), keep the top neg_pos_ratio * positives per
  // image
  const auto row_data = rows.data();
  auto background_loss = [&](int row) {
    const double* p = row_data.data() + static_cast<size_t>(row) * cols;
    double mx = p[0];
    for (int j = 1; j < num_classes; ++j) mx = std::max(mx, p[j]);
    double z = 0.0;
    for (int j = 0; j < num_classes; ++j) z += std::exp(p[j] - mx);
    return mx + std::log(z) - p[0];
  };

  std::vector<int> neg_rows;
  for (int b = 0; b < batch; ++b) {
    if (n_pos_per_image[b] == 0) continue;
    std::vector<std::pair<double, int>> cand;  // (loss, default index)
    for (int d = 0; d < grid.total(); ++d) {
      if (assignments[b].gt_index[d] != kNegative) continue;
      cand.emplace_back(background_loss(row_of(b, d)), d);
    }
    const int want = std::min<int>(static_cast<int>(neg_pos_ratio * n_pos_per_image[b]),
                                   static_cast<int>(cand.size()));
    std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (int i = 0; i < want; ++i) neg_rows.push_back(row_of(b, cand[i].second));
  }

  Tensor logits = slice_cols(rows, 0, num_classes);
  Tensor offsets = slice_cols(rows, num_classes, 4);

  Tensor conf = softmax_cross_entropy(gather_rows(logits, pos_rows), pos_targets,
                                      Reduction::Sum);
  if (!neg_rows.empty()) {
    std::vector<int> bg(neg_rows.size(), 0);
    conf = add(conf, softmax_cross_entropy(gather_rows(logits, neg_rows), bg, Reduction::Sum));
  }

  Tensor loc_target = Tensor::from_vector({n_matched, 4}, std::move(pos_offsets));
  Tensor loc = smooth_l1(gather_rows(offsets, pos_rows), loc_target);

  Tensor total = scale(add(conf, scale(loc, alpha)), 1.0 / n_matched);

  result.loss = total;
  result.report.total = total.item();
  result.report.conf = conf.item();
  result.report.loc = loc.item();
  result.report.n_negatives_used = static_cast<int>(neg_rows.size());
  return result;
}

}  // namespace mdfn
