#include "mdfn/boxes.hpp"

#include <algorithm>
#include <cmath>

namespace mdfn {

Box Box::clipped_to_unit() const {
  const double cx1 = std::max(0.0, std::min(1.0, x1()));
  const double cy1 = std::max(0.0, std::min(1.0, y1()));
  const double cx2 = std::max(0.0, std::min(1.0, x2()));
  const double cy2 = std::max(0.0, std::min(1.0, y2()));
  return Box::from_corners(cx1, cy1, cx2, cy2);
}

double iou(const Box& a, const Box& b) {
  if (a.w <= 0 || a.h <= 0 || b.w <= 0 || b.h <= 0)
    throw ValueError(msg("iou: degenerate box (w,h)=(", a.w, ",", a.h, ") vs (", b.w, ",",
                         b.h, ")"));
  const double ix1 = std::max(a.x1(), b.x1());
  const double iy1 = std::max(a.y1(), b.y1());
  const double ix2 = std::min(a.x2(), b.x2());
  const double iy2 = std::min(a.y2(), b.y2());
  const double iw = ix2 - ix1, ih = iy2 - iy1;
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

DefaultBoxGrid generate_default_boxes(const std::vector<std::array<int, 2>>& tap_shapes,
                                      double s_min, double s_max,
                                      const std::vector<double>& ratios) {
  if (ratios.empty()) throw ValueError("generate_default_boxes: empty aspect ratio list");
  if (tap_shapes.empty()) throw ValueError("generate_default_boxes: no tap shapes");

  const int levels = static_cast<int>(tap_shapes.size());
  std::vector<double> scales(levels + 1);
  for (int k = 0; k < levels; ++k)
    scales[k] = levels == 1 ? s_min : s_min + (s_max - s_min) * k / (levels - 1);
  scales[levels] = 1.0;  // virtual scale for the last extra box

  DefaultBoxGrid grid;
  grid.taps = tap_shapes;
  grid.boxes_per_cell = static_cast<int>(ratios.size()) + 1;
  for (int k = 0; k < levels; ++k) {
    const int m = tap_shapes[k][0], n = tap_shapes[k][1];
    if (m <= 0 || n <= 0)
      throw ValueError(msg("generate_default_boxes: bad tap shape (", m, ",", n, ")"));
    const double s = scales[k];
    const double s_extra = std::sqrt(scales[k] * scales[k + 1]);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        const double cx = (j + 0.5) / n;
        const double cy = (i + 0.5) / m;
        for (double r : ratios) {
          const double sr = std::sqrt(r);
          grid.boxes.push_back(Box{cx, cy, s * sr, s / sr}.clipped_to_unit());
        }
        grid.boxes.push_back(Box{cx, cy, s_extra, s_extra}.clipped_to_unit());
      }
    }
    grid.boxes_per_tap.push_back(grid.boxes_per_cell * m * n);
  }
  return grid;
}

MatchAssignment match(const DefaultBoxGrid& defaults, const std::vector<GroundTruthBox>& gts,
                      double threshold) {
  const int n_def = defaults.total();
  const int n_gt = static_cast<int>(gts.size());
  MatchAssignment out;
  out.gt_index.assign(n_def, kNegative);
  out.match_iou.assign(n_def, 0.0);
  out.source.assign(n_def, MatchSource::None);
  if (n_gt == 0) return out;

  std::vector<double> overlap(static_cast<size_t>(n_def) * n_gt);
  for (int d = 0; d < n_def; ++d)
    for (int g = 0; g < n_gt; ++g)
      overlap[static_cast<size_t>(d) * n_gt + g] = iou(defaults.boxes[d], gts[g].box);

  // phase (a): every gt claims its best still-free default box, so no gt is
  // left unsupervised even below the threshold
  for (int g = 0; g < n_gt; ++g) {
    int best_d = -1;
    double best = -1.0;
    for (int d = 0; d < n_def; ++d) {
      if (out.source[d] == MatchSource::Forced) continue;
      const double o = overlap[static_cast<size_t>(d) * n_gt + g];
      if (o > best) {
        best = o;
        best_d = d;
      }
    }
    if (best_d >= 0) {
      out.gt_index[best_d] = g;
      out.match_iou[best_d] = best;
      out.source[best_d] = MatchSource::Forced;
    }
  }

  // phase (b): remaining defaults with overlap above the threshold join
  // their best gt
  for (int d = 0; d < n_def; ++d) {
    if (out.source[d] == MatchSource::Forced) continue;
    int best_g = -1;
    double best = -1.0;
    for (int g = 0; g < n_gt; ++g) {
      const double o = overlap[static_cast<size_t>(d) * n_gt + g];
      if (o > best) {
        best = o;
        best_g = g;
      }
    }
    if (best_g >= 0 && best > threshold) {
      out.gt_index[d] = best_g;
      out.match_iou[d] = best;
      out.source[d] = MatchSource::Threshold;
    }
  }

  for (int d = 0; d < n_def; ++d)
    if (out.gt_index[d] != kNegative) ++out.n_matched;
  return out;
}

std::array<double, 4> encode_offsets(const Box& default_box, const Box& gt_box) {
  if (gt_box.w <= 0 || gt_box.h <= 0)
    throw ValueError(msg("encode_offsets: non-positive gt extent (", gt_box.w, ",", gt_box.h,
                         ")"));
  if (default_box.w <= 0 || default_box.h <= 0)
    throw ValueError(msg("encode_offsets: degenerate default box (", default_box.w, ",",
                         default_box.h, ")"));
  return {(gt_box.cx - default_box.cx) / default_box.w,
          (gt_box.cy - default_box.cy) / default_box.h,
          std::log(gt_box.w / default_box.w),
          std::log(gt_box.h / default_box.h)};
}

Box decode_offsets(const Box& default_box, const std::array<double, 4>& offsets) {
  Box out;
  out.cx = default_box.cx + offsets[0] * default_box.w;
  out.cy = default_box.cy + offsets[1] * default_box.h;
  out.w = default_box.w * std::exp(offsets[2]);
  out.h = default_box.h * std::exp(offsets[3]);
  return out;
}

PredictionHead PredictionHead::create(int in_channels, int boxes_per_cell, int num_classes,
                                      Rng& rng) {
  PredictionHead head;
  head.conv = ConvParams::create(boxes_per_cell * (num_classes + 4), in_channels, 3, 1, 1, rng);
  return head;
}

std::vector<Tensor> predict(const std::vector<Tensor>& taps,
                            const std::vector<PredictionHead>& heads, int boxes_per_cell,
                            int num_classes) {
  if (taps.size() != heads.size())
    throw ShapeError(msg("predict: ", taps.size(), " taps vs ", heads.size(), " heads"));
  const int want = boxes_per_cell * (num_classes + 4);
  std::vector<Tensor> preds;
  preds.reserve(taps.size());
  for (size_t i = 0; i < taps.size(); ++i) {
    if (heads[i].conv.out_channels() != want)
      throw ShapeError(msg("predict: head ", i, " produces ", heads[i].conv.out_channels(),
                           " channels, expected k(c+4) = ", want));
    preds.push_back(conv2d(taps[i], heads[i].conv));
  }
  return preds;
}

}  // namespace mdfn
