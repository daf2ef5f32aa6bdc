#pragma once

#include <array>
#include <vector>

#include "mdfn/ops.hpp"

namespace mdfn {

// Axis-aligned box in normalized image coordinates, center-size form.
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  static Box from_corners(double x1, double y1, double x2, double y2) {
    return {0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
  }

  Box clipped_to_unit() const;
};

struct GroundTruthBox {
  Box box;
  int class_id = 0;  // 1-based; 0 is background
};

// Jaccard overlap; throws on zero-area boxes.
double iou(const Box& a, const Box& b);

struct DefaultBoxGrid {
  std::vector<Box> boxes;                 // tap-major, cell row-major, then ratio slot
  std::vector<int> boxes_per_tap;        // k * m * n per tap
  std::vector<std::array<int, 2>> taps;  // (m, n) per tap
  int boxes_per_cell = 0;

  int total() const { return static_cast<int>(boxes.size()); }
};

// One box per aspect ratio at scale s_k plus an extra square box at
// sqrt(s_k * s_{k+1}); scales interpolate linearly from s_min (shallowest
// tap) to s_max (deepest). The virtual scale past the last tap is 1.0.
DefaultBoxGrid generate_default_boxes(const std::vector<std::array<int, 2>>& tap_shapes,
                                      double s_min, double s_max,
                                      const std::vector<double>& ratios);

constexpr int kNegative = -1;

enum class MatchSource { None, Forced, Threshold };

struct MatchAssignment {
  std::vector<int> gt_index;         // per default box; kNegative when unmatched
  std::vector<double> match_iou;     // IoU of the match, 0 when unmatched
  std::vector<MatchSource> source;
  int n_matched = 0;
};

// Two-phase matching: every ground truth is force-matched to its best
// still-unclaimed default box, then every remaining default box with
// IoU > threshold joins its best ground truth. Ties break toward the lowest
// index.
MatchAssignment match(const DefaultBoxGrid& defaults, const std::vector<GroundTruthBox>& gts,
                      double threshold = 0.5);

// center-size log encoding: (dcx/w_d, dcy/h_d, ln(w_g/w_d), ln(h_g/h_d))
std::array<double, 4> encode_offsets(const Box& default_box, const Box& gt_box);
Box decode_offsets(const Box& default_box, const std::array<double, 4>& offsets);

// One 3x3 head conv per tap producing k*(classes+4) channels per location.
struct PredictionHead {
  ConvParams conv;
  static PredictionHead create(int in_channels, int boxes_per_cell, int num_classes, Rng& rng);
};

// per-tap (B, k*(c+4), m, n) tensors
std::vector<Tensor> predict(const std::vector<Tensor>& taps,
                            const std::vector<PredictionHead>& heads, int boxes_per_cell,
                            int num_classes);

}  // namespace mdfn
