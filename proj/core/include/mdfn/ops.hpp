#pragma once

#include <vector>

#include "mdfn/tensor.hpp"

namespace mdfn {

// Convolution parameters. Kernels are restricted to 1x1 and 3x3; every
// larger receptive field in this codebase is built from cascaded 3x3 stages.
struct ConvParams {
  Tensor weights;  // (out_ch, in_ch, kh, kw)
  Tensor bias;     // (out_ch)
  int stride = 1;
  int padding = 0;

  static ConvParams create(int out_ch, int in_ch, int k, int stride, int padding, Rng& rng);

  int out_channels() const { return weights.dim(0); }
  int in_channels() const { return weights.dim(1); }
  int kernel_h() const { return weights.dim(2); }
  int kernel_w() const { return weights.dim(3); }

  // out_ch * in_ch * kh * kw + out_ch
  long long param_count() const;
  // multiply-accumulates for one image at the given input spatial size
  long long mult_adds(int in_h, int in_w) const;

  void validate() const;
};

// spatial size produced by a k-kernel conv; throws unless (extent+2p-k) is a
// non-negative multiple of the stride yielding a positive result
int conv_out_extent(int extent, int k, int stride, int padding);

// floor-division pooling size: (extent - window)/stride + 1
int pool_out_extent(int extent, int window, int stride);

// --- graph-building operations (eager forward, recorded backward) ---

Tensor conv2d(const Tensor& input, const ConvParams& params);
Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias);
Tensor relu(const Tensor& input);
Tensor max_pool2d(const Tensor& input, int window, int stride);
Tensor concat_channels(const std::vector<Tensor>& inputs);
Tensor concat_rows(const std::vector<Tensor>& inputs);
Tensor reshape(const Tensor& input, std::vector<int> new_shape);
// (B,C,H,W) -> (B,H,W,C)
Tensor permute_bhwc(const Tensor& input);
Tensor gather_rows(const Tensor& input, std::vector<int> rows);
Tensor slice_cols(const Tensor& input, int start, int len);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);

enum class Reduction { Mean, Sum };

// mean (or sum) negative log-softmax of the target class, stabilized by
// max-subtraction
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                             Reduction reduction = Reduction::Mean);

// sum over elements of 0.5 d^2 (|d|<1) else |d|-0.5; caller normalizes
Tensor smooth_l1(const Tensor& pred, const Tensor& target);

// row-major softmax over the last dim of an (N,C) tensor, values only
std::vector<double> softmax_values(const Tensor& logits);

// --- instrumentation ---
// Per-weight-tensor count of conv2d executions, used to verify that shared
// stages run exactly once per forward pass.
void instr_reset();
long long conv_exec_count(const Tensor& weights);

}  // namespace mdfn
