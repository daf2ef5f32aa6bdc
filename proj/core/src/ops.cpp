#include "mdfn/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace mdfn {

namespace {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

std::unordered_map<const TensorImpl*, long long> g_conv_counts;

Tensor make_node(std::vector<int> shape, std::vector<TensorImplPtr> parents,
                 std::function<void(TensorImpl&)> backward_fn) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(checked_numel(shape), 0.0);
  impl->shape = std::move(shape);
  impl->parents = std::move(parents);
  impl->backward_fn = std::move(backward_fn);
  return Tensor(std::move(impl));
}

void finite_check(const Tensor& t, const char* op_name) {
  if (!finite_check_enabled()) return;
  for (double v : t.data())
    if (!std::isfinite(v)) throw ValueError(msg(op_name, ": non-finite value in output"));
}

// gradient is only materialized for tensors that can consume it
bool needs_grad(const TensorImpl& t) {
  return t.requires_grad || t.backward_fn != nullptr || !t.parents.empty();
}

// col is (C*kh*kw) x (out_h*out_w), row-major
void im2col(const double* x, int c_dim, int h_dim, int w_dim, int kh, int kw, int stride,
            int pad, int out_h, int out_w, double* col) {
  const int plane = h_dim * w_dim;
  for (int c = 0; c < c_dim; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        double* row = col + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) *
                                static_cast<size_t>(out_h) * out_w;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride + ki - pad;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride + kj - pad;
            row[oh * out_w + ow] = (ih >= 0 && ih < h_dim && iw >= 0 && iw < w_dim)
                                       ? x[c * plane + ih * w_dim + iw]
                                       : 0.0;
          }
        }
      }
    }
  }
}

void col2im_accumulate(const double* col, int c_dim, int h_dim, int w_dim, int kh, int kw,
                       int stride, int pad, int out_h, int out_w, double* gx) {
  const int plane = h_dim * w_dim;
  for (int c = 0; c < c_dim; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const double* row = col + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) *
                                      static_cast<size_t>(out_h) * out_w;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride + ki - pad;
          if (ih < 0 || ih >= h_dim) continue;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride + kj - pad;
            if (iw < 0 || iw >= w_dim) continue;
            gx[c * plane + ih * w_dim + iw] += row[oh * out_w + ow];
          }
        }
      }
    }
  }
}

}  // namespace

int conv_out_extent(int extent, int k, int stride, int padding) {
  const int num = extent + 2 * padding - k;
  if (num < 0 || num % stride != 0)
    throw ShapeError(msg("conv output extent not a positive integer: (", extent, " + 2*",
                         padding, " - ", k, ") / ", stride, " + 1"));
  return num / stride + 1;
}

int pool_out_extent(int extent, int window, int stride) {
  if (window > extent)
    throw ShapeError(msg("pool window ", window, " larger than extent ", extent));
  return (extent - window) / stride + 1;
}

ConvParams ConvParams::create(int out_ch, int in_ch, int k, int stride, int padding, Rng& rng) {
  ConvParams p;
  p.weights = Tensor::he_uniform({out_ch, in_ch, k, k}, in_ch * k * k, rng);
  p.weights.set_requires_grad(true);
  p.bias = Tensor::zeros({out_ch});
  p.bias.set_requires_grad(true);
  p.stride = stride;
  p.padding = padding;
  p.validate();
  return p;
}

void ConvParams::validate() const {
  if (weights.ndim() != 4)
    throw ShapeError(msg("ConvParams: weights must be 4-D, got ", shape_str(weights.shape())));
  const int kh = kernel_h(), kw = kernel_w();
  if ((kh != 1 && kh != 3) || (kw != 1 && kw != 3) || kh != kw)
    throw ValueError(msg("ConvParams: kernel must be 1x1 or 3x3, got ", kh, "x", kw));
  if (bias.ndim() != 1 || bias.dim(0) != out_channels())
    throw ShapeError(msg("ConvParams: bias shape ", shape_str(bias.shape()),
                         " does not match out_channels ", out_channels()));
  if (stride <= 0) throw ValueError(msg("ConvParams: stride must be positive, got ", stride));
  if (padding < 0) throw ValueError(msg("ConvParams: padding must be non-negative, got ", padding));
}

long long ConvParams::param_count() const {
  const long long o = out_channels(), i = in_channels(), k = kernel_h();
  return o * i * k * k + o;
}

long long ConvParams::mult_adds(int in_h, int in_w) const {
  const long long oh = conv_out_extent(in_h, kernel_h(), stride, padding);
  const long long ow = conv_out_extent(in_w, kernel_w(), stride, padding);
  return oh * ow * out_channels() * in_channels() * kernel_h() * kernel_w();
}

Tensor conv2d(const Tensor& input, const ConvParams& params) {
  params.validate();
  if (input.ndim() != 4)
    throw ShapeError(msg("conv2d: input must be 4-D, got ", shape_str(input.shape())));
  const int batch = input.dim(0), in_c = input.dim(1), in_h = input.dim(2), in_w = input.dim(3);
  if (in_c != params.in_channels())
    throw ShapeError(msg("conv2d: input shape ", shape_str(input.shape()),
                         " does not match weight shape ", shape_str(params.weights.shape())));
  const int kh = params.kernel_h(), kw = params.kernel_w();
  const int stride = params.stride, pad = params.padding;
  const int out_h = conv_out_extent(in_h, kh, stride, pad);
  const int out_w = conv_out_extent(in_w, kw, stride, pad);
  const int out_c = params.out_channels();
  const int ck2 = in_c * kh * kw;
  const int opix = out_h * out_w;

  ++g_conv_counts[params.weights.ptr().get()];

  auto backward_fn = [=](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    TensorImpl& w = *self.parents[1];
    TensorImpl& b = *self.parents[2];
    ConstMapRM w_mat(w.data.data(), out_c, ck2);
    std::vector<double> col(static_cast<size_t>(ck2) * opix);
    std::vector<double> gcol;
    const bool want_gx = needs_grad(x);
    if (want_gx) gcol.resize(col.size());
    MapRM gw_mat(w.grad.data(), out_c, ck2);
    for (int n = 0; n < batch; ++n) {
      ConstMapRM g_out(self.grad.data() + static_cast<size_t>(n) * out_c * opix, out_c, opix);
      for (int o = 0; o < out_c; ++o) b.grad[o] += g_out.row(o).sum();
      im2col(x.data.data() + static_cast<size_t>(n) * in_c * in_h * in_w, in_c, in_h, in_w,
             kh, kw, stride, pad, out_h, out_w, col.data());
      ConstMapRM col_mat(col.data(), ck2, opix);
      gw_mat.noalias() += g_out * col_mat.transpose();
      if (want_gx) {
        MapRM gcol_mat(gcol.data(), ck2, opix);
        gcol_mat.noalias() = w_mat.transpose() * g_out;
        col2im_accumulate(gcol.data(), in_c, in_h, in_w, kh, kw, stride, pad, out_h, out_w,
                          x.grad.data() + static_cast<size_t>(n) * in_c * in_h * in_w);
      }
    }
  };

  Tensor out = make_node({batch, out_c, out_h, out_w},
                         {input.ptr(), params.weights.ptr(), params.bias.ptr()}, backward_fn);
  ConstMapRM w_mat(params.weights.data().data(), out_c, ck2);
  std::vector<double> col(static_cast<size_t>(ck2) * opix);
  for (int n = 0; n < batch; ++n) {
    im2col(input.data().data() + static_cast<size_t>(n) * in_c * in_h * in_w, in_c, in_h,
           in_w, kh, kw, stride, pad, out_h, out_w, col.data());
    ConstMapRM col_mat(col.data(), ck2, opix);
    MapRM out_mat(out.data().data() + static_cast<size_t>(n) * out_c * opix, out_c, opix);
    out_mat.noalias() = w_mat * col_mat;
    for (int o = 0; o < out_c; ++o) out_mat.row(o).array() += params.bias.data()[o];
  }
  finite_check(out, "conv2d");
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (input.ndim() != 2 || weights.ndim() != 2)
    throw ShapeError(msg("linear: need 2-D input and weights, got ", shape_str(input.shape()),
                         " and ", shape_str(weights.shape())));
  const int n = input.dim(0), in_f = input.dim(1);
  const int out_f = weights.dim(0);
  if (weights.dim(1) != in_f || bias.ndim() != 1 || bias.dim(0) != out_f)
    throw ShapeError(msg("linear: shapes ", shape_str(input.shape()), " x ",
                         shape_str(weights.shape()), " + ", shape_str(bias.shape())));

  auto backward_fn = [=](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    TensorImpl& w = *self.parents[1];
    TensorImpl& b = *self.parents[2];
    ConstMapRM g(self.grad.data(), n, out_f);
    ConstMapRM x_mat(x.data.data(), n, in_f);
    ConstMapRM w_mat(w.data.data(), out_f, in_f);
    if (needs_grad(x)) {
      MapRM gx(x.grad.data(), n, in_f);
      gx.noalias() += g * w_mat;
    }
    MapRM gw(w.grad.data(), out_f, in_f);
    gw.noalias() += g.transpose() * x_mat;
    for (int j = 0; j < out_f; ++j) b.grad[j] += g.col(j).sum();
  };

  Tensor out = make_node({n, out_f}, {input.ptr(), weights.ptr(), bias.ptr()}, backward_fn);
  ConstMapRM x_mat(input.data().data(), n, in_f);
  ConstMapRM w_mat(weights.data().data(), out_f, in_f);
  MapRM out_mat(out.data().data(), n, out_f);
  out_mat.noalias() = x_mat * w_mat.transpose();
  for (int j = 0; j < out_f; ++j) out_mat.col(j).array() += bias.data()[j];
  finite_check(out, "linear");
  return out;
}

Tensor relu(const Tensor& input) {
  auto backward_fn = [](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (x.data[i] > 0.0) x.grad[i] += self.grad[i];
  };
  Tensor out = make_node(input.shape(), {input.ptr()}, backward_fn);
  const auto src = input.data();
  auto dst = out.data();
  for (size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
  finite_check(out, "relu");
  return out;
}

Tensor max_pool2d(const Tensor& input, int window, int stride) {
  if (input.ndim() != 4)
    throw ShapeError(msg("max_pool2d: input must be 4-D, got ", shape_str(input.shape())));
  if (window <= 0 || stride <= 0)
    throw ValueError(msg("max_pool2d: window/stride must be positive, got ", window, "/", stride));
  const int batch = input.dim(0), c_dim = input.dim(1), h_dim = input.dim(2), w_dim = input.dim(3);
  if (window > h_dim || window > w_dim)
    throw ShapeError(msg("max_pool2d: window ", window, " larger than spatial extent ", h_dim,
                         "x", w_dim));
  const int out_h = (h_dim - window) / stride + 1;
  const int out_w = (w_dim - window) / stride + 1;

  auto argmax = std::make_shared<std::vector<size_t>>(
      static_cast<size_t>(batch) * c_dim * out_h * out_w);
  auto backward_fn = [argmax](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    for (size_t i = 0; i < self.grad.size(); ++i) x.grad[(*argmax)[i]] += self.grad[i];
  };

  Tensor out = make_node({batch, c_dim, out_h, out_w}, {input.ptr()}, backward_fn);
  const auto src = input.data();
  auto dst = out.data();
  size_t oi = 0;
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < c_dim; ++c) {
      for (int oh = 0; oh < out_h; ++oh) {
        for (int ow = 0; ow < out_w; ++ow, ++oi) {
          size_t best_idx = idx4(c_dim, h_dim, w_dim, n, c, oh * stride, ow * stride);
          double best = src[best_idx];
          for (int ki = 0; ki < window; ++ki) {
            for (int kj = 0; kj < window; ++kj) {
              const size_t idx =
                  idx4(c_dim, h_dim, w_dim, n, c, oh * stride + ki, ow * stride + kj);
              if (src[idx] > best) {  // strict: first occurrence wins on ties
                best = src[idx];
                best_idx = idx;
              }
            }
          }
          dst[oi] = best;
          (*argmax)[oi] = best_idx;
        }
      }
    }
  }
  finite_check(out, "max_pool2d");
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& inputs) {
  if (inputs.empty()) throw ValueError("concat_channels: no inputs");
  const int batch = inputs[0].dim(0), h_dim = inputs[0].dim(2), w_dim = inputs[0].dim(3);
  int total_c = 0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].ndim() != 4)
      throw ShapeError(msg("concat_channels: input ", i, " must be 4-D, got ",
                           shape_str(inputs[i].shape())));
    if (inputs[i].dim(0) != batch || inputs[i].dim(2) != h_dim || inputs[i].dim(3) != w_dim)
      throw ShapeError(msg("concat_channels: input ", i, " has shape ",
                           shape_str(inputs[i].shape()), ", incompatible with ",
                           shape_str(inputs[0].shape())));
    total_c += inputs[i].dim(1);
  }

  std::vector<TensorImplPtr> parents;
  std::vector<int> channels;
  for (const Tensor& t : inputs) {
    parents.push_back(t.ptr());
    channels.push_back(t.dim(1));
  }

  auto backward_fn = [=](TensorImpl& self) {
    const int plane = h_dim * w_dim;
    for (int n = 0; n < batch; ++n) {
      int c_off = 0;
      for (size_t i = 0; i < self.parents.size(); ++i) {
        TensorImpl& p = *self.parents[i];
        const size_t src_base = (static_cast<size_t>(n) * total_c + c_off) * plane;
        const size_t dst_base = static_cast<size_t>(n) * channels[i] * plane;
        const size_t len = static_cast<size_t>(channels[i]) * plane;
        for (size_t j = 0; j < len; ++j) p.grad[dst_base + j] += self.grad[src_base + j];
        c_off += channels[i];
      }
    }
  };

  Tensor out = make_node({batch, total_c, h_dim, w_dim}, std::move(parents), backward_fn);
  const int plane = h_dim * w_dim;
  auto dst = out.data();
  for (int n = 0; n < batch; ++n) {
    int c_off = 0;
    for (size_t i = 0; i < inputs.size(); ++i) {
      const auto src = inputs[i].data();
      const size_t dst_base = (static_cast<size_t>(n) * total_c + c_off) * plane;
      const size_t src_base = static_cast<size_t>(n) * channels[i] * plane;
      const size_t len = static_cast<size_t>(channels[i]) * plane;
      std::copy(src.begin() + src_base, src.begin() + src_base + len, dst.begin() + dst_base);
      c_off += channels[i];
    }
  }
  finite_check(out, "concat_channels");
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& inputs) {
  if (inputs.empty()) throw ValueError("concat_rows: no inputs");
  const int cols = inputs[0].dim(1);
  int total_rows = 0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].ndim() != 2 || inputs[i].dim(1) != cols)
      throw ShapeError(msg("concat_rows: input ", i, " has shape ",
                           shape_str(inputs[i].shape()), ", expected (*,", cols, ")"));
    total_rows += inputs[i].dim(0);
  }
  std::vector<TensorImplPtr> parents;
  for (const Tensor& t : inputs) parents.push_back(t.ptr());

  auto backward_fn = [cols](TensorImpl& self) {
    size_t off = 0;
    for (auto& pp : self.parents) {
      TensorImpl& p = *pp;
      for (size_t j = 0; j < p.data.size(); ++j) p.grad[j] += self.grad[off + j];
      off += p.data.size();
    }
  };

  Tensor out = make_node({total_rows, cols}, std::move(parents), backward_fn);
  auto dst = out.data();
  size_t off = 0;
  for (const Tensor& t : inputs) {
    const auto src = t.data();
    std::copy(src.begin(), src.end(), dst.begin() + off);
    off += src.size();
  }
  finite_check(out, "concat_rows");
  return out;
}

Tensor reshape(const Tensor& input, std::vector<int> new_shape) {
  if (checked_numel(new_shape) != input.numel())
    throw ShapeError(msg("reshape: ", shape_str(input.shape()), " -> ", shape_str(new_shape),
                         " changes element count"));
  auto backward_fn = [](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    for (size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += self.grad[i];
  };
  Tensor out = make_node(std::move(new_shape), {input.ptr()}, backward_fn);
  std::copy(input.data().begin(), input.data().end(), out.data().begin());
  return out;
}

Tensor permute_bhwc(const Tensor& input) {
  if (input.ndim() != 4)
    throw ShapeError(msg("permute_bhwc: input must be 4-D, got ", shape_str(input.shape())));
  const int batch = input.dim(0), c_dim = input.dim(1), h_dim = input.dim(2), w_dim = input.dim(3);

  auto backward_fn = [=](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    size_t di = 0;
    for (int n = 0; n < batch; ++n)
      for (int h = 0; h < h_dim; ++h)
        for (int w = 0; w < w_dim; ++w)
          for (int c = 0; c < c_dim; ++c, ++di)
            x.grad[idx4(c_dim, h_dim, w_dim, n, c, h, w)] += self.grad[di];
  };

  Tensor out = make_node({batch, h_dim, w_dim, c_dim}, {input.ptr()}, backward_fn);
  const auto src = input.data();
  auto dst = out.data();
  size_t di = 0;
  for (int n = 0; n < batch; ++n)
    for (int h = 0; h < h_dim; ++h)
      for (int w = 0; w < w_dim; ++w)
        for (int c = 0; c < c_dim; ++c, ++di)
          dst[di] = src[idx4(c_dim, h_dim, w_dim, n, c, h, w)];
  return out;
}

Tensor gather_rows(const Tensor& input, std::vector<int> rows) {
  if (input.ndim() != 2)
    throw ShapeError(msg("gather_rows: input must be 2-D, got ", shape_str(input.shape())));
  const int n = input.dim(0), cols = input.dim(1);
  for (int r : rows)
    if (r < 0 || r >= n) throw ValueError(msg("gather_rows: row ", r, " out of range [0,", n, ")"));
  const int m = static_cast<int>(rows.size());
  auto idx = std::make_shared<std::vector<int>>(std::move(rows));

  auto backward_fn = [idx, cols](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    for (size_t i = 0; i < idx->size(); ++i) {
      const size_t src = i * cols, dst = static_cast<size_t>((*idx)[i]) * cols;
      for (int j = 0; j < cols; ++j) x.grad[dst + j] += self.grad[src + j];
    }
  };

  Tensor out = make_node({m, cols}, {input.ptr()}, backward_fn);
  const auto src = input.data();
  auto dst = out.data();
  for (size_t i = 0; i < idx->size(); ++i)
    std::copy(src.begin() + static_cast<size_t>((*idx)[i]) * cols,
              src.begin() + (static_cast<size_t>((*idx)[i]) + 1) * cols,
              dst.begin() + i * cols);
  return out;
}

Tensor slice_cols(const Tensor& input, int start, int len) {
  if (input.ndim() != 2)
    throw ShapeError(msg("slice_cols: input must be 2-D, got ", shape_str(input.shape())));
  const int n = input.dim(0), cols = input.dim(1);
  if (start < 0 || len <= 0 || start + len > cols)
    throw ShapeError(msg("slice_cols: window [", start, ",", start + len, ") outside ", cols,
                         " columns"));
  auto backward_fn = [=](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < len; ++j)
        x.grad[static_cast<size_t>(i) * cols + start + j] +=
            self.grad[static_cast<size_t>(i) * len + j];
  };
  Tensor out = make_node({n, len}, {input.ptr()}, backward_fn);
  const auto src = input.data();
  auto dst = out.data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < len; ++j)
      dst[static_cast<size_t>(i) * len + j] = src[static_cast<size_t>(i) * cols + start + j];
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(msg("add: shape mismatch ", shape_str(a.shape()), " vs ",
                         shape_str(b.shape())));
  auto backward_fn = [](TensorImpl& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      self.parents[0]->grad[i] += self.grad[i];
      self.parents[1]->grad[i] += self.grad[i];
    }
  };
  Tensor out = make_node(a.shape(), {a.ptr(), b.ptr()}, backward_fn);
  const auto pa = a.data(), pb = b.data();
  auto dst = out.data();
  for (size_t i = 0; i < dst.size(); ++i) dst[i] = pa[i] + pb[i];
  finite_check(out, "add");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(msg("mul: shape mismatch ", shape_str(a.shape()), " vs ",
                         shape_str(b.shape())));
  auto backward_fn = [](TensorImpl& self) {
    TensorImpl& pa = *self.parents[0];
    TensorImpl& pb = *self.parents[1];
    for (size_t i = 0; i < self.grad.size(); ++i) {
      pa.grad[i] += self.grad[i] * pb.data[i];
      pb.grad[i] += self.grad[i] * pa.data[i];
    }
  };
  Tensor out = make_node(a.shape(), {a.ptr(), b.ptr()}, backward_fn);
  const auto pa = a.data(), pb = b.data();
  auto dst = out.data();
  for (size_t i = 0; i < dst.size(); ++i) dst[i] = pa[i] * pb[i];
  finite_check(out, "mul");
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  auto backward_fn = [factor](TensorImpl& self) {
    for (size_t i = 0; i < self.grad.size(); ++i)
      self.parents[0]->grad[i] += self.grad[i] * factor;
  };
  Tensor out = make_node(a.shape(), {a.ptr()}, backward_fn);
  const auto src = a.data();
  auto dst = out.data();
  for (size_t i = 0; i < dst.size(); ++i) dst[i] = src[i] * factor;
  finite_check(out, "scale");
  return out;
}

Tensor sum(const Tensor& a) {
  auto backward_fn = [](TensorImpl& self) {
    const double g = self.grad[0];
    for (double& v : self.parents[0]->grad) v += g;
  };
  Tensor out = make_node({1}, {a.ptr()}, backward_fn);
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  out.data()[0] = acc;
  finite_check(out, "sum");
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                             Reduction reduction) {
  if (logits.ndim() != 2)
    throw ShapeError(msg("softmax_cross_entropy: logits must be 2-D, got ",
                         shape_str(logits.shape())));
  const int n = logits.dim(0), classes = logits.dim(1);
  if (static_cast<int>(targets.size()) != n)
    throw ShapeError(msg("softmax_cross_entropy: ", targets.size(), " targets for ", n,
                         " rows"));
  for (int t : targets)
    if (t < 0 || t >= classes)
      throw ValueError(msg("softmax_cross_entropy: target ", t, " out of range [0,", classes,
                           ")"));
  auto tgt = std::make_shared<std::vector<int>>(targets);
  const double norm = reduction == Reduction::Mean ? 1.0 / n : 1.0;

  auto backward_fn = [tgt, n, classes, norm](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    const double g = self.grad[0] * norm;
    for (int i = 0; i < n; ++i) {
      const double* row = x.data.data() + static_cast<size_t>(i) * classes;
      double* grow = x.grad.data() + static_cast<size_t>(i) * classes;
      double m = row[0];
      for (int j = 1; j < classes; ++j) m = std::max(m, row[j]);
      double z = 0.0;
      for (int j = 0; j < classes; ++j) z += std::exp(row[j] - m);
      for (int j = 0; j < classes; ++j) {
        const double p = std::exp(row[j] - m) / z;
        grow[j] += g * (p - (j == (*tgt)[i] ? 1.0 : 0.0));
      }
    }
  };

  Tensor out = make_node({1}, {logits.ptr()}, backward_fn);
  const auto src = logits.data();
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* row = src.data() + static_cast<size_t>(i) * classes;
    double m = row[0];
    for (int j = 1; j < classes; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int j = 0; j < classes; ++j) z += std::exp(row[j] - m);
    loss += m + std::log(z) - row[(*tgt)[i]];
  }
  out.data()[0] = loss * norm;
  finite_check(out, "softmax_cross_entropy");
  return out;
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError(msg("smooth_l1: shape mismatch ", shape_str(pred.shape()), " vs ",
                         shape_str(target.shape())));
  auto backward_fn = [](TensorImpl& self) {
    TensorImpl& p = *self.parents[0];
    TensorImpl& t = *self.parents[1];
    const double g = self.grad[0];
    for (size_t i = 0; i < p.data.size(); ++i) {
      const double d = p.data[i] - t.data[i];
      const double dd = std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0);
      p.grad[i] += g * dd;
      t.grad[i] -= g * dd;
    }
  };
  Tensor out = make_node({1}, {pred.ptr(), target.ptr()}, backward_fn);
  const auto pp = pred.data(), tt = target.data();
  double loss = 0.0;
  for (size_t i = 0; i < pp.size(); ++i) {
    const double d = std::abs(pp[i] - tt[i]);
    loss += d < 1.0 ? 0.5 * d * d : d - 0.5;
  }
  out.data()[0] = loss;
  finite_check(out, "smooth_l1");
  return out;
}

std::vector<double> softmax_values(const Tensor& logits) {
  if (logits.ndim() != 2)
    throw ShapeError(msg("softmax_values: logits must be 2-D, got ",
                         shape_str(logits.shape())));
  const int n = logits.dim(0), classes = logits.dim(1);
  std::vector<double> out(logits.numel());
  const auto src = logits.data();
  for (int i = 0; i < n; ++i) {
    const double* row = src.data() + static_cast<size_t>(i) * classes;
    double* orow = out.data() + static_cast<size_t>(i) * classes;
    double m = row[0];
    for (int j = 1; j < classes; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int j = 0; j < classes; ++j) z += std::exp(row[j] - m);
    for (int j = 0; j < classes; ++j) orow[j] = std::exp(row[j] - m) / z;
  }
  return out;
}

void instr_reset() { g_conv_counts.clear(); }

long long conv_exec_count(const Tensor& weights) {
  auto it = g_conv_counts.find(weights.ptr().get());
  return it == g_conv_counts.end() ? 0 : it->second;
}

}  // namespace mdfn
