#include "lumenseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "gemm.hpp"
#include "lumenseg/error.hpp"
#include "lumenseg/random.hpp"

namespace lumenseg::ops {

namespace {

thread_local std::uint64_t* branch_digest = nullptr;

void fold_branch(std::uint64_t v) {
  if (branch_digest) *branch_digest = Rng::mix(*branch_digest ^ Rng::mix(v));
}

template <typename T>
using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;

template <typename T>
using BackwardFn = std::function<void(detail::TensorImpl<T>&)>;

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<ImplPtr<T>> parents, BackwardFn<T> backward) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool needs_grad = false;
  for (const auto& p : parents) needs_grad = needs_grad || p->requires_grad;
  if (needs_grad) {
    auto& impl = *out.impl();
    impl.requires_grad = true;
    impl.parents = std::move(parents);
    impl.backward = std::move(backward);
  }
  return out;
}

void expect(bool condition, const std::string& message) {
  if (!condition) throw DimensionError(message);
}

// Shared geometry for 2D and temporal convolutions: the input is viewed as
// [N, R, H, W, C] and every output pixel gathers an R x kh x kw x C patch.
struct ConvGeometry {
  std::size_t n, r, h, w, c;
  std::size_t kh, kw, c_out;
  std::size_t stride, pad;
  std::size_t h_out, w_out;

  std::size_t rows() const { return n * h_out * w_out; }
  std::size_t patch() const { return r * kh * kw * c; }
  bool is_pointwise() const { return r == 1 && kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t patch = g.patch();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t oy = 0; oy < g.h_out; ++oy) {
      for (std::size_t ox = 0; ox < g.w_out; ++ox) {
        T* row = cols + ((n * g.h_out + oy) * g.w_out + ox) * patch;
        for (std::size_t r = 0; r < g.r; ++r) {
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
              T* dst = row + ((r * g.kh + ky) * g.kw + kx) * g.c;
              if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) ||
                  ix >= static_cast<std::ptrdiff_t>(g.w)) {
                std::fill(dst, dst + g.c, T(0));
              } else {
                const T* src = x + (((n * g.r + r) * g.h + static_cast<std::size_t>(iy)) * g.w +
                                    static_cast<std::size_t>(ix)) *
                                       g.c;
                std::copy(src, src + g.c, dst);
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t patch = g.patch();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t oy = 0; oy < g.h_out; ++oy) {
      for (std::size_t ox = 0; ox < g.w_out; ++ox) {
        const T* row = cols + ((n * g.h_out + oy) * g.w_out + ox) * patch;
        for (std::size_t r = 0; r < g.r; ++r) {
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
              const T* src = row + ((r * g.kh + ky) * g.kw + kx) * g.c;
              T* dst = dx + (((n * g.r + r) * g.h + static_cast<std::size_t>(iy)) * g.w +
                             static_cast<std::size_t>(ix)) *
                                g.c;
              for (std::size_t c = 0; c < g.c; ++c) dst[c] += src[c];
            }
          }
        }
      }
    }
  }
}

// Y[rows, c_out] = cols[rows, patch] * K[patch, c_out]
template <typename T>
Tensor<T> convolve(const Tensor<T>& input, const Tensor<T>& kernels, const ConvGeometry& g, Shape out_shape) {
  const std::size_t rows = g.rows();
  const std::size_t patch = g.patch();

  std::shared_ptr<std::vector<T>> cols;
  const T* cols_ptr = input.data().data();
  if (!g.is_pointwise()) {
    cols = std::make_shared<std::vector<T>>(rows * patch);
    im2col(input.data().data(), g, cols->data());
    cols_ptr = cols->data();
  }

  std::vector<T> out(rows * g.c_out);
  detail::gemm<T>(false, false, rows, g.c_out, patch, T(1), cols_ptr, kernels.data().data(), T(0), out.data());

  auto backward = [g, cols](detail::TensorImpl<T>& self) {
    auto& x = *self.parents[0];
    auto& k = *self.parents[1];
    const std::size_t rows = g.rows();
    const std::size_t patch = g.patch();
    const T* cols_ptr = cols ? cols->data() : x.data.data();
    if (k.requires_grad) {
      detail::gemm<T>(true, false, patch, g.c_out, rows, T(1), cols_ptr, self.grad.data(), T(1),
                      k.ensure_grad().data());
    }
    if (x.requires_grad) {
      if (g.is_pointwise()) {
        detail::gemm<T>(false, true, rows, patch, g.c_out, T(1), self.grad.data(), k.data.data(), T(1),
                        x.ensure_grad().data());
      } else {
        std::vector<T> dcols(rows * patch);
        detail::gemm<T>(false, true, rows, patch, g.c_out, T(1), self.grad.data(), k.data.data(), T(0),
                        dcols.data());
        col2im(dcols.data(), g, x.ensure_grad().data());
      }
    }
  };
  return make_result<T>(std::move(out_shape), std::move(out), {input.impl(), kernels.impl()}, backward);
}

// Spatial axes are the two preceding the channel axis.
struct SpatialView {
  std::size_t outer, h, w, c;
};

template <typename T>
SpatialView spatial_view(const Tensor<T>& t, const char* op) {
  expect(t.rank() >= 3, std::string(op) + ": expected rank >= 3, got shape " + to_string(t.shape()));
  const auto& s = t.shape();
  const std::size_t r = s.size();
  std::size_t outer = 1;
  for (std::size_t i = 0; i + 3 < r; ++i) outer *= s[i];
  return {outer, s[r - 3], s[r - 2], s[r - 1]};
}

template <typename T>
void expect_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  expect(a.shape() == b.shape(),
         std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

template <typename T>
void expect_channel_vector(const Tensor<T>& v, std::size_t channels, const char* op, const char* name) {
  expect(v.rank() == 1 && v.dim(0) == channels, std::string(op) + ": " + name + " must have shape (" +
                                                     std::to_string(channels) + "), got " + to_string(v.shape()));
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride, std::size_t padding) {
  if (stride < 1) throw ParameterError("conv2d: stride must be >= 1");
  const bool batched = input.rank() == 4;
  expect(input.rank() == 3 || batched, "conv2d: input must be [N,H,W,C] or [H,W,C], got " + to_string(input.shape()));
  expect(kernels.rank() == 4, "conv2d: kernels must be [kh,kw,c_in,c_out], got " + to_string(kernels.shape()));
  const auto& s = input.shape();
  const std::size_t off = batched ? 1 : 0;
  ConvGeometry g{};
  g.n = batched ? s[0] : 1;
  g.r = 1;
  g.h = s[off];
  g.w = s[off + 1];
  g.c = s[off + 2];
  g.kh = kernels.dim(0);
  g.kw = kernels.dim(1);
  g.c_out = kernels.dim(3);
  g.stride = stride;
  g.pad = padding;
  expect(kernels.dim(2) == g.c, "conv2d: input channel axis (" + std::to_string(g.c) +
                                    ") does not match kernel axis 2 (" + std::to_string(kernels.dim(2)) + ")");
  expect(g.kh <= g.h + 2 * padding && g.kw <= g.w + 2 * padding,
         "conv2d: kernel " + to_string(kernels.shape()) + " larger than padded input " + to_string(input.shape()));
  g.h_out = (g.h + 2 * padding - g.kh) / stride + 1;
  g.w_out = (g.w + 2 * padding - g.kw) / stride + 1;
  Shape out = batched ? Shape{g.n, g.h_out, g.w_out, g.c_out} : Shape{g.h_out, g.w_out, g.c_out};
  return convolve(input, kernels, g, std::move(out));
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernels) {
  const bool batched = input.rank() == 5;
  expect(input.rank() == 4 || batched,
         "conv3d: input must be [N,R,H,W,C] or [R,H,W,C], got " + to_string(input.shape()));
  expect(kernels.rank() == 5, "conv3d: kernels must be [r,kh,kw,c_in,n_k], got " + to_string(kernels.shape()));
  const auto& s = input.shape();
  const std::size_t off = batched ? 1 : 0;
  ConvGeometry g{};
  g.n = batched ? s[0] : 1;
  g.r = s[off];
  g.h = s[off + 1];
  g.w = s[off + 2];
  g.c = s[off + 3];
  g.kh = kernels.dim(1);
  g.kw = kernels.dim(2);
  g.c_out = kernels.dim(4);
  g.stride = 1;
  g.pad = 0;
  expect(g.r >= 1, "conv3d: temporal extent must be >= 1");
  expect(kernels.dim(0) == g.r, "conv3d: input temporal axis (" + std::to_string(g.r) +
                                    ") does not match kernel temporal axis (" + std::to_string(kernels.dim(0)) + ")");
  expect(kernels.dim(3) == g.c, "conv3d: input channel axis (" + std::to_string(g.c) +
                                    ") does not match kernel axis 3 (" + std::to_string(kernels.dim(3)) + ")");
  expect(g.h >= g.kh && g.w >= g.kw,
         "conv3d: spatial axes " + to_string(input.shape()) + " smaller than kernel " + to_string(kernels.shape()));
  g.h_out = g.h - g.kh + 1;
  g.w_out = g.w - g.kw + 1;
  Shape out = batched ? Shape{g.n, 1, g.h_out, g.w_out, g.c_out} : Shape{1, g.h_out, g.w_out, g.c_out};
  return convolve(input, kernels, g, std::move(out));
}

template <typename T>
Tensor<T> zero_pad_spatial(const Tensor<T>& input, std::size_t pad) {
  const auto v = spatial_view(input, "zero_pad_spatial");
  const std::size_t ho = v.h + 2 * pad, wo = v.w + 2 * pad;
  Shape out_shape = input.shape();
  out_shape[out_shape.size() - 3] = ho;
  out_shape[out_shape.size() - 2] = wo;
  std::vector<T> out(v.outer * ho * wo * v.c, T(0));
  const T* x = input.data().data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t y = 0; y < v.h; ++y) {
      const T* src = x + ((o * v.h + y) * v.w) * v.c;
      T* dst = out.data() + ((o * ho + y + pad) * wo + pad) * v.c;
      std::copy(src, src + v.w * v.c, dst);
    }
  }
  auto backward = [v, pad](detail::TensorImpl<T>& self) {
    auto& x = *self.parents[0];
    auto& dx = x.ensure_grad();
    const std::size_t ho = v.h + 2 * pad, wo = v.w + 2 * pad;
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t y = 0; y < v.h; ++y) {
        const T* src = self.grad.data() + ((o * ho + y + pad) * wo + pad) * v.c;
        T* dst = dx.data() + ((o * v.h + y) * v.w) * v.c;
        for (std::size_t i = 0; i < v.w * v.c; ++i) dst[i] += src[i];
      }
    }
  };
  return make_result<T>(std::move(out_shape), std::move(out), {input.impl()}, backward);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape shape) {
  expect(numel(shape) == input.size(),
         "reshape: cannot view " + to_string(input.shape()) + " as " + to_string(shape));
  std::vector<T> out(input.data().begin(), input.data().end());
  auto backward = [](detail::TensorImpl<T>& self) {
    auto& dx = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
  };
  return make_result<T>(std::move(shape), std::move(out), {input.impl()}, backward);
}

template <typename T>
Tensor<T> bias_add(const Tensor<T>& input, const Tensor<T>& bias) {
  expect(input.rank() >= 1, "bias_add: scalar input");
  const std::size_t c = input.shape().back();
  expect_channel_vector(bias, c, "bias_add", "bias");
  std::vector<T> out(input.data().begin(), input.data().end());
  const T* b = bias.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % c];
  auto backward = [c](detail::TensorImpl<T>& self) {
    auto& x = *self.parents[0];
    auto& b = *self.parents[1];
    if (x.requires_grad) {
      auto& dx = x.ensure_grad();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
    }
    if (b.requires_grad) {
      auto& db = b.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) db[i % c] += self.grad[i];
    }
  };
  return make_result<T>(input.shape(), std::move(out), {input.impl(), bias.impl()}, backward);
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                    BatchStats<T>* stats) {
  if (!(eps > T(0))) throw ParameterError("batchnorm: eps must be > 0");
  expect(input.rank() >= 1, "batchnorm: scalar input");
  const std::size_t c = input.shape().back();
  expect_channel_vector(gamma, c, "batchnorm", "gamma");
  expect_channel_vector(beta, c, "batchnorm", "beta");
  const std::size_t m = input.size() / c;
  expect(m >= 1, "batchnorm: empty input");

  const T* x = input.data().data();
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += x[i * c + ch];
  for (auto& v : mean) v /= static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double d = x[i * c + ch] - mean[ch];
      var[ch] += d * d;
    }
  for (auto& v : var) v /= static_cast<double>(m);

  auto inv_std = std::make_shared<std::vector<T>>(c);
  for (std::size_t ch = 0; ch < c; ++ch) (*inv_std)[ch] = static_cast<T>(1.0 / std::sqrt(var[ch] + eps));
  auto xhat = std::make_shared<std::vector<T>>(input.size());
  std::vector<T> out(input.size());
  const T* gm = gamma.data().data();
  const T* bt = beta.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t idx = i * c + ch;
      const T xh = static_cast<T>((x[idx] - mean[ch]) * (*inv_std)[ch]);
      (*xhat)[idx] = xh;
      out[idx] = gm[ch] * xh + bt[ch];
    }
  if (stats) {
    stats->mean.assign(mean.begin(), mean.end());
    stats->variance.assign(var.begin(), var.end());
  }

  auto backward = [c, m, xhat, inv_std](detail::TensorImpl<T>& self) {
    auto& x = *self.parents[0];
    auto& gamma = *self.parents[1];
    auto& beta = *self.parents[2];
    const T* dy = self.grad.data();
    std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t idx = i * c + ch;
        sum_dy[ch] += dy[idx];
        sum_dy_xhat[ch] += dy[idx] * (*xhat)[idx];
      }
    if (gamma.requires_grad) {
      auto& dg = gamma.ensure_grad();
      for (std::size_t ch = 0; ch < c; ++ch) dg[ch] += static_cast<T>(sum_dy_xhat[ch]);
    }
    if (beta.requires_grad) {
      auto& db = beta.ensure_grad();
      for (std::size_t ch = 0; ch < c; ++ch) db[ch] += static_cast<T>(sum_dy[ch]);
    }
    if (x.requires_grad) {
      auto& dx = x.ensure_grad();
      const double inv_m = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t idx = i * c + ch;
          const double g = gamma.data[ch] * (*inv_std)[ch];
          dx[idx] += static_cast<T>(g * (dy[idx] - inv_m * sum_dy[ch] - (*xhat)[idx] * inv_m * sum_dy_xhat[ch]));
        }
    }
  };
  return make_result<T>(input.shape(), std::move(out), {input.impl(), gamma.impl(), beta.impl()}, backward);
}

template <typename T>
Tensor<T> batchnorm_inference(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                              const Tensor<T>& running_mean, const Tensor<T>& running_var, T eps) {
  if (!(eps > T(0))) throw ParameterError("batchnorm: eps must be > 0");
  expect(input.rank() >= 1, "batchnorm: scalar input");
  const std::size_t c = input.shape().back();
  expect_channel_vector(gamma, c, "batchnorm", "gamma");
  expect_channel_vector(beta, c, "batchnorm", "beta");
  expect_channel_vector(running_mean, c, "batchnorm", "running_mean");
  expect_channel_vector(running_var, c, "batchnorm", "running_var");

  auto scale = std::make_shared<std::vector<T>>(c);
  auto xhat = std::make_shared<std::vector<T>>(input.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    (*scale)[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[ch]) + eps));
  std::vector<T> out(input.size());
  const T* x = input.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t ch = i % c;
    (*xhat)[i] = (x[i] - running_mean[ch]) * (*scale)[ch];
    out[i] = gamma[ch] * (*xhat)[i] + beta[ch];
  }
  auto backward = [c, scale, xhat](detail::TensorImpl<T>& self) {
    auto& x = *self.parents[0];
    auto& gamma = *self.parents[1];
    auto& beta = *self.parents[2];
    const T* dy = self.grad.data();
    if (x.requires_grad) {
      auto& dx = x.ensure_grad();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * gamma.data[i % c] * (*scale)[i % c];
    }
    if (gamma.requires_grad) {
      auto& dg = gamma.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) dg[i % c] += dy[i] * (*xhat)[i];
    }
    if (beta.requires_grad) {
      auto& db = beta.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) db[i % c] += dy[i];
    }
  };
  return make_result<T>(input.shape(), std::move(out), {input.impl(), gamma.impl(), beta.impl()}, backward);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  std::vector<T> out(input.size());
  const T* x = input.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] < T(0) ? T(0) : x[i];  // NaN passes through
  if (branch_digest) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      word = (word << 1) | (x[i] > T(0) ? 1U : 0U);
      if (i % 64 == 63 || i + 1 == out.size()) {
        fold_branch(word);
        word = 0;
      }
    }
  }
  auto backward = [](detail::TensorImpl<T>& self) {
    auto& x = *self.parents[0];
    auto& dx = x.ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (x.data[i] > T(0)) dx[i] += self.grad[i];
  };
  return make_result<T>(input.shape(), std::move(out), {input.impl()}, backward);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  std::vector<T> out(input.size());
  const T* x = input.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (x[i] >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-x[i]));
    } else {
      const T e = std::exp(x[i]);
      out[i] = e / (T(1) + e);
    }
  }
  auto backward = [](detail::TensorImpl<T>& self) {
    auto& dx = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T y = self.data[i];
      dx[i] += self.grad[i] * y * (T(1) - y);
    }
  };
  return make_result<T>(input.shape(), std::move(out), {input.impl()}, backward);
}

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& input) {
  const auto v = spatial_view(input, "maxpool2");
  const std::size_t ho = v.h / 2, wo = v.w / 2;
  expect(ho >= 1 && wo >= 1, "maxpool2: spatial extent below 2 in " + to_string(input.shape()));
  Shape out_shape = input.shape();
  out_shape[out_shape.size() - 3] = ho;
  out_shape[out_shape.size() - 2] = wo;
  std::vector<T> out(v.outer * ho * wo * v.c);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const T* x = input.data().data();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xo = 0; xo < wo; ++xo)
        for (std::size_t c = 0; c < v.c; ++c) {
          std::size_t best = ((o * v.h + 2 * y) * v.w + 2 * xo) * v.c + c;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = ((o * v.h + 2 * y + dy) * v.w + 2 * xo + dx) * v.c + c;
              if (x[idx] > x[best]) best = idx;
            }
          const std::size_t oidx = ((o * ho + y) * wo + xo) * v.c + c;
          out[oidx] = x[best];
          (*argmax)[oidx] = best;
        }
  if (branch_digest)
    for (std::size_t b : *argmax) fold_branch(b);
  auto backward = [argmax](detail::TensorImpl<T>& self) {
    auto& dx = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) dx[(*argmax)[i]] += self.grad[i];
  };
  return make_result<T>(std::move(out_shape), std::move(out), {input.impl()}, backward);
}

template <typename T>
Tensor<T> upsample2(const Tensor<T>& input) {
  const auto v = spatial_view(input, "upsample2");
  const std::size_t ho = v.h * 2, wo = v.w * 2;
  Shape out_shape = input.shape();
  out_shape[out_shape.size() - 3] = ho;
  out_shape[out_shape.size() - 2] = wo;
  std::vector<T> out(v.outer * ho * wo * v.c);
  const T* x = input.data().data();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xo = 0; xo < wo; ++xo) {
        const T* src = x + ((o * v.h + y / 2) * v.w + xo / 2) * v.c;
        std::copy(src, src + v.c, out.data() + ((o * ho + y) * wo + xo) * v.c);
      }
  auto backward = [v](detail::TensorImpl<T>& self) {
    auto& dx = self.parents[0]->ensure_grad();
    const std::size_t ho = v.h * 2, wo = v.w * 2;
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xo = 0; xo < wo; ++xo) {
          const T* src = self.grad.data() + ((o * ho + y) * wo + xo) * v.c;
          T* dst = dx.data() + ((o * v.h + y / 2) * v.w + xo / 2) * v.c;
          for (std::size_t c = 0; c < v.c; ++c) dst[c] += src[c];
        }
  };
  return make_result<T>(std::move(out_shape), std::move(out), {input.impl()}, backward);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  expect_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto backward = [](detail::TensorImpl<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& d = p->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  };
  return make_result<T>(a.shape(), std::move(out), {a.impl(), b.impl()}, backward);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  expect_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto backward = [](detail::TensorImpl<T>& self) {
    auto& a = *self.parents[0];
    auto& b = *self.parents[1];
    if (a.requires_grad) {
      auto& d = a.ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * b.data[i];
    }
    if (b.requires_grad) {
      auto& d = b.ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * a.data[i];
    }
  };
  return make_result<T>(a.shape(), std::move(out), {a.impl(), b.impl()}, backward);
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  expect(a.rank() >= 1 && a.rank() == b.rank(), "concat_channels: rank mismatch " + to_string(a.shape()) + " vs " +
                                                    to_string(b.shape()));
  for (std::size_t i = 0; i + 1 < a.rank(); ++i) {
    expect(a.dim(i) == b.dim(i), "concat_channels: axis " + std::to_string(i) + " differs (" +
                                     std::to_string(a.dim(i)) + " vs " + std::to_string(b.dim(i)) + ")");
  }
  const std::size_t ca = a.shape().back(), cb = b.shape().back(), c = ca + cb;
  const std::size_t m = a.size() / ca;
  Shape out_shape = a.shape();
  out_shape.back() = c;
  std::vector<T> out(m * c);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.data().data() + i * ca, ca, out.data() + i * c);
    std::copy_n(b.data().data() + i * cb, cb, out.data() + i * c + ca);
  }
  auto backward = [m, ca, cb](detail::TensorImpl<T>& self) {
    const std::size_t c = ca + cb;
    auto& a = *self.parents[0];
    auto& b = *self.parents[1];
    if (a.requires_grad) {
      auto& d = a.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < ca; ++k) d[i * ca + k] += self.grad[i * c + k];
    }
    if (b.requires_grad) {
      auto& d = b.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < cb; ++k) d[i * cb + k] += self.grad[i * c + ca + k];
    }
  };
  return make_result<T>(std::move(out_shape), std::move(out), {a.impl(), b.impl()}, backward);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input) {
  double total = 0.0;
  for (T v : input.data()) total += v;
  auto backward = [](detail::TensorImpl<T>& self) {
    auto& dx = self.parents[0]->ensure_grad();
    for (auto& d : dx) d += self.grad[0];
  };
  return make_result<T>(Shape{1}, {static_cast<T>(total)}, {input.impl()}, backward);
}

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  expect_same_shape(pred, target, "dice_loss");
  for (T g : target.data()) {
    if (g != T(0) && g != T(1)) throw ParameterError("dice_loss: target must be binary (0/1)");
  }
  const std::size_t samples = pred.rank() == 4 ? pred.dim(0) : 1;
  const std::size_t per = pred.size() / std::max<std::size_t>(samples, 1);
  expect(samples >= 1 && per >= 1, "dice_loss: empty input " + to_string(pred.shape()));

  struct Sums {
    double inter, sp, sg;
  };
  auto sums = std::make_shared<std::vector<Sums>>(samples);
  double loss = 0.0;
  const T* p = pred.data().data();
  const T* g = target.data().data();
  for (std::size_t s = 0; s < samples; ++s) {
    Sums acc{0.0, 0.0, 0.0};
    for (std::size_t i = s * per; i < (s + 1) * per; ++i) {
      acc.inter += static_cast<double>(p[i]) * g[i];
      acc.sp += p[i];
      acc.sg += g[i];
    }
    (*sums)[s] = acc;
    fold_branch(acc.sg > 0.0 ? 2U : acc.sp < 1.0 ? 1U : 0U);
    if (acc.sg > 0.0) {
      loss += 1.0 - 2.0 * acc.inter / (acc.sp + acc.sg);
    } else {
      loss += std::min(acc.sp, 1.0);
    }
  }
  loss /= static_cast<double>(samples);

  auto backward = [samples, per, sums](detail::TensorImpl<T>& self) {
    auto& pred = *self.parents[0];
    if (!pred.requires_grad) return;
    const auto& target = *self.parents[1];
    auto& dp = pred.ensure_grad();
    const double upstream = self.grad[0] / static_cast<double>(samples);
    for (std::size_t s = 0; s < samples; ++s) {
      const auto& acc = (*sums)[s];
      if (acc.sg > 0.0) {
        const double denom = acc.sp + acc.sg;
        const double inv2 = 1.0 / (denom * denom);
        for (std::size_t i = s * per; i < (s + 1) * per; ++i) {
          dp[i] += static_cast<T>(upstream * -2.0 * (target.data[i] * denom - acc.inter) * inv2);
        }
      } else if (acc.sp < 1.0) {
        for (std::size_t i = s * per; i < (s + 1) * per; ++i) dp[i] += static_cast<T>(upstream);
      }
    }
  };
  return make_result<T>(Shape{1}, {static_cast<T>(loss)}, {pred.impl(), target.impl()}, backward);
}

BranchTrace::BranchTrace() : previous_(branch_digest) { branch_digest = &digest_; }
BranchTrace::~BranchTrace() { branch_digest = previous_; }

#define LUMENSEG_INSTANTIATE_OPS(T)                                                                               \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);                        \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> zero_pad_spatial(const Tensor<T>&, std::size_t);                                             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                            \
  template Tensor<T> bias_add(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> batchnorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T, BatchStats<T>*);          \
  template Tensor<T> batchnorm_inference(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                         const Tensor<T>&, T);                                                    \
  template Tensor<T> relu(const Tensor<T>&);                                                                      \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                                   \
  template Tensor<T> maxpool2(const Tensor<T>&);                                                                  \
  template Tensor<T> upsample2(const Tensor<T>&);                                                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                     \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> sum(const Tensor<T>&);                                                                       \
  template Tensor<T> dice_loss(const Tensor<T>&, const Tensor<T>&);

LUMENSEG_INSTANTIATE_OPS(float)
LUMENSEG_INSTANTIATE_OPS(double)

#undef LUMENSEG_INSTANTIATE_OPS

}  // namespace lumenseg::ops
