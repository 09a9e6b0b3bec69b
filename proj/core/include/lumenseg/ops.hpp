#pragma once

#include <cstddef>
#include <cstdint>

#include "lumenseg/tensor.hpp"

// Differentiable operations. Layout is channels-last throughout:
//   2D feature maps  [N, H, W, C]   (or unbatched [H, W, C])
//   temporal stacks  [N, R, H, W, C] (or unbatched [R, H, W, C])
// Convolutions are cross-correlations (no kernel flip).
namespace lumenseg::ops {

// kernels: [kh, kw, c_in, c_out]. Output spatial extent is
// floor((H + 2*padding - kh) / stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride = 1, std::size_t padding = 0);

// kernels: [r, kh, kw, c_in, n_k] with r equal to the input's temporal extent.
// The temporal axis collapses to 1 and the spatial extents shrink by kh-1 and
// kw-1 (valid convolution, no padding).
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernels);

// Zero border of `pad` cells on both spatial axes (the two axes preceding the
// channel axis). Interior values are unchanged.
template <typename T>
Tensor<T> zero_pad_spatial(const Tensor<T>& input, std::size_t pad);

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape shape);

// Adds bias[c] along the last axis.
template <typename T>
Tensor<T> bias_add(const Tensor<T>& input, const Tensor<T>& bias);

template <typename T>
struct BatchStats {
  std::vector<T> mean;
  std::vector<T> variance;  // biased (divides by the element count)
};

// Normalizes each channel with the statistics of this batch (every axis but
// the last is reduced). When `stats` is non-null the batch statistics are
// written to it so the caller can update running averages.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                    BatchStats<T>* stats = nullptr);

// Normalizes with fixed statistics; differentiable w.r.t. input, gamma and beta.
template <typename T>
Tensor<T> batchnorm_inference(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                              const Tensor<T>& running_mean, const Tensor<T>& running_var, T eps);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input);

// 2x2 max pooling with stride 2. Gradient goes to the window's maximum; ties
// resolve to the first element in row-major scan order. Odd trailing rows or
// columns are dropped.
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& input);

// Nearest-neighbour 2x upsampling.
template <typename T>
Tensor<T> upsample2(const Tensor<T>& input);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sum(const Tensor<T>& input);

// Soft Dice loss 1 - 2*sum(p*g) / (sum(p) + sum(g)).
//
// Rank-4 inputs [N, H, W, C] are treated as N samples and the per-sample
// losses are averaged; any other rank is one sample. For an empty target the
// loss is min(sum(p), 1): zero when both masks are empty, one for any binary
// false positive. On binary predictions this equals 1 - 2TP/(2TP+FP+FN).
// `target` must hold only 0 and 1 and match `pred`'s shape.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target);

// While alive, relu, maxpool2 and dice_loss on this thread fold their branch
// decisions (active units, window argmaxes, empty-target case) into digest().
// Two forwards with equal digests took the same piecewise-smooth branch.
// A nested trace shadows the outer one until it ends.
class BranchTrace {
 public:
  BranchTrace();
  ~BranchTrace();
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;

  std::uint64_t digest() const noexcept { return digest_; }
  void reset() noexcept { digest_ = 0; }

 private:
  std::uint64_t digest_ = 0;
  std::uint64_t* previous_;
};

}  // namespace lumenseg::ops
