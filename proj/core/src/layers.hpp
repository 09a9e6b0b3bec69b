#pragma once

#include <optional>
#include <vector>

#include "lumenseg/ops.hpp"

// Building blocks shared by the networks in models.cpp.
namespace lumenseg::models {

template <typename T>
struct BatchRecord;

template <typename T>
struct Context {
  bool training = false;
  std::vector<BatchRecord<T>>* records = nullptr;
};

template <typename T>
struct Conv {
  Tensor<T> kernel;
  Tensor<T> bias;  // undefined when the layer has no bias
  std::size_t padding = 0;

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = ops::conv2d(x, kernel, 1, padding);
    return bias.defined() ? ops::bias_add(y, bias) : y;
  }
};

template <typename T>
struct Norm {
  Tensor<T> gamma, beta, running_mean, running_var;
};

template <typename T>
struct BatchRecord {
  const Norm<T>* norm;
  ops::BatchStats<T> stats;
};

constexpr double kNormEps = 1e-5;
constexpr double kNormMomentum = 0.9;

template <typename T>
Tensor<T> normalize(const Norm<T>& n, const Tensor<T>& x, Context<T>& ctx) {
  if (!ctx.training) {
    return ops::batchnorm_inference(x, n.gamma, n.beta, n.running_mean, n.running_var, T(kNormEps));
  }
  ops::BatchStats<T> stats;
  auto y = ops::batchnorm(x, n.gamma, n.beta, T(kNormEps), ctx.records ? &stats : nullptr);
  if (ctx.records) ctx.records->push_back({&n, std::move(stats)});
  return y;
}

template <typename T>
struct ConvNormRelu {
  Conv<T> conv;
  Norm<T> norm;

  Tensor<T> operator()(const Tensor<T>& x, Context<T>& ctx) const { return ops::relu(normalize(norm, conv(x), ctx)); }
};

// identity (or 1x1 projection when channels change) + (conv-bn-relu) x 2
template <typename T>
struct ResBlock {
  ConvNormRelu<T> first, second;
  std::optional<Conv<T>> projection;

  Tensor<T> operator()(const Tensor<T>& x, Context<T>& ctx) const {
    auto branch = second(first(x, ctx), ctx);
    return ops::add(projection ? (*projection)(x) : x, branch);
  }
};

}  // namespace lumenseg::models
