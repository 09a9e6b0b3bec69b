#include "lumenseg/models.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "lumenseg/error.hpp"
#include "lumenseg/random.hpp"
#include "layers.hpp"

namespace lumenseg::models {

std::string_view name(Variant v) {
  switch (v) {
    case Variant::kResUNet:
      return "m1";
    case Variant::kLiteSegNet:
      return "m2";
    case Variant::kTemporalResUNet:
      return "M1";
    case Variant::kTemporalLiteSegNet:
      return "M2";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  for (Variant v : kAllVariants) {
    if (name(v) == text) return v;
  }
  throw ConfigError("unknown model variant '" + std::string(text) + "' (expected m1, m2, M1 or M2)");
}

bool is_temporal(Variant v) { return v == Variant::kTemporalResUNet || v == Variant::kTemporalLiteSegNet; }

Variant core_of(Variant v) {
  switch (v) {
    case Variant::kTemporalResUNet:
      return Variant::kResUNet;
    case Variant::kTemporalLiteSegNet:
      return Variant::kLiteSegNet;
    default:
      return v;
  }
}

void ModelConfig::validate() const {
  const std::string tag = "model config (" + std::string(name(variant)) + "): ";
  if (height == 0 || width == 0 || channels == 0) throw ConfigError(tag + "zero-sized input");
  if (base_width == 0) throw ConfigError(tag + "base_width must be positive");
  if (depth > 6) throw ConfigError(tag + "depth above 6 is not supported");
  const std::size_t stride = std::size_t{1} << depth;
  if (height % stride != 0 || width % stride != 0) {
    throw ConfigError(tag + "input " + std::to_string(height) + "x" + std::to_string(width) +
                      " not divisible by 2^depth = " + std::to_string(stride));
  }
  if (is_temporal(variant)) {
    if (temporal_depth != 3) throw ConfigError(tag + "temporal variants take r = 3 frames");
    if (temporal_kernels == 0) throw ConfigError(tag + "temporal variants need n_k >= 1");
    if (height < 3 || width < 3) throw ConfigError(tag + "temporal front needs spatial extents >= 3");
    if (variant == Variant::kTemporalLiteSegNet && temporal_kernels != channels) {
      throw ConfigError(tag + "the lite core's temporal front must emit n_k = " + std::to_string(channels) +
                        " channels");
    }
  } else {
    if (temporal_depth != 1) throw ConfigError(tag + "single-frame variants take r = 1");
    if (temporal_kernels != 0) throw ConfigError(tag + "single-frame variants have no temporal kernels");
  }
}

ModelConfig default_config(Variant v, std::size_t height, std::size_t width) {
  ModelConfig core;
  core.variant = core_of(v);
  core.height = height;
  core.width = width;
  if (core.variant == Variant::kLiteSegNet) {
    core.base_width = 24;
    core.depth = 2;
  }
  if (!is_temporal(v)) return core;
  return extend_temporal(core, 8);
}

ModelConfig extend_temporal(const ModelConfig& core, std::size_t temporal_kernels) {
  if (is_temporal(core.variant)) {
    throw ConfigError("extend_temporal: model " + std::string(name(core.variant)) + " is already temporal");
  }
  if (temporal_kernels == 0) throw ConfigError("extend_temporal: n_k must be >= 1");
  ModelConfig out = core;
  out.variant = core.variant == Variant::kResUNet ? Variant::kTemporalResUNet : Variant::kTemporalLiteSegNet;
  out.temporal_depth = 3;
  out.temporal_kernels = out.variant == Variant::kTemporalLiteSegNet ? core.channels : temporal_kernels;
  return out;
}

template <typename T>
class Builder {
 public:
  Builder(std::vector<NamedTensor<T>>& params, std::vector<NamedTensor<T>>& buffers, Rng& rng)
      : params_(params), buffers_(buffers), rng_(rng) {}

  // U(-b, b) with b = sqrt(3 gain / fan_in): gain 2 (He) ahead of a ReLU,
  // gain 1 for layers whose output is used linearly.
  Tensor<T> uniform_init(const std::string& name, Shape shape, std::size_t fan_in, double gain) {
    const double bound = std::sqrt(3.0 * gain / static_cast<double>(fan_in));
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(rng_.uniform(-bound, bound));
    return add_param(name, Tensor<T>(std::move(shape), std::move(v)));
  }

  Tensor<T> constant(const std::string& name, Shape shape, T value) {
    return add_param(name, Tensor<T>(std::move(shape), value));
  }

  Tensor<T> buffer(const std::string& name, Shape shape, T value) {
    Tensor<T> t(std::move(shape), value);
    buffers_.push_back({name, t});
    return t;
  }

  Conv<T> conv(const std::string& name, std::size_t k, std::size_t c_in, std::size_t c_out, bool bias,
               double gain = 2.0) {
    Conv<T> c;
    c.kernel = uniform_init(name + ".kernel", {k, k, c_in, c_out}, k * k * c_in, gain);
    if (bias) c.bias = constant(name + ".bias", {c_out}, T(0));
    c.padding = k / 2;
    return c;
  }

  Norm<T> norm(const std::string& name, std::size_t c) {
    return {constant(name + ".gamma", {c}, T(1)), constant(name + ".beta", {c}, T(0)),
            buffer(name + ".running_mean", {c}, T(0)), buffer(name + ".running_var", {c}, T(1))};
  }

  ConvNormRelu<T> conv_norm_relu(const std::string& name, std::size_t c_in, std::size_t c_out) {
    auto c = conv(name + ".conv", 3, c_in, c_out, false);
    return {std::move(c), norm(name + ".bn", c_out)};
  }

  ResBlock<T> res_block(const std::string& name, std::size_t c_in, std::size_t c_out) {
    ResBlock<T> b;
    b.first = conv_norm_relu(name + ".a", c_in, c_out);
    b.second = conv_norm_relu(name + ".b", c_out, c_out);
    if (c_in != c_out) b.projection = conv(name + ".proj", 1, c_in, c_out, false, 1.0);
    return b;
  }

 private:
  Tensor<T> add_param(const std::string& name, Tensor<T> t) {
    t.set_requires_grad(true);
    params_.push_back({name, t});
    return t;
  }

  std::vector<NamedTensor<T>>& params_;
  std::vector<NamedTensor<T>>& buffers_;
  Rng& rng_;
};

// ---------------------------------------------------------------------------
// Networks

template <typename T>
class Network {
 public:
  virtual ~Network() = default;
  // x: [N, ...] batched input; returns [N, p, q, 1] probabilities.
  virtual Tensor<T> forward(const Tensor<T>& x, Context<T>& ctx, TemporalTrace* trace) const = 0;
};

template <typename T>
class ResUNet final : public Network<T> {
 public:
  ResUNet(Builder<T>& b, const std::string& prefix, std::size_t channels, std::size_t width, std::size_t depth) {
    std::size_t c_in = channels;
    for (std::size_t s = 0; s < depth; ++s) {
      const std::size_t c = width << s;
      encoders_.push_back(b.res_block(prefix + "enc" + std::to_string(s), c_in, c));
      c_in = c;
    }
    bottleneck_ = b.res_block(prefix + "bottleneck", c_in, width << depth);
    for (std::size_t s = depth; s-- > 0;) {
      const std::size_t c = width << s;
      decoders_.push_back(b.res_block(prefix + "dec" + std::to_string(s), 3 * c, c));
    }
    head_ = b.conv(prefix + "head", 1, width, 1, true, 1.0);
  }

  Tensor<T> forward(const Tensor<T>& x, Context<T>& ctx, TemporalTrace*) const override {
    std::vector<Tensor<T>> skips;
    Tensor<T> h = x;
    for (const auto& enc : encoders_) {
      h = enc(h, ctx);
      skips.push_back(h);
      h = ops::maxpool2(h);
    }
    h = bottleneck_(h, ctx);
    for (std::size_t i = 0; i < decoders_.size(); ++i) {
      h = ops::concat_channels(ops::upsample2(h), skips[skips.size() - 1 - i]);
      h = decoders_[i](h, ctx);
    }
    return ops::sigmoid(head_(h));
  }

 private:
  std::vector<ResBlock<T>> encoders_;
  ResBlock<T> bottleneck_;
  std::vector<ResBlock<T>> decoders_;
  Conv<T> head_;
};

// Plain encoder-decoder: no residual additions and no skip connections.
template <typename T>
class LiteSegNet final : public Network<T> {
 public:
  LiteSegNet(Builder<T>& b, const std::string& prefix, std::size_t channels, std::size_t width, std::size_t depth) {
    std::size_t c_in = channels;
    for (std::size_t s = 0; s < depth; ++s) {
      const std::size_t c = width << s;
      encoders_.push_back(b.conv_norm_relu(prefix + "enc" + std::to_string(s), c_in, c));
      c_in = c;
    }
    const std::size_t c_mid = width << depth;
    bottleneck_.push_back(b.conv_norm_relu(prefix + "bottleneck0", c_in, c_mid));
    bottleneck_.push_back(b.conv_norm_relu(prefix + "bottleneck1", c_mid, c_mid));
    c_in = c_mid;
    for (std::size_t s = depth; s-- > 0;) {
      const std::size_t c = width << s;
      decoders_.push_back(b.conv_norm_relu(prefix + "dec" + std::to_string(s), c_in, c));
      c_in = c;
    }
    refine_ = b.conv_norm_relu(prefix + "refine", width, width);
    head_ = b.conv(prefix + "head", 1, width, 1, true, 1.0);
  }

  Tensor<T> forward(const Tensor<T>& x, Context<T>& ctx, TemporalTrace*) const override {
    Tensor<T> h = x;
    for (const auto& enc : encoders_) h = ops::maxpool2(enc(h, ctx));
    for (const auto& layer : bottleneck_) h = layer(h, ctx);
    for (const auto& dec : decoders_) h = dec(ops::upsample2(h), ctx);
    return ops::sigmoid(head_(refine_(h, ctx)));
  }

 private:
  std::vector<ConvNormRelu<T>> encoders_;
  std::vector<ConvNormRelu<T>> bottleneck_;
  std::vector<ConvNormRelu<T>> decoders_;
  ConvNormRelu<T> refine_;
  Conv<T> head_;
};

// conv3d over (r, 3, 3) -> (1, p-2, q-2, n_k) -> zero pad -> (1, p, q, n_k)
// -> drop the temporal axis -> core.
template <typename T>
class TemporalFront final : public Network<T> {
 public:
  TemporalFront(Tensor<T> kernel, std::unique_ptr<Network<T>> core)
      : kernel_(std::move(kernel)), core_(std::move(core)) {}

  Tensor<T> forward(const Tensor<T>& x, Context<T>& ctx, TemporalTrace* trace) const override {
    auto h = ops::conv3d(x, kernel_);
    auto padded = ops::zero_pad_spatial(h, 1);
    const auto& s = padded.shape();
    auto core_in = ops::reshape(padded, {s[0], s[2], s[3], s[4]});
    if (trace) {
      // Reported per sample, without the batch axis.
      trace->after_conv3d = Shape(h.shape().begin() + 1, h.shape().end());
      trace->after_padding = Shape(s.begin() + 1, s.end());
      trace->core_input = Shape(core_in.shape().begin() + 1, core_in.shape().end());
    }
    return core_->forward(core_in, ctx, trace);
  }

 private:
  Tensor<T> kernel_;
  std::unique_ptr<Network<T>> core_;
};

template <typename T>
std::unique_ptr<Network<T>> build_core(Builder<T>& b, Variant core, const std::string& prefix, std::size_t channels,
                                       std::size_t width, std::size_t depth) {
  if (core == Variant::kResUNet) return std::make_unique<ResUNet<T>>(b, prefix, channels, width, depth);
  return std::make_unique<LiteSegNet<T>>(b, prefix, channels, width, depth);
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
  config_.validate();
  Rng rng(seed);
  Builder<T> b(parameters_, buffers_, rng);
  if (is_temporal(config_.variant)) {
    const std::size_t r = config_.temporal_depth, c = config_.channels, n_k = config_.temporal_kernels;
    auto kernel = b.uniform_init("temporal.conv3d.kernel", {r, 3, 3, c, n_k}, r * 9 * c, 2.0);
    auto core = build_core(b, core_of(config_.variant), "core.", n_k, config_.base_width, config_.depth);
    network_ = std::make_unique<TemporalFront<T>>(std::move(kernel), std::move(core));
  } else {
    network_ = build_core(b, config_.variant, "core.", config_.channels, config_.base_width, config_.depth);
  }
}

template <typename T>
Model<T>::~Model() = default;
template <typename T>
Model<T>::Model(Model&&) noexcept = default;
template <typename T>
Model<T>& Model<T>::operator=(Model&&) noexcept = default;

template <typename T>
Tensor<T> Model<T>::run(const Tensor<T>& input, bool training, TemporalTrace* trace) const {
  const bool temporal = is_temporal(config_.variant);
  const std::size_t sample_rank = temporal ? 4 : 3;
  const Shape expected = temporal ? Shape{3, config_.height, config_.width, config_.channels}
                                  : Shape{config_.height, config_.width, config_.channels};
  const bool batched = input.rank() == sample_rank + 1;
  if (!batched && input.rank() != sample_rank) {
    throw DimensionError("model " + std::string(name(config_.variant)) + ": expected input of shape " +
                         to_string(expected) + " (optionally batched), got " + to_string(input.shape()));
  }
  const Shape sample(input.shape().begin() + (batched ? 1 : 0), input.shape().end());
  if (sample != expected) {
    throw DimensionError("model " + std::string(name(config_.variant)) + ": expected sample shape " +
                         to_string(expected) + ", got " + to_string(sample));
  }
  const std::size_t n = batched ? input.dim(0) : 1;
  Shape batched_shape{n};
  batched_shape.insert(batched_shape.end(), expected.begin(), expected.end());
  Tensor<T> x = batched ? input : ops::reshape(input, batched_shape);

  std::vector<BatchRecord<T>> records;
  Context<T> ctx{training, training ? &records : nullptr};
  auto y = network_->forward(x, ctx, trace);

  if (training) {
    for (const auto& rec : records) {
      auto mean = rec.norm->running_mean;
      auto var = rec.norm->running_var;
      for (std::size_t c = 0; c < mean.size(); ++c) {
        mean[c] = static_cast<T>(kNormMomentum * mean[c] + (1.0 - kNormMomentum) * rec.stats.mean[c]);
        var[c] = static_cast<T>(kNormMomentum * var[c] + (1.0 - kNormMomentum) * rec.stats.variance[c]);
      }
    }
  }
  if (!batched) y = ops::reshape(y, {config_.height, config_.width, 1});
  return y;
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& input, TemporalTrace* trace) {
  return run(input, mode_ == Mode::kTraining, trace);
}

template <typename T>
Tensor<T> Model<T>::predict(const Tensor<T>& input) const {
  NoGradGuard guard;
  return run(input, false, nullptr);
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters_) n += p.tensor.size();
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : parameters_) p.tensor.zero_grad();
}

template <typename T>
Model<T> Model<T>::clone() const {
  Model out(config_, seed_);
  out.copy_state_from(*this);
  out.mode_ = mode_;
  return out;
}

template <typename T>
void Model<T>::copy_state_from(const Model& other) {
  if (!(other.config_ == config_)) throw ConfigError("copy_state_from: configuration mismatch");
  auto copy = [](std::vector<NamedTensor<T>>& dst, const std::vector<NamedTensor<T>>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
      auto d = dst[i].tensor.data();
      auto s = src[i].tensor.data();
      std::copy(s.begin(), s.end(), d.begin());
    }
  };
  copy(parameters_, other.parameters_);
  copy(buffers_, other.buffers_);
}

template class Model<float>;
template class Model<double>;

// ---------------------------------------------------------------------------
// Parameter counting

namespace {

std::size_t conv_params(std::size_t k, std::size_t c_in, std::size_t c_out, bool bias) {
  return k * k * c_in * c_out + (bias ? c_out : 0);
}
std::size_t cnr_params(std::size_t c_in, std::size_t c_out) { return conv_params(3, c_in, c_out, false) + 2 * c_out; }
std::size_t res_params(std::size_t c_in, std::size_t c_out) {
  return cnr_params(c_in, c_out) + cnr_params(c_out, c_out) + (c_in != c_out ? c_in * c_out : 0);
}

std::size_t core_params(Variant core, std::size_t channels, std::size_t width, std::size_t depth) {
  std::size_t n = 0;
  std::size_t c_in = channels;
  if (core == Variant::kResUNet) {
    for (std::size_t s = 0; s < depth; ++s) {
      n += res_params(c_in, width << s);
      c_in = width << s;
    }
    n += res_params(c_in, width << depth);
    for (std::size_t s = 0; s < depth; ++s) n += res_params(3 * (width << s), width << s);
  } else {
    for (std::size_t s = 0; s < depth; ++s) {
      n += cnr_params(c_in, width << s);
      c_in = width << s;
    }
    const std::size_t c_mid = width << depth;
    n += cnr_params(c_in, c_mid) + cnr_params(c_mid, c_mid);
    c_in = c_mid;
    for (std::size_t s = depth; s-- > 0;) {
      n += cnr_params(c_in, width << s);
      c_in = width << s;
    }
    n += cnr_params(width, width);
  }
  return n + conv_params(1, width, 1, true);
}

}  // namespace

std::size_t expected_parameter_count(const ModelConfig& config) {
  config.validate();
  if (!is_temporal(config.variant)) {
    return core_params(config.variant, config.channels, config.base_width, config.depth);
  }
  return config.temporal_depth * 9 * config.channels * config.temporal_kernels +
         core_params(core_of(config.variant), config.temporal_kernels, config.base_width, config.depth);
}

}  // namespace lumenseg::models
