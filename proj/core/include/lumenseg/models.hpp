#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lumenseg/ops.hpp"
#include "lumenseg/tensor.hpp"

namespace lumenseg::models {

// The four ensemble members. m1/m2 consume a single frame; M1/M2 are the same
// cores behind a temporal 3D-convolution front consuming a frame triplet.
enum class Variant : std::uint32_t {
  kResUNet = 0,          // m1
  kLiteSegNet = 1,       // m2
  kTemporalResUNet = 2,  // M1
  kTemporalLiteSegNet = 3,  // M2
};

inline constexpr Variant kAllVariants[] = {Variant::kResUNet, Variant::kLiteSegNet, Variant::kTemporalResUNet,
                                           Variant::kTemporalLiteSegNet};

std::string_view name(Variant v);
// Accepts "m1", "m2", "M1", "M2"; throws ConfigError otherwise.
Variant parse_variant(std::string_view text);
bool is_temporal(Variant v);
Variant core_of(Variant v);

struct ModelConfig {
  Variant variant = Variant::kResUNet;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 3;
  std::size_t temporal_depth = 1;    // r: 3 for temporal variants
  std::size_t temporal_kernels = 0;  // n_k: temporal variants only
  std::size_t base_width = 16;
  std::size_t depth = 3;

  // Throws ConfigError describing the first violated constraint.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Desk-scale defaults per variant. The lite network is shallower and wider
// than the residual U-Net; temporal variants carry r = 3.
ModelConfig default_config(Variant v, std::size_t height = 64, std::size_t width = 64);

// Wraps a core configuration with the temporal front. n_k is forced to the
// frame channel count for the lite core so its first layer keeps the
// single-frame input contract.
ModelConfig extend_temporal(const ModelConfig& core, std::size_t temporal_kernels);

enum class Mode { kTraining, kInference };

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// Intermediate shapes of the temporal front, recorded on request.
struct TemporalTrace {
  Shape after_conv3d;
  Shape after_padding;
  Shape core_input;
};

template <typename T>
class Network;

template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }

  // Input: [N, p, q, c] (core) or [N, 3, p, q, c] (temporal); unbatched
  // inputs are accepted and give unbatched output. Output: [N, p, q, 1]
  // probabilities. In training mode batch statistics are used and the
  // batchnorm running averages are updated.
  Tensor<T> forward(const Tensor<T>& input, TemporalTrace* trace = nullptr);

  // Inference-mode forward without gradient recording; safe to call
  // concurrently on a shared model.
  Tensor<T> predict(const Tensor<T>& input) const;

  // Trainable tensors in registration order.
  std::vector<NamedTensor<T>>& parameters() { return parameters_; }
  const std::vector<NamedTensor<T>>& parameters() const { return parameters_; }
  // Batchnorm running statistics.
  std::vector<NamedTensor<T>>& buffers() { return buffers_; }
  const std::vector<NamedTensor<T>>& buffers() const { return buffers_; }

  std::size_t parameter_count() const;
  void zero_grad();

  // Deep copy of parameter and buffer values into a fresh model.
  Model clone() const;
  // Copies values from a model with an identical configuration.
  void copy_state_from(const Model& other);

 private:
  Tensor<T> run(const Tensor<T>& input, bool training, TemporalTrace* trace) const;

  ModelConfig config_;
  std::uint64_t seed_;
  Mode mode_ = Mode::kInference;
  std::vector<NamedTensor<T>> parameters_;
  std::vector<NamedTensor<T>> buffers_;
  std::unique_ptr<Network<T>> network_;
};

extern template class Model<float>;
extern template class Model<double>;

// Analytic trainable-parameter count for a configuration.
std::size_t expected_parameter_count(const ModelConfig& config);

// Weight file layout (little-endian):
//   "LSEG" | u32 version | config record (8 x u32) | u32 entry count |
//   entries: u32 name length, name bytes, u8 dtype (0 = f32), u32 rank, rank x u32 |
//   raw f32 payload in entry order.
inline constexpr std::uint32_t kWeightFormatVersion = 1;

template <typename T>
void save_weights(const Model<T>& model, const std::filesystem::path& path);

template <typename T>
Model<T> load_weights(const std::filesystem::path& path);

// Loads into an existing model; FormatError names the first entry whose name
// or shape differs from the model's layout.
template <typename T>
void load_weights_into(Model<T>& model, const std::filesystem::path& path);

ModelConfig read_weight_config(const std::filesystem::path& path);

}  // namespace lumenseg::models
