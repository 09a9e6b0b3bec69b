#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lumenseg::cli {

// Paper-default hyperparameters and desk-scale sizes; see tools/defaults.json.
struct Defaults {
  std::uint64_t seed = 0;

  std::size_t size = 64;
  std::size_t frames_per_video = 0;
  std::string artifacts = "standard";

  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t epochs = 100;
  std::size_t patience = 20;
  bool augment = true;
  std::size_t temporal_kernels = 8;

  std::vector<double> grid_learning_rates;
  std::vector<std::size_t> grid_batch_sizes;
  std::vector<std::size_t> grid_temporal_kernels;
  std::size_t folds = 5;
  std::size_t grid_epochs = 100;

  double threshold = 0.5;

  std::size_t bench_frames = 50;
  std::size_t bench_warmup = 5;
};

// The checked-in defaults, or the JSON file at `path` when given. Keys missing
// from an override file keep their built-in values.
Defaults load_defaults(const std::optional<std::filesystem::path>& path = std::nullopt);

// --seed, then the LUMENSEG_SEED environment variable, then the defaults file.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const Defaults& defaults);

}  // namespace lumenseg::cli
