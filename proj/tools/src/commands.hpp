#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lumenseg/models.hpp"

namespace lumenseg::cli {

namespace fs = std::filesystem;

// Run-directory subfolder holding one trained member. Temporal variants get a
// suffix so names stay distinct on case-insensitive filesystems.
std::string member_dir(models::Variant v);
fs::path weights_path(const fs::path& run_dir, models::Variant v);

struct GenDataOptions {
  fs::path out;
  std::uint64_t seed = 0;
  std::size_t size = 64;
  std::size_t frames = 0;  // 0: per-video counts of the default layout
  std::string artifacts = "standard";
  bool force = false;
};

struct TrainOptions {
  fs::path manifest;
  fs::path run_dir;
  models::Variant model = models::Variant::kResUNet;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t epochs = 100;
  std::size_t patience = 20;
  std::size_t temporal_kernels = 8;
  bool augment = true;
  double threshold = 0.5;
};

struct GridSearchOptions {
  fs::path manifest;
  fs::path run_dir;
  models::Variant model = models::Variant::kResUNet;
  std::uint64_t seed = 0;
  std::vector<double> learning_rates;
  std::vector<std::size_t> batch_sizes;
  std::vector<std::size_t> temporal_kernels;  // searched for M1 only
  std::size_t folds = 5;
  std::size_t epochs = 100;
  std::size_t patience = 20;
  std::size_t threads = 1;
  double threshold = 0.5;
};

struct EvalOptions {
  fs::path manifest;
  fs::path run_dir;
  std::vector<models::Variant> members;
  std::optional<fs::path> pred_manifest;
  double threshold = 0.5;
};

struct AblateOptions {
  fs::path manifest;
  fs::path run_dir;
  double threshold = 0.5;
};

struct BenchOptions {
  fs::path run_dir;
  std::optional<fs::path> manifest;
  std::vector<models::Variant> members;
  std::uint64_t seed = 0;
  std::size_t size = 64;
  std::size_t frames = 50;
  std::size_t warmup = 5;
  double threshold = 0.5;
};

struct GradCheckOptions {
  std::optional<fs::path> run_dir;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
};

// Each command writes its machine-readable outputs under the run directory,
// prints a short summary to `out` and throws lumenseg::Error on failure.
void cmd_gen_data(const GenDataOptions& o, std::ostream& out);
void cmd_train(const TrainOptions& o, std::ostream& out);
void cmd_gridsearch(const GridSearchOptions& o, std::ostream& out);
void cmd_eval(const EvalOptions& o, std::ostream& out);
void cmd_ablate(const AblateOptions& o, std::ostream& out);
void cmd_bench(const BenchOptions& o, std::ostream& out);
void cmd_gradcheck(const GradCheckOptions& o, std::ostream& out);

}  // namespace lumenseg::cli
