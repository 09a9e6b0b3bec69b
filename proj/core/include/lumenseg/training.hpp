#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lumenseg/csv.hpp"
#include "lumenseg/data.hpp"
#include "lumenseg/maps.hpp"
#include "lumenseg/metrics.hpp"
#include "lumenseg/models.hpp"

namespace lumenseg::training {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  std::size_t patience = 20;  // epochs without validation improvement; 0 disables
  double threshold = 0.5;

  void validate() const;
};

// Adam with bias correction over a model's parameters.
class Adam {
 public:
  Adam(std::vector<models::NamedTensor<float>>& params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step();
  std::size_t steps() const { return t_; }

 private:
  std::vector<models::NamedTensor<float>>* params_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_dsc = 0.0;  // training-mode outputs accumulated over the epoch
  double val_loss = 0.0;
  double val_dsc = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_dsc = 0.0;
  bool stopped_early = false;
};

// Stacks the samples named by `order` into an input batch and a [B, p, q, 1]
// target batch.
std::pair<Tensor<float>, Tensor<float>> make_batch(std::span<const data::Sample> samples,
                                                   std::span<const std::size_t> order);

// Mini-batch Adam on the soft Dice loss. Validation (inference mode) runs
// after every epoch; the model ends holding the weights of the epoch with the
// best validation DSC, or the best training DSC when `val` is empty. A
// non-finite loss raises NumericError.
TrainResult train(models::Model<float>& model, std::span<const data::Sample> train_set,
                  std::span<const data::Sample> val_set, const TrainConfig& config);

// Inference-mode probability maps for every sample.
std::vector<ProbabilityMap> predict_maps(const models::Model<float>& model, std::span<const data::Sample> samples,
                                         std::size_t batch_size = 8);

struct Evaluation {
  double mean_loss = 0.0;
  std::vector<metrics::FrameScores> per_frame;
  metrics::FrameScores mean;
};

Evaluation evaluate(const models::Model<float>& model, std::span<const data::Sample> samples, double threshold = 0.5);

CsvTable history_table(const TrainResult& result);

struct FoldSplit {
  std::size_t fold_id = 0;
  std::vector<std::string> train_patients;
  std::vector<std::string> val_patients;
};

// Seeded shuffle, then round-robin assignment of patients to validation folds.
std::vector<FoldSplit> kfold_split(const std::vector<std::string>& patients, std::size_t k, std::uint64_t seed);

struct GridPoint {
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t temporal_kernels = 0;  // 0 for core models

  bool operator==(const GridPoint&) const = default;
};

struct GridSpec {
  std::vector<double> learning_rates{1e-3, 1e-4, 1e-5, 1e-6};
  std::vector<std::size_t> batch_sizes{4, 8, 16};
  std::vector<std::size_t> temporal_kernels{};  // empty: not searched
};

std::vector<GridPoint> enumerate_grid(const GridSpec& spec);

struct FoldScore {
  GridPoint point;
  std::size_t fold_id = 0;
  double val_dsc = 0.0;
};

struct GridResult {
  std::vector<FoldScore> table;  // grid-major, fold-minor
  std::vector<double> mean_dsc;  // per grid point
  GridPoint best;
  double best_mean_dsc = 0.0;
};

// Returns the validation DSC of one grid point on one fold. Called
// concurrently when threads > 1, so it must own its model and data views.
using FoldEvaluator = std::function<double(const GridPoint&, const FoldSplit&)>;

// Exhaustive search; the highest mean validation DSC wins with ties going to
// the smaller learning rate, then batch size, then kernel count.
GridResult grid_search(const std::vector<GridPoint>& grid, const std::vector<FoldSplit>& folds,
                       const FoldEvaluator& evaluate, std::size_t threads = 1);

CsvTable cv_table(const GridResult& result);

struct FrameSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

// Seeded 60/40 split of n frames; the training side gets ceil(0.6 n).
FrameSplit split_frames(std::size_t n, std::uint64_t seed, double train_fraction = 0.6);

struct FinalRun {
  models::Model<float> model;
  TrainResult result;
  FrameSplit split;
  std::vector<double> zoom_factors;  // one per augmented training frame
};

// One training run on a 60/40 frame split of all training-patient samples.
// With `augment` set, only the training side is expanded.
FinalRun train_final(const models::ModelConfig& model_config, std::span<const data::Sample> samples,
                     const TrainConfig& config, bool augment);

}  // namespace lumenseg::training
