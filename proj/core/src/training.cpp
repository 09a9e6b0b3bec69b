#include "lumenseg/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>
#include <tuple>

#include "lumenseg/error.hpp"
#include "lumenseg/ops.hpp"

namespace lumenseg::training {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be finite and >= 0");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (epochs == 0) throw ConfigError("epoch count must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
}

Adam::Adam(std::vector<models::NamedTensor<float>>& params, double lr, double beta1, double beta2, double eps)
    : params_(&params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_->size(); ++i) {
    auto& tensor = (*params_)[i].tensor;
    if (!tensor.has_grad()) continue;
    const auto g = tensor.grad();
    auto w = tensor.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      const double update = lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
      w[j] = static_cast<float>(w[j] - update);
    }
  }
}

std::pair<Tensor<float>, Tensor<float>> make_batch(std::span<const data::Sample> samples,
                                                   std::span<const std::size_t> order) {
  if (order.empty()) throw DataError("empty batch");
  const auto& first = samples[order[0]];
  const auto& shape = first.input.shape();
  const std::size_t in_size = first.input.size(), px = first.target.size();
  std::vector<float> x, y;
  x.reserve(order.size() * in_size);
  y.reserve(order.size() * px);
  for (auto i : order) {
    const auto& s = samples[i];
    if (s.input.shape() != shape || s.target.size() != px) {
      throw DimensionError("batch mixes input shapes " + to_string(shape) + " and " + to_string(s.input.shape()));
    }
    x.insert(x.end(), s.input.data().begin(), s.input.data().end());
    for (auto v : s.target.values()) y.push_back(static_cast<float>(v));
  }
  Shape xs{order.size()};
  xs.insert(xs.end(), shape.begin(), shape.end());
  return {Tensor<float>(std::move(xs), std::move(x)),
          Tensor<float>({order.size(), first.target.height(), first.target.width(), 1}, std::move(y))};
}

namespace {

double frame_dsc(std::span<const float> probs, const BinaryMask& truth, double threshold) {
  metrics::ConfusionCounts c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool p = probs[i] >= threshold, t = truth[i];
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return metrics::dsc(c);
}

template <typename Fn>
void for_each_batch(std::size_t n, std::size_t batch_size, Fn&& fn) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t count = std::min(batch_size, n - start);
    fn(std::span<const std::size_t>(idx.data() + start, count));
  }
}

}  // namespace

TrainResult train(models::Model<float>& model, std::span<const data::Sample> train_set,
                  std::span<const data::Sample> val_set, const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw DataError("training set is empty");

  Adam adam(model.parameters(), config.learning_rate);
  Rng rng(Rng::mix(config.seed ^ 0x747261696eULL));
  auto best = model.clone();
  double best_score = -1.0;
  std::size_t since_best = 0;
  TrainResult result;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    model.set_mode(models::Mode::kTraining);
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      const std::span<const std::size_t> batch(order.data() + start, count);
      auto [x, y] = make_batch(train_set, batch);
      model.zero_grad();
      auto out = model.forward(x);
      auto loss = ops::dice_loss(out, y);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                           std::to_string(start) + " (lr " + format_number(config.learning_rate) + ")");
      }
      loss.backward();
      adam.step();
      rec.train_loss += value * static_cast<double>(count);
      const std::size_t px = y.size() / count;
      for (std::size_t b = 0; b < count; ++b) {
        rec.train_dsc += frame_dsc(out.data().subspan(b * px, px), train_set[batch[b]].target, config.threshold);
      }
    }
    rec.train_loss /= static_cast<double>(order.size());
    rec.train_dsc /= static_cast<double>(order.size());
    model.set_mode(models::Mode::kInference);

    double score = rec.train_dsc;
    if (!val_set.empty()) {
      const auto ev = evaluate(model, val_set, config.threshold);
      rec.val_loss = ev.mean_loss;
      rec.val_dsc = ev.mean.dsc;
      score = rec.val_dsc;
    }
    result.history.push_back(rec);

    if (score > best_score) {
      best_score = score;
      result.best_epoch = epoch;
      best.copy_state_from(model);
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  model.copy_state_from(best);
  result.best_val_dsc = best_score;
  return result;
}

std::vector<ProbabilityMap> predict_maps(const models::Model<float>& model, std::span<const data::Sample> samples,
                                         std::size_t batch_size) {
  std::vector<ProbabilityMap> maps;
  maps.reserve(samples.size());
  for_each_batch(samples.size(), batch_size, [&](std::span<const std::size_t> batch) {
    auto x = make_batch(samples, batch).first;
    const auto out = model.predict(x);
    const std::size_t px = out.size() / batch.size();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& t = samples[batch[b]].target;
      const auto vals = out.data().subspan(b * px, px);
      maps.emplace_back(t.height(), t.width(), std::vector<double>(vals.begin(), vals.end()));
    }
  });
  return maps;
}

Evaluation evaluate(const models::Model<float>& model, std::span<const data::Sample> samples, double threshold) {
  Evaluation ev;
  if (samples.empty()) return ev;
  NoGradGuard no_grad;
  for_each_batch(samples.size(), 8, [&](std::span<const std::size_t> batch) {
    auto [x, y] = make_batch(samples, batch);
    const auto out = model.predict(x);
    ev.mean_loss += ops::dice_loss(out, y).item() * static_cast<double>(batch.size());
    const std::size_t px = out.size() / batch.size();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& t = samples[batch[b]].target;
      const auto vals = out.data().subspan(b * px, px);
      const ProbabilityMap map(t.height(), t.width(), std::vector<double>(vals.begin(), vals.end()));
      ev.per_frame.push_back(metrics::score(metrics::confusion(metrics::binarize(map, threshold), t)));
    }
  });
  ev.mean_loss /= static_cast<double>(samples.size());
  ev.mean = metrics::mean_scores(ev.per_frame);
  return ev;
}

CsvTable history_table(const TrainResult& result) {
  CsvTable t({"epoch", "train_loss", "train_dsc", "val_loss", "val_dsc"});
  for (const auto& r : result.history) {
    t.row({std::to_string(r.epoch), format_number(r.train_loss), format_number(r.train_dsc), format_number(r.val_loss),
           format_number(r.val_dsc)});
  }
  return t;
}

std::vector<FoldSplit> kfold_split(const std::vector<std::string>& patients, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("cross validation needs at least 2 folds");
  if (patients.size() < k) {
    throw ConfigError("cannot build " + std::to_string(k) + " folds from " + std::to_string(patients.size()) +
                      " patients");
  }
  auto shuffled = patients;
  Rng rng(Rng::mix(seed ^ 0x666f6c64ULL));
  for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.index(i)]);

  std::vector<FoldSplit> folds(k);
  for (std::size_t f = 0; f < k; ++f) folds[f].fold_id = f;
  for (std::size_t i = 0; i < shuffled.size(); ++i) folds[i % k].val_patients.push_back(shuffled[i]);
  for (auto& fold : folds) {
    for (const auto& p : patients) {
      if (std::find(fold.val_patients.begin(), fold.val_patients.end(), p) == fold.val_patients.end()) {
        fold.train_patients.push_back(p);
      }
    }
  }
  return folds;
}

std::vector<GridPoint> enumerate_grid(const GridSpec& spec) {
  const std::vector<std::size_t> kernels = spec.temporal_kernels.empty() ? std::vector<std::size_t>{0}
                                                                         : spec.temporal_kernels;
  std::vector<GridPoint> grid;
  for (double lr : spec.learning_rates)
    for (auto bs : spec.batch_sizes)
      for (auto nk : kernels) grid.push_back({lr, bs, nk});
  if (grid.empty()) throw ConfigError("hyperparameter grid is empty");
  return grid;
}

GridResult grid_search(const std::vector<GridPoint>& grid, const std::vector<FoldSplit>& folds,
                       const FoldEvaluator& evaluate_fold, std::size_t threads) {
  if (grid.empty()) throw ConfigError("hyperparameter grid is empty");
  if (folds.empty()) throw ConfigError("no folds to evaluate");
  const std::size_t jobs = grid.size() * folds.size();
  GridResult result;
  result.table.resize(jobs);

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      const auto& point = grid[j / folds.size()];
      const auto& fold = folds[j % folds.size()];
      try {
        result.table[j] = {point, fold.fold_id, evaluate_fold(point, fold)};
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs;
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, jobs);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::size_t best = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double s = 0;
    for (std::size_t f = 0; f < folds.size(); ++f) s += result.table[g * folds.size() + f].val_dsc;
    result.mean_dsc.push_back(s / static_cast<double>(folds.size()));
    if (g == 0) continue;
    const auto& a = grid[g];
    const auto& b = grid[best];
    const double ma = result.mean_dsc[g], mb = result.mean_dsc[best];
    const bool better =
        ma > mb || (ma == mb && std::tie(a.learning_rate, a.batch_size, a.temporal_kernels) <
                                    std::tie(b.learning_rate, b.batch_size, b.temporal_kernels));
    if (better) best = g;
  }
  result.best = grid[best];
  result.best_mean_dsc = result.mean_dsc[best];
  return result;
}

CsvTable cv_table(const GridResult& result) {
  CsvTable t({"learning_rate", "batch_size", "temporal_kernels", "fold", "val_dsc"});
  for (const auto& r : result.table) {
    t.row({format_number(r.point.learning_rate), std::to_string(r.point.batch_size),
           std::to_string(r.point.temporal_kernels), std::to_string(r.fold_id), format_number(r.val_dsc)});
  }
  return t;
}

FrameSplit split_frames(std::size_t n, std::uint64_t seed, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("train fraction must lie in (0, 1]");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(Rng::mix(seed ^ 0x73706c6974ULL));
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  // ceil with a guard against products like 0.6 * 5 = 3.0000000000000004
  const auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(n) - 1e-9));
  FrameSplit split;
  split.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  return split;
}

FinalRun train_final(const models::ModelConfig& model_config, std::span<const data::Sample> samples,
                     const TrainConfig& config, bool augment) {
  if (samples.empty()) throw DataError("no training frames");
  auto split = split_frames(samples.size(), config.seed);
  std::vector<data::Sample> train_part, val_part;
  for (auto i : split.train) train_part.push_back(samples[i]);
  for (auto i : split.val) val_part.push_back(samples[i]);

  std::vector<double> zooms;
  if (augment) {
    auto expanded = data::augment_all(train_part, Rng::mix(config.seed ^ 0x6175676dULL));
    train_part = std::move(expanded.samples);
    zooms = std::move(expanded.zoom_factors);
  }
  models::Model<float> model(model_config, config.seed);
  auto result = train(model, train_part, val_part, config);
  return FinalRun{std::move(model), std::move(result), std::move(split), std::move(zooms)};
}

}  // namespace lumenseg::training
