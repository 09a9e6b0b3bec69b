#include "lumenseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lumenseg/error.hpp"
#include "lumenseg/ops.hpp"
#include "lumenseg/random.hpp"

namespace lumenseg {

namespace {

// Weighted sum with weights fixed per output size so every evaluation of fn
// uses the same reduction.
class Reducer {
 public:
  explicit Reducer(std::uint64_t seed) : seed_(seed) {}

  Tensor<double> operator()(const Tensor<double>& y) {
    if (y.size() == 1) return y;
    if (!weights_.defined() || weights_.size() != y.size()) {
      Rng rng(seed_ ^ 0x5eedULL);
      std::vector<double> w(y.size());
      for (auto& v : w) v = rng.uniform(0.5, 1.5);
      weights_ = Tensor<double>(y.shape(), std::move(w));
    }
    return ops::sum(ops::mul(y, weights_));
  }

 private:
  std::uint64_t seed_;
  Tensor<double> weights_;
};

}  // namespace

GradCheckReport gradcheck(const std::string& name, const std::function<Tensor<double>()>& fn,
                          std::vector<Tensor<double>> wrt, double tolerance, const GradCheckOptions& options) {
  GradCheckReport report;
  report.name = name;
  report.tolerance = tolerance;

  Reducer reduce(options.seed);
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor<double> loss = reduce(fn());
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(wrt.size());
  for (auto& t : wrt) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  struct Evaluation {
    double value;
    std::uint64_t branches;
  };
  auto evaluate = [&] {
    NoGradGuard guard;
    ops::BranchTrace trace;
    const double value = reduce(fn()).item();
    return Evaluation{value, trace.digest()};
  };
  const std::uint64_t base_branches = evaluate().branches;

  Rng rng(options.seed);
  bool finite = true;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto data = wrt[ti].data();
    const std::size_t wanted = options.max_coords_per_tensor > 0
                                   ? std::min(options.max_coords_per_tensor, data.size())
                                   : data.size();
    const bool sampled = wanted < data.size();
    std::vector<std::size_t> coords(data.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    std::size_t checked = 0;
    for (std::size_t i = 0; i < coords.size() && checked < wanted; ++i) {
      // lazy Fisher-Yates, so skipped coordinates get fresh replacements
      if (sampled) std::swap(coords[i], coords[i + rng.index(coords.size() - i)]);
      const std::size_t idx = coords[i];
      const double original = data[idx];
      data[idx] = original + options.step;
      const auto plus = evaluate();
      data[idx] = original - options.step;
      const auto minus = evaluate();
      data[idx] = original;
      if (plus.branches != base_branches || minus.branches != base_branches) {
        ++report.coords_skipped;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * options.step);
      const double a = analytic[ti][idx];
      if (!std::isfinite(numeric) || !std::isfinite(a)) finite = false;
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), options.floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      report.max_rel_error = std::max(report.max_rel_error, rel_err);
      ++report.coords_checked;
      ++checked;
    }
    if (checked == 0 && !data.empty()) report.covered = false;
  }
  for (auto& t : wrt) t.zero_grad();
  report.passed = finite && report.covered && report.max_rel_error < tolerance;
  return report;
}

}  // namespace lumenseg
