#include "lumenseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lumenseg/error.hpp"

namespace lumenseg {

ProbabilityMap::ProbabilityMap(std::size_t height, std::size_t width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (values_.size() != height * width) {
    throw DimensionError("probability map: " + std::to_string(values_.size()) + " values for " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  for (auto& v : values_) {
    if (std::isnan(v)) throw NumericError("probability map: NaN value");
    v = std::clamp(v, 0.0, 1.0);
  }
}

ProbabilityMap::ProbabilityMap(std::size_t height, std::size_t width, double fill)
    : ProbabilityMap(height, width, std::vector<double>(height * width, fill)) {}

BinaryMask::BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (values_.size() != height * width) {
    throw DimensionError("binary mask: " + std::to_string(values_.size()) + " values for " + std::to_string(height) +
                         "x" + std::to_string(width));
  }
  for (auto v : values_) {
    if (v > 1) throw FormatError("binary mask: value " + std::to_string(v) + " is not 0 or 1");
  }
}

BinaryMask::BinaryMask(std::size_t height, std::size_t width, bool fill)
    : height_(height), width_(width), values_(height * width, fill ? 1 : 0) {}

std::size_t BinaryMask::count() const { return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), 1)); }

namespace metrics {

ProbabilityMap ensemble_average(std::span<const ProbabilityMap> maps) {
  if (maps.empty()) throw ConfigError("ensemble_average: no member predictions");
  const auto h = maps[0].height(), w = maps[0].width();
  for (const auto& m : maps) {
    if (m.height() != h || m.width() != w) {
      throw DimensionError("ensemble_average: member map " + std::to_string(m.height()) + "x" +
                           std::to_string(m.width()) + " differs from " + std::to_string(h) + "x" + std::to_string(w));
    }
  }
  std::vector<double> out(h * w, 0.0);
  for (const auto& m : maps)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += m[i];
  const double k = static_cast<double>(maps.size());
  for (auto& v : out) v /= k;
  return ProbabilityMap(h, w, std::move(out));
}

BinaryMask binarize(const ProbabilityMap& map, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ParameterError("binarize: threshold must lie in (0, 1)");
  std::vector<std::uint8_t> out(map.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = map[i] >= threshold ? 1 : 0;
  return BinaryMask(map.height(), map.width(), std::move(out));
}

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& truth) {
  if (pred.height() != truth.height() || pred.width() != truth.width()) {
    throw DimensionError("confusion: prediction " + std::to_string(pred.height()) + "x" +
                         std::to_string(pred.width()) + " vs truth " + std::to_string(truth.height()) + "x" +
                         std::to_string(truth.width()));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i], t = truth[i];
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double dsc(const ConfusionCounts& c) {
  const std::uint64_t denom = 2 * c.tp + c.fn + c.fp;
  if (denom == 0) return 1.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double precision(const ConfusionCounts& c) {
  if (c.tp + c.fp == 0) return c.fn == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double recall(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0) return c.fp == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

FrameScores score(const ConfusionCounts& c) { return {dsc(c), precision(c), recall(c)}; }

FrameScores mean_scores(std::span<const FrameScores> frames) {
  FrameScores m;
  if (frames.empty()) return m;
  for (const auto& f : frames) {
    m.dsc += f.dsc;
    m.precision += f.precision;
    m.recall += f.recall;
  }
  const double n = static_cast<double>(frames.size());
  m.dsc /= n;
  m.precision /= n;
  m.recall /= n;
  return m;
}

namespace {

std::string subset_label(const std::vector<std::string>& members) {
  std::string label = "(";
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (i) label += ",";
    label += members[i];
  }
  return label + ")";
}

}  // namespace

SubsetResult evaluate_subset(const std::vector<std::string>& members,
                             const std::vector<std::vector<ProbabilityMap>>& member_maps,
                             std::span<const BinaryMask> truth, double threshold) {
  if (members.empty() || members.size() != member_maps.size()) {
    throw ConfigError("evaluate_subset: member names and prediction sets disagree");
  }
  for (std::size_t i = 0; i < member_maps.size(); ++i) {
    if (member_maps[i].size() != truth.size()) {
      throw DimensionError("evaluate_subset: member " + members[i] + " has " + std::to_string(member_maps[i].size()) +
                           " predictions for " + std::to_string(truth.size()) + " frames");
    }
  }
  SubsetResult result;
  result.label = subset_label(members);
  result.members = members;
  std::vector<ProbabilityMap> frame_maps(member_maps.size());
  for (std::size_t f = 0; f < truth.size(); ++f) {
    for (std::size_t i = 0; i < member_maps.size(); ++i) frame_maps[i] = member_maps[i][f];
    const auto fused = ensemble_average(frame_maps);
    result.per_frame.push_back(score(confusion(binarize(fused, threshold), truth[f])));
  }
  result.mean = mean_scores(result.per_frame);
  return result;
}

const std::vector<std::vector<std::string>>& ablation_subsets() {
  static const std::vector<std::vector<std::string>> subsets = {
      {"m1", "m2"}, {"M1", "M2"}, {"M1", "m1"}, {"M2", "m2"}, {"m1", "m2", "M1", "M2"}};
  return subsets;
}

std::vector<SubsetResult> ablation_eval(
    const std::function<const std::vector<ProbabilityMap>*(const std::string&)>& maps_by_member,
    std::span<const BinaryMask> truth, double threshold) {
  std::vector<SubsetResult> rows;
  for (const auto& subset : ablation_subsets()) {
    std::vector<std::vector<ProbabilityMap>> maps;
    for (const auto& member : subset) {
      const auto* m = maps_by_member(member);
      if (!m) throw ConfigError("ablation: no predictions for ensemble member " + member);
      maps.push_back(*m);
    }
    rows.push_back(evaluate_subset(subset, maps, truth, threshold));
  }
  return rows;
}

KruskalWallisResult kruskal_wallis(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw ParameterError("kruskal_wallis: need at least two groups");
  struct Item {
    double value;
    std::size_t group;
  };
  std::vector<Item> pooled;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) throw ParameterError("kruskal_wallis: group " + std::to_string(g) + " is empty");
    for (double v : groups[g]) {
      if (std::isnan(v)) throw NumericError("kruskal_wallis: NaN observation");
      pooled.push_back({v, g});
    }
  }
  std::stable_sort(pooled.begin(), pooled.end(), [](const Item& a, const Item& b) { return a.value < b.value; });

  const double n = static_cast<double>(pooled.size());
  std::vector<double> rank_sums(groups.size(), 0.0);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].value == pooled[i].value) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) rank_sums[pooled[k].group] += avg_rank;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }

  KruskalWallisResult result;
  result.dof = groups.size() - 1;
  const double correction = 1.0 - tie_term / (n * n * n - n);
  if (correction <= 0.0) return result;  // every observation tied
  double s = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) s += rank_sums[g] * rank_sums[g] / static_cast<double>(groups[g].size());
  const double h = (12.0 / (n * (n + 1.0)) * s - 3.0 * (n + 1.0)) / correction;
  result.h = std::max(h, 0.0);
  result.p_value = chi_squared_sf(result.h, static_cast<double>(result.dof));
  return result;
}

namespace {

constexpr int kMaxIterations = 10000;
constexpr double kEpsilon = 1e-16;

// P(a, x) by its power series.
double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  for (int n = 1; n < kMaxIterations; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::abs(term) < std::abs(sum) * kEpsilon) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Q(a, x) by Lentz's continued fraction.
double gamma_q_continued_fraction(double a, double x) {
  constexpr double tiny = std::numeric_limits<double>::min() / kEpsilon;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxIterations; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEpsilon) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double regularized_gamma_q(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw ParameterError("regularized_gamma_q: need a > 0 and x >= 0");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_continued_fraction(a, x);
}

double chi_squared_sf(double x, double dof) {
  if (x <= 0.0) return 1.0;
  return regularized_gamma_q(dof / 2.0, x / 2.0);
}

TimingStats summarize_timings(std::span<const double> samples_ms) {
  TimingStats t;
  t.frames = samples_ms.size();
  if (samples_ms.empty()) return t;
  t.mean_ms = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) / static_cast<double>(samples_ms.size());
  if (samples_ms.size() > 1) {
    double ss = 0.0;
    for (double v : samples_ms) ss += (v - t.mean_ms) * (v - t.mean_ms);
    t.std_ms = std::sqrt(ss / static_cast<double>(samples_ms.size() - 1));
  }
  return t;
}

}  // namespace metrics
}  // namespace lumenseg
