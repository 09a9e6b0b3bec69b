#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lumenseg/maps.hpp"

namespace lumenseg::metrics {

// Pointwise arithmetic mean of k maps, F = (1/k) * sum_i p_i.
ProbabilityMap ensemble_average(std::span<const ProbabilityMap> maps);

// 1 where value >= threshold; threshold must lie in (0, 1).
BinaryMask binarize(const ProbabilityMap& map, double threshold = 0.5);

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::uint64_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& truth);

// 2TP / (2TP + FN + FP). Degenerate conventions: both masks empty gives 1 for
// all three scores; an empty side against a non-empty side gives 0.
double dsc(const ConfusionCounts& c);
double precision(const ConfusionCounts& c);
double recall(const ConfusionCounts& c);

struct FrameScores {
  double dsc = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

FrameScores score(const ConfusionCounts& c);

// Macro average over frames.
FrameScores mean_scores(std::span<const FrameScores> frames);

// One ensemble subset evaluated over a test set.
struct SubsetResult {
  std::string label;                   // e.g. "(m1,m2)"
  std::vector<std::string> members;    // member names
  std::vector<FrameScores> per_frame;  // aligned with the test frames
  FrameScores mean;
};

// Averages the members' maps frame by frame, thresholds the result and
// scores it against `truth`. `member_maps[i][f]` is member i's map for frame f.
SubsetResult evaluate_subset(const std::vector<std::string>& members,
                             const std::vector<std::vector<ProbabilityMap>>& member_maps,
                             std::span<const BinaryMask> truth, double threshold = 0.5);

// The ablation subsets in reporting order: (m1,m2), (M1,M2), (M1,m1),
// (M2,m2) and the full four-member ensemble.
const std::vector<std::vector<std::string>>& ablation_subsets();

// Evaluates every ablation subset. `maps_by_member` is looked up by member
// name; a missing member raises ConfigError.
std::vector<SubsetResult> ablation_eval(
    const std::function<const std::vector<ProbabilityMap>*(const std::string&)>& maps_by_member,
    std::span<const BinaryMask> truth, double threshold = 0.5);

struct KruskalWallisResult {
  double h = 0.0;
  double p_value = 1.0;
  std::size_t dof = 0;
};

// Rank-based omnibus test with average ranks for ties and the standard tie
// correction; p-value from the chi-squared distribution with g - 1 degrees of
// freedom. All-identical data gives H = 0, p = 1.
KruskalWallisResult kruskal_wallis(const std::vector<std::vector<double>>& groups);

// Regularized upper incomplete gamma Q(a, x), series for x < a + 1 and a
// continued fraction otherwise.
double regularized_gamma_q(double a, double x);

// Survival function of the chi-squared distribution.
double chi_squared_sf(double x, double dof);

struct TimingStats {
  double mean_ms = 0.0;
  double std_ms = 0.0;
  std::size_t frames = 0;
};

TimingStats summarize_timings(std::span<const double> samples_ms);

}  // namespace lumenseg::metrics
