#pragma once

#include <span>
#include <string>
#include <vector>

#include "lumenseg/data.hpp"
#include "lumenseg/maps.hpp"
#include "lumenseg/metrics.hpp"
#include "lumenseg/models.hpp"

namespace lumenseg::inference {

struct Member {
  std::string name;
  const models::Model<float>* model = nullptr;
};

// Probability maps of one model over triplets; core models see the central
// frame only.
std::vector<ProbabilityMap> member_maps(const models::Model<float>& model, std::span<const data::FrameTriplet> frames,
                                        std::size_t batch_size = 8);

// Frame-by-frame average of the members' maps.
std::vector<ProbabilityMap> ensemble_maps(std::span<const Member> members, std::span<const data::FrameTriplet> frames);

struct BenchReport {
  std::vector<std::string> members;
  std::vector<metrics::TimingStats> member_stats;
  metrics::TimingStats ensemble;  // all members in turn, then averaging and thresholding
  double member_sum_ms = 0.0;     // sum of the member means
};

// Per-frame wall-clock inference time. `n_frames` timed frames cycle through
// `frames` after `warmup` untimed ones; each member and the sequential
// ensemble are timed on the same frame before moving to the next.
BenchReport bench_inference(std::span<const Member> members, std::span<const data::FrameTriplet> frames,
                            std::size_t n_frames, std::size_t warmup = 5, double threshold = 0.5);

}  // namespace lumenseg::inference
