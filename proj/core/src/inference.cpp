#include "lumenseg/inference.hpp"

#include <chrono>

#include "lumenseg/error.hpp"
#include "lumenseg/training.hpp"

namespace lumenseg::inference {

namespace {

void check_members(std::span<const Member> members) {
  if (members.empty()) throw ConfigError("ensemble has no members");
  for (const auto& m : members) {
    if (m.model == nullptr) throw ConfigError("ensemble member '" + m.name + "' has no model");
  }
}

Tensor<float> member_input(const models::Model<float>& model, const data::FrameTriplet& t) {
  if (!models::is_temporal(model.config().variant)) return t.frames[1];
  const auto& s = t.frames[1].shape();
  std::vector<float> stacked;
  stacked.reserve(3 * t.frames[1].size());
  for (const auto& f : t.frames) stacked.insert(stacked.end(), f.data().begin(), f.data().end());
  return Tensor<float>({3, s[0], s[1], s[2]}, std::move(stacked));
}

ProbabilityMap to_map(const Tensor<float>& out) {
  const auto& s = out.shape();
  return ProbabilityMap(s[s.size() - 3], s[s.size() - 2], std::vector<double>(out.data().begin(), out.data().end()));
}

}  // namespace

std::vector<ProbabilityMap> member_maps(const models::Model<float>& model, std::span<const data::FrameTriplet> frames,
                                        std::size_t batch_size) {
  std::vector<data::FrameTriplet> copy(frames.begin(), frames.end());
  const auto samples = data::to_samples(copy, models::is_temporal(model.config().variant));
  return training::predict_maps(model, samples, batch_size);
}

std::vector<ProbabilityMap> ensemble_maps(std::span<const Member> members, std::span<const data::FrameTriplet> frames) {
  check_members(members);
  std::vector<std::vector<ProbabilityMap>> per_member;
  for (const auto& m : members) per_member.push_back(member_maps(*m.model, frames));
  std::vector<ProbabilityMap> out;
  out.reserve(frames.size());
  std::vector<ProbabilityMap> at_frame;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    at_frame.clear();
    for (const auto& maps : per_member) at_frame.push_back(maps[f]);
    out.push_back(metrics::ensemble_average(at_frame));
  }
  return out;
}

BenchReport bench_inference(std::span<const Member> members, std::span<const data::FrameTriplet> frames,
                            std::size_t n_frames, std::size_t warmup, double threshold) {
  check_members(members);
  if (n_frames == 0) throw ParameterError("bench_inference: n_frames must be positive");
  if (frames.empty()) throw DataError("bench_inference: no input frames");

  using Clock = std::chrono::steady_clock;
  auto ms_since = [](Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };

  std::vector<std::vector<double>> member_ms(members.size());
  std::vector<double> ensemble_ms;
  std::vector<Tensor<float>> inputs(members.size());
  std::vector<ProbabilityMap> maps;
  for (std::size_t i = 0; i < warmup + n_frames; ++i) {
    const auto& frame = frames[i % frames.size()];
    for (std::size_t m = 0; m < members.size(); ++m) inputs[m] = member_input(*members[m].model, frame);
    const bool timed = i >= warmup;

    for (std::size_t m = 0; m < members.size(); ++m) {
      const auto t0 = Clock::now();
      auto out = members[m].model->predict(inputs[m]);
      if (timed) member_ms[m].push_back(ms_since(t0));
    }

    const auto t0 = Clock::now();
    maps.clear();
    for (std::size_t m = 0; m < members.size(); ++m) maps.push_back(to_map(members[m].model->predict(inputs[m])));
    auto mask = metrics::binarize(metrics::ensemble_average(maps), threshold);
    if (timed) ensemble_ms.push_back(ms_since(t0));
  }

  BenchReport report;
  for (std::size_t m = 0; m < members.size(); ++m) {
    report.members.push_back(members[m].name);
    report.member_stats.push_back(metrics::summarize_timings(member_ms[m]));
    report.member_sum_ms += report.member_stats.back().mean_ms;
  }
  report.ensemble = metrics::summarize_timings(ensemble_ms);
  return report;
}

}  // namespace lumenseg::inference
