#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lumenseg/maps.hpp"
#include "lumenseg/random.hpp"
#include "lumenseg/tensor.hpp"

namespace lumenseg::data {

// One annotated video frame. `image` is [p, q, 3] with values in [0, 1].
struct Frame {
  Tensor<float> image;
  BinaryMask mask;
  std::string patient_id;
  std::string video_id;
  std::size_t index = 0;
};

struct Video {
  std::string patient_id;
  std::string video_id;
  std::vector<Frame> frames;
};

// (I(t-1), I(t), I(t+1)) with the mask of I(t). Edge frames are replicated
// at the video boundaries.
struct FrameTriplet {
  std::array<Tensor<float>, 3> frames;
  BinaryMask target;
  std::string patient_id;
  std::string video_id;
  std::size_t index = 0;
  std::array<std::size_t, 3> source_indices{};
};

// A model-ready training or evaluation example: `input` is [p, q, c] for core
// models or [3, p, q, c] for temporal ones.
struct Sample {
  Tensor<float> input;
  BinaryMask target;
  std::string patient_id;
  std::string video_id;
  std::size_t index = 0;
};

enum class Artifacts { kNone, kStandard };

Artifacts parse_artifacts(const std::string& s);
std::string name(Artifacts a);

// Appearance shared by every video of one synthetic patient.
struct PatientStyle {
  std::array<double, 3> wall_color{0.85, 0.45, 0.38};
  double texture_scale = 6.0;
  double texture_strength = 0.12;
  double lumen_darkness = 0.06;
  double mean_radius = 0.2;  // fraction of the smaller image side

  static PatientStyle from_seed(std::uint64_t seed);
};

struct VideoSpec {
  std::uint64_t seed = 0;
  std::size_t n_frames = 3;
  std::size_t height = 64;
  std::size_t width = 64;
  Artifacts artifacts = Artifacts::kStandard;
  PatientStyle style;
  std::string patient_id = "P0";
  std::string video_id = "V0";
};

// Renders a tube interior with a dark elliptical lumen drifting along a smooth
// random walk. The mask is the rendered lumen ellipse. Pixel values are
// quantized to 8 bits so that a PPM round trip is exact.
Video generate_synthetic_video(const VideoSpec& spec);

std::vector<FrameTriplet> make_triplets(const Video& video);

// Stacks each triplet's frames into [3, p, q, c] (temporal) or takes the
// central frame (core).
std::vector<Sample> to_samples(const std::vector<FrameTriplet>& triplets, bool temporal);

// Geometric transforms acting jointly on the spatial axes of a sample's input
// and its target mask.
Sample rotate90(const Sample& s, int quarter_turns);
Sample flip_horizontal(const Sample& s);
Sample flip_vertical(const Sample& s);
// Nearest-neighbour zoom about the image centre; factors above 1 crop, below
// 1 pad with zeros.
Sample zoom(const Sample& s, double factor);

inline constexpr double kZoomLow = 0.98;
inline constexpr double kZoomHigh = 1.02;

struct Augmented {
  std::vector<Sample> samples;
  double zoom_factor = 1.0;
};

// Rotations by 90, 180 and 270 degrees (square inputs only), both flips and
// one zoom with a factor drawn from [kZoomLow, kZoomHigh].
Augmented augment(const Sample& s, Rng& rng);

struct AugmentedSet {
  std::vector<Sample> samples;  // originals first, then their transforms
  std::vector<double> zoom_factors;
};

// Precomputes the expanded training set in memory.
AugmentedSet augment_all(std::span<const Sample> samples, std::uint64_t seed);

}  // namespace lumenseg::data
