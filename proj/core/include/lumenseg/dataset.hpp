#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lumenseg/data.hpp"

namespace lumenseg::data {

struct ManifestFrame {
  std::string image;  // relative to the manifest directory
  std::string mask;
  std::size_t index = 0;
};

struct ManifestVideo {
  std::string id;
  std::vector<ManifestFrame> frames;
};

struct ManifestPatient {
  std::string id;
  std::vector<ManifestVideo> videos;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestPatient> patients;
  std::vector<std::string> train;
  std::vector<std::string> test;

  const ManifestPatient& patient(const std::string& id) const;
  std::vector<std::string> patient_ids() const;
};

// Parses and validates: referenced files exist, per-video frame indices run
// 0..n-1, split ids name known patients and no patient is on both sides.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);
void validate(const Manifest& manifest);

// Reads every video of the given patients, in manifest order.
std::vector<Video> load_videos(const Manifest& manifest, const std::vector<std::string>& patient_ids);

// Triplets of every frame of the given patients, video by video.
std::vector<FrameTriplet> load_triplets(const Manifest& manifest, const std::vector<std::string>& patient_ids);

struct LayoutEntry {
  std::string patient;
  std::string video;
  std::size_t frames = 0;
};

// Eleven videos over six patients with P5 held out. Per-video frame counts
// follow the relative sizes of a clinical collection, scaled into [40, 60];
// a nonzero `frames_per_video` overrides every count.
std::vector<LayoutEntry> default_layout(std::size_t frames_per_video = 0);
inline const char* const kTestPatient = "P5";

struct DatasetOptions {
  std::uint64_t seed = 0;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t frames_per_video = 0;
  Artifacts artifacts = Artifacts::kStandard;
  bool force = false;
};

// Renders the default layout under `out_dir` and writes manifest.json there.
// A non-empty `out_dir` is a ConfigError unless `force` is set.
Manifest generate_dataset(const std::filesystem::path& out_dir, const DatasetOptions& options);

}  // namespace lumenseg::data
