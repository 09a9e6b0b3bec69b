#include "lumenseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <set>

#include "lumenseg/error.hpp"
#include "lumenseg/image_io.hpp"

namespace lumenseg::data {

namespace fs = std::filesystem;
using nlohmann::json;

const ManifestPatient& Manifest::patient(const std::string& id) const {
  for (const auto& p : patients)
    if (p.id == id) return p;
  throw DataError("manifest has no patient '" + id + "'");
}

std::vector<std::string> Manifest::patient_ids() const {
  std::vector<std::string> ids;
  for (const auto& p : patients) ids.push_back(p.id);
  return ids;
}

void validate(const Manifest& m) {
  std::set<std::string> known;
  for (const auto& p : m.patients) {
    if (!known.insert(p.id).second) throw FormatError("manifest lists patient '" + p.id + "' twice");
    for (const auto& v : p.videos) {
      if (v.frames.empty()) throw FormatError("manifest video '" + v.id + "' has no frames");
      for (std::size_t i = 0; i < v.frames.size(); ++i) {
        const auto& f = v.frames[i];
        if (f.index != i) {
          throw FormatError("manifest video '" + v.id + "': frame indices are not contiguous at position " +
                            std::to_string(i));
        }
        for (const auto* file : {&f.image, &f.mask}) {
          if (!fs::exists(m.root / *file)) throw DataError("manifest references missing file " + (m.root / *file).string());
        }
      }
    }
  }
  std::set<std::string> train;
  for (const auto& id : m.train) {
    if (!known.count(id)) throw FormatError("split names unknown patient '" + id + "'");
    train.insert(id);
  }
  for (const auto& id : m.test) {
    if (!known.count(id)) throw FormatError("split names unknown patient '" + id + "'");
    if (train.count(id)) throw DataError("patient '" + id + "' appears in both train and test splits");
  }
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  try {
    const json j = json::parse(in);
    for (const auto& jp : j.at("patients")) {
      ManifestPatient p{jp.at("id").get<std::string>(), {}};
      for (const auto& jv : jp.at("videos")) {
        ManifestVideo v{jv.at("id").get<std::string>(), {}};
        for (const auto& jf : jv.at("frames")) {
          v.frames.push_back(
              {jf.at("image").get<std::string>(), jf.at("mask").get<std::string>(), jf.at("index").get<std::size_t>()});
        }
        p.videos.push_back(std::move(v));
      }
      m.patients.push_back(std::move(p));
    }
    m.train = j.at("split").at("train").get<std::vector<std::string>>();
    m.test = j.at("split").at("test").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + path.string() + ": " + e.what());
  }
  validate(m);
  return m;
}

void save_manifest(const Manifest& m, const fs::path& path) {
  json patients = json::array();
  for (const auto& p : m.patients) {
    json videos = json::array();
    for (const auto& v : p.videos) {
      json frames = json::array();
      for (const auto& f : v.frames) frames.push_back({{"image", f.image}, {"mask", f.mask}, {"index", f.index}});
      videos.push_back({{"id", v.id}, {"frames", frames}});
    }
    patients.push_back({{"id", p.id}, {"videos", videos}});
  }
  const json j = {{"patients", patients}, {"split", {{"train", m.train}, {"test", m.test}}}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << j.dump(2) << "\n";
}

std::vector<Video> load_videos(const Manifest& m, const std::vector<std::string>& patient_ids) {
  std::vector<Video> videos;
  for (const auto& id : patient_ids) {
    for (const auto& mv : m.patient(id).videos) {
      Video v{id, mv.id, {}};
      for (const auto& f : mv.frames) {
        auto image = read_image(m.root / f.image);
        auto mask = read_mask(m.root / f.mask);
        if (mask.height() != image.dim(0) || mask.width() != image.dim(1)) {
          throw DataError("mask " + f.mask + " does not match the size of image " + f.image);
        }
        v.frames.push_back(Frame{std::move(image), std::move(mask), id, mv.id, f.index});
      }
      videos.push_back(std::move(v));
    }
  }
  return videos;
}

std::vector<FrameTriplet> load_triplets(const Manifest& m, const std::vector<std::string>& patient_ids) {
  std::vector<FrameTriplet> out;
  for (const auto& video : load_videos(m, patient_ids)) {
    auto t = make_triplets(video);
    out.insert(out.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
  }
  return out;
}

std::vector<LayoutEntry> default_layout(std::size_t frames_per_video) {
  // Annotated-frame counts of the reference collection, per video.
  static const std::vector<std::pair<int, int>> counts = {{1, 21},  {1, 240}, {2, 462}, {2, 234},
                                                          {3, 51},  {4, 201}, {5, 366}, {6, 387},
                                                          {6, 234}, {6, 117}, {6, 360}};
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end(),
                                            [](const auto& a, const auto& b) { return a.second < b.second; });
  std::vector<LayoutEntry> layout;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const auto [patient, n] = counts[i];
    std::size_t frames = frames_per_video;
    if (frames == 0) {
      const double t = static_cast<double>(n - lo->second) / static_cast<double>(hi->second - lo->second);
      frames = static_cast<std::size_t>(std::lround(40.0 + 20.0 * t));
    }
    layout.push_back({"P" + std::to_string(patient), "V" + std::to_string(i + 1), frames});
  }
  return layout;
}

Manifest generate_dataset(const fs::path& out_dir, const DatasetOptions& options) {
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!options.force) throw ConfigError("output directory " + out_dir.string() + " is not empty (use --force)");
    fs::remove_all(out_dir);
  }
  fs::create_directories(out_dir);

  Manifest m;
  m.root = out_dir;
  for (const auto& entry : default_layout(options.frames_per_video)) {
    if (m.patients.empty() || m.patients.back().id != entry.patient) m.patients.push_back({entry.patient, {}});
    const auto patient_no = std::stoull(entry.patient.substr(1));
    const auto video_no = std::stoull(entry.video.substr(1));

    VideoSpec spec;
    spec.seed = Rng::mix(options.seed ^ Rng::mix(0x5649444500000000ULL + video_no));
    spec.n_frames = entry.frames;
    spec.height = options.height;
    spec.width = options.width;
    spec.artifacts = options.artifacts;
    spec.style = PatientStyle::from_seed(options.seed ^ Rng::mix(0x5041544900000000ULL + patient_no));
    spec.patient_id = entry.patient;
    spec.video_id = entry.video;
    const auto video = generate_synthetic_video(spec);

    const fs::path rel = fs::path(entry.patient) / entry.video;
    fs::create_directories(out_dir / rel);
    ManifestVideo mv{entry.video, {}};
    for (const auto& f : video.frames) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "%04zu", f.index);
      const auto image = (rel / ("frame_" + std::string(stem) + ".ppm")).generic_string();
      const auto mask = (rel / ("mask_" + std::string(stem) + ".pgm")).generic_string();
      write_image(f.image, out_dir / image);
      write_mask(f.mask, out_dir / mask);
      mv.frames.push_back({image, mask, f.index});
    }
    m.patients.back().videos.push_back(std::move(mv));
  }
  for (const auto& p : m.patients) (p.id == kTestPatient ? m.test : m.train).push_back(p.id);
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace lumenseg::data
