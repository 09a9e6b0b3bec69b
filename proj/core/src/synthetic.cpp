#include <algorithm>
#include <cmath>

#include "lumenseg/data.hpp"
#include "lumenseg/error.hpp"

namespace lumenseg::data {

namespace {

constexpr double kMaxStep = 0.03;  // centroid step bound, fraction of width
constexpr double kCenterLow = 0.3;
constexpr double kCenterHigh = 0.7;

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Periodic value noise on a coarse lattice.
class ValueNoise {
 public:
  ValueNoise(Rng& rng, std::size_t cells) : cells_(cells), lattice_(cells * cells) {
    for (auto& v : lattice_) v = rng.uniform(-1.0, 1.0);
  }

  double operator()(double x, double y) const {
    const double fx = std::floor(x), fy = std::floor(y);
    const double tx = smoothstep(x - fx), ty = smoothstep(y - fy);
    const auto ix = wrap(static_cast<long>(fx)), iy = wrap(static_cast<long>(fy));
    const auto jx = (ix + 1) % cells_, jy = (iy + 1) % cells_;
    const double a = at(ix, iy), b = at(jx, iy), c = at(ix, jy), d = at(jx, jy);
    return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
  }

 private:
  std::size_t wrap(long i) const {
    const long n = static_cast<long>(cells_);
    return static_cast<std::size_t>(((i % n) + n) % n);
  }
  double at(std::size_t x, std::size_t y) const { return lattice_[y * cells_ + x]; }

  std::size_t cells_;
  std::vector<double> lattice_;
};

struct LumenState {
  double cx, cy;     // centre, fractions of width / height
  double radius;     // semi-major axis, fraction of the smaller side
  double ratio;      // minor / major
  double angle;
};

struct Spot {
  double dx, dy;  // offset from the lumen centre in pixels
  double radius;
};

// Dark crease on the wall: an arc of a circle anchored to the lumen centre.
struct Fold {
  double dx, dy, radius, width, depth;
};

struct Debris {
  double x, y, vx, vy, radius;
};

struct Blob {
  double x, y, vx, vy, radius;
  std::size_t first, last;
};

std::vector<LumenState> lumen_path(Rng& rng, std::size_t n, const PatientStyle& style) {
  std::vector<LumenState> path;
  LumenState s{rng.uniform(0.4, 0.6), rng.uniform(0.4, 0.6), style.mean_radius, rng.uniform(0.65, 0.95),
               rng.uniform(0.0, M_PI)};
  double vx = 0, vy = 0, log_r = 0;
  for (std::size_t t = 0; t < n; ++t) {
    path.push_back(s);
    vx = 0.8 * vx + 0.2 * 0.03 * rng.normal();
    vy = 0.8 * vy + 0.2 * 0.03 * rng.normal();
    const double speed = std::hypot(vx, vy);
    if (speed > kMaxStep) {
      vx *= kMaxStep / speed;
      vy *= kMaxStep / speed;
    }
    s.cx += vx;
    s.cy += vy;
    if (s.cx < kCenterLow || s.cx > kCenterHigh) {
      vx = -vx;
      s.cx = std::clamp(s.cx, kCenterLow, kCenterHigh);
    }
    if (s.cy < kCenterLow || s.cy > kCenterHigh) {
      vy = -vy;
      s.cy = std::clamp(s.cy, kCenterLow, kCenterHigh);
    }
    log_r = std::clamp(0.9 * log_r + 0.06 * rng.normal(), -0.35, 0.3);
    s.radius = std::clamp(style.mean_radius * std::exp(log_r), 0.12, 0.3);
    s.ratio = std::clamp(s.ratio + 0.02 * rng.normal(), 0.55, 1.0);
    s.angle += 0.05 * rng.normal();
  }
  return path;
}

void box_blur(std::vector<double>& img, std::size_t h, std::size_t w) {
  std::vector<double> out(img.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double s = 0;
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
            s += img[(static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)) * 3 + ch];
            ++n;
          }
        }
        out[(y * w + x) * 3 + ch] = s / n;
      }
    }
  }
  img.swap(out);
}

}  // namespace

Artifacts parse_artifacts(const std::string& s) {
  if (s == "none") return Artifacts::kNone;
  if (s == "standard") return Artifacts::kStandard;
  throw ConfigError("unknown artifact profile '" + s + "' (expected none or standard)");
}

std::string name(Artifacts a) { return a == Artifacts::kNone ? "none" : "standard"; }

PatientStyle PatientStyle::from_seed(std::uint64_t seed) {
  Rng rng(Rng::mix(seed));
  PatientStyle s;
  s.wall_color = {rng.uniform(0.75, 0.95), rng.uniform(0.35, 0.55), rng.uniform(0.3, 0.45)};
  s.texture_scale = rng.uniform(4.0, 9.0);
  s.texture_strength = rng.uniform(0.08, 0.16);
  s.lumen_darkness = rng.uniform(0.03, 0.06);
  s.mean_radius = rng.uniform(0.16, 0.24);
  return s;
}

Video generate_synthetic_video(const VideoSpec& spec) {
  if (spec.n_frames < 3) throw ConfigError("synthetic video needs at least 3 frames");
  if (spec.height < 8 || spec.width < 8) {
    throw ConfigError("synthetic frame size " + std::to_string(spec.height) + "x" + std::to_string(spec.width) +
                      " is below the 8x8 minimum");
  }
  const auto& style = spec.style;
  const std::size_t h = spec.height, w = spec.width;
  const double side = static_cast<double>(std::min(h, w));
  const bool artifacts = spec.artifacts == Artifacts::kStandard;

  Rng rng(spec.seed);
  Rng path_rng = rng.fork(1);
  Rng texture_rng = rng.fork(2);
  Rng artifact_rng = rng.fork(3);
  Rng noise_rng = rng.fork(4);

  const auto path = lumen_path(path_rng, spec.n_frames, style);
  const ValueNoise texture(texture_rng, 16);
  const double texture_cell = side / style.texture_scale;
  const double hue_phase = texture_rng.uniform(0.0, 2.0 * M_PI);

  std::vector<Spot> spots;
  std::vector<Fold> folds;
  std::vector<Debris> debris;
  std::vector<Blob> blobs;
  std::vector<bool> blurred(spec.n_frames, false);
  if (artifacts) {
    const std::size_t n_spots = 2 + artifact_rng.index(3);
    for (std::size_t i = 0; i < n_spots; ++i) {
      const double ang = artifact_rng.uniform(0.0, 2.0 * M_PI);
      const double dist = artifact_rng.uniform(0.3, 0.45) * side;
      spots.push_back({dist * std::cos(ang), dist * std::sin(ang), artifact_rng.uniform(1.0, 2.5)});
    }
    const std::size_t n_folds = 1 + artifact_rng.index(2);
    for (std::size_t i = 0; i < n_folds; ++i) {
      const double ang = artifact_rng.uniform(0.0, 2.0 * M_PI);
      const double radius = artifact_rng.uniform(0.35, 0.6) * side;
      const double dist = radius + artifact_rng.uniform(0.15, 0.3) * side;
      folds.push_back({dist * std::cos(ang), dist * std::sin(ang), radius, artifact_rng.uniform(0.8, 1.6),
                       artifact_rng.uniform(0.35, 0.55)});
    }
    const std::size_t n_debris = 3 + artifact_rng.index(6);
    for (std::size_t i = 0; i < n_debris; ++i) {
      debris.push_back({artifact_rng.uniform(0.0, static_cast<double>(w)), artifact_rng.uniform(0.0, static_cast<double>(h)),
                        artifact_rng.uniform(-2.5, 2.5), artifact_rng.uniform(-2.5, 2.5),
                        artifact_rng.uniform(0.8, 1.8)});
    }
    if (artifact_rng.uniform() < 0.5) {
      const std::size_t first = artifact_rng.index(spec.n_frames);
      const std::size_t len = 3 + artifact_rng.index(std::max<std::size_t>(spec.n_frames / 3, 1));
      blobs.push_back({artifact_rng.uniform(0.2, 0.8) * static_cast<double>(w),
                       artifact_rng.uniform(0.2, 0.8) * static_cast<double>(h), artifact_rng.uniform(-1.0, 1.0),
                       artifact_rng.uniform(-1.0, 1.0), artifact_rng.uniform(0.1, 0.2) * side, first,
                       std::min(first + len, spec.n_frames) - 1});
    }
    for (std::size_t t = 0; t < spec.n_frames; ++t) blurred[t] = artifact_rng.uniform() < 0.15;
  }

  Video video{spec.patient_id, spec.video_id, {}};
  double tex_x = 0, tex_y = 0;
  for (std::size_t t = 0; t < spec.n_frames; ++t) {
    const auto& s = path[t];
    if (t > 0) {
      tex_x += (s.cx - path[t - 1].cx) * static_cast<double>(w) / texture_cell;
      tex_y += (s.cy - path[t - 1].cy) * static_cast<double>(h) / texture_cell;
    }
    const double cx = s.cx * static_cast<double>(w), cy = s.cy * static_cast<double>(h);
    const double a = s.radius * side, b = a * s.ratio;
    const double ca = std::cos(s.angle), sa = std::sin(s.angle);
    const double drift = 0.06 * std::sin(hue_phase + 0.15 * static_cast<double>(t));
    const std::array<double, 3> wall = {style.wall_color[0] * (1 + drift), style.wall_color[1],
                                        style.wall_color[2] * (1 - drift)};

    std::vector<double> img(h * w * 3);
    std::vector<std::uint8_t> mask(h * w);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        const double dx = px - cx, dy = py - cy;
        const double u = (dx * ca + dy * sa) / a, v = (-dx * sa + dy * ca) / b;
        const double d = std::sqrt(u * u + v * v);
        const double rx = (px / static_cast<double>(w) - 0.5) * 2.0, ry = (py / static_cast<double>(h) - 0.5) * 2.0;
        const double vignette = 1.0 - 0.35 * (rx * rx + ry * ry) / 2.0;
        const std::size_t p = y * w + x;
        if (d < 1.0) {
          mask[p] = 1;
          const double dark = style.lumen_darkness * (0.5 + 0.5 * d * d) * vignette;
          img[p * 3 + 0] = dark * 1.1;
          img[p * 3 + 1] = dark * 0.95;
          img[p * 3 + 2] = dark * 0.95;
        } else {
          const double rim = 1.0 - std::exp(-(d - 1.0) / 0.6);
          const double tex =
              1.0 + style.texture_strength * texture(px / texture_cell + tex_x, py / texture_cell + tex_y);
          double shade = (0.4 + 0.6 * rim) * vignette * tex;
          for (const auto& fold : folds) {
            const double off = std::hypot(px - cx - fold.dx, py - cy - fold.dy) - fold.radius;
            shade *= 1.0 - fold.depth * std::exp(-off * off / (fold.width * fold.width));
          }
          for (std::size_t ch = 0; ch < 3; ++ch) img[p * 3 + ch] = wall[ch] * shade;
        }
      }
    }

    if (artifacts) {
      for (const auto& blob : blobs) {
        if (t < blob.first || t > blob.last) continue;
        const double bx = blob.x + blob.vx * static_cast<double>(t - blob.first);
        const double by = blob.y + blob.vy * static_cast<double>(t - blob.first);
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const double r2 = (std::pow(static_cast<double>(x) + 0.5 - bx, 2) + std::pow(static_cast<double>(y) + 0.5 - by, 2)) /
                              (blob.radius * blob.radius);
            const double alpha = 0.6 * std::exp(-r2);
            const std::array<double, 3> blood = {0.45, 0.05, 0.05};
            for (std::size_t ch = 0; ch < 3; ++ch) {
              auto& c = img[(y * w + x) * 3 + ch];
              c = (1 - alpha) * c + alpha * blood[ch];
            }
          }
        }
      }
      for (const auto& spot : spots) {
        const double sx = cx + spot.dx, sy = cy + spot.dy;
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const double r2 = (std::pow(static_cast<double>(x) + 0.5 - sx, 2) + std::pow(static_cast<double>(y) + 0.5 - sy, 2)) /
                              (spot.radius * spot.radius);
            if (r2 > 9.0) continue;
            const double g = 0.9 * std::exp(-r2);
            for (std::size_t ch = 0; ch < 3; ++ch) {
              auto& c = img[(y * w + x) * 3 + ch];
              c += (1 - c) * g;
            }
          }
        }
      }
      for (const auto& p : debris) {
        const double dx0 = std::fmod(p.x + p.vx * static_cast<double>(t), static_cast<double>(w));
        const double dy0 = std::fmod(p.y + p.vy * static_cast<double>(t), static_cast<double>(h));
        const double px = dx0 < 0 ? dx0 + static_cast<double>(w) : dx0;
        const double py = dy0 < 0 ? dy0 + static_cast<double>(h) : dy0;
        const std::array<double, 3> color = {0.8, 0.75, 0.5};
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const double r2 = (std::pow(static_cast<double>(x) + 0.5 - px, 2) + std::pow(static_cast<double>(y) + 0.5 - py, 2)) /
                              (p.radius * p.radius);
            if (r2 > 4.0) continue;
            const double alpha = 0.8 * std::exp(-r2);
            for (std::size_t ch = 0; ch < 3; ++ch) {
              auto& c = img[(y * w + x) * 3 + ch];
              c = (1 - alpha) * c + alpha * color[ch];
            }
          }
        }
      }
      if (blurred[t]) {
        box_blur(img, h, w);
        box_blur(img, h, w);
      }
      for (auto& c : img) c += 0.025 * noise_rng.normal();
    }

    std::vector<float> pixels(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
      const long q = std::lround(std::clamp(img[i], 0.0, 1.0) * 255.0);
      pixels[i] = static_cast<float>(q) / 255.0f;
    }
    video.frames.push_back(Frame{Tensor<float>({h, w, 3}, std::move(pixels)), BinaryMask(h, w, std::move(mask)),
                                 spec.patient_id, spec.video_id, t});
  }
  return video;
}

std::vector<FrameTriplet> make_triplets(const Video& video) {
  if (video.frames.empty()) throw DataError("video " + video.video_id + " has no frames");
  std::vector<FrameTriplet> out;
  const std::size_t n = video.frames.size();
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t prev = t == 0 ? 0 : t - 1;
    const std::size_t next = t + 1 == n ? n - 1 : t + 1;
    const auto& f = video.frames[t];
    out.push_back(FrameTriplet{{video.frames[prev].image, f.image, video.frames[next].image},
                               f.mask,
                               f.patient_id,
                               f.video_id,
                               f.index,
                               {prev, t, next}});
  }
  return out;
}

std::vector<Sample> to_samples(const std::vector<FrameTriplet>& triplets, bool temporal) {
  std::vector<Sample> out;
  out.reserve(triplets.size());
  for (const auto& tr : triplets) {
    Sample s{{}, tr.target, tr.patient_id, tr.video_id, tr.index};
    if (temporal) {
      const auto& shape = tr.frames[1].shape();
      std::vector<float> stacked;
      stacked.reserve(3 * tr.frames[1].size());
      for (const auto& f : tr.frames) stacked.insert(stacked.end(), f.data().begin(), f.data().end());
      s.input = Tensor<float>({3, shape[0], shape[1], shape[2]}, std::move(stacked));
    } else {
      s.input = tr.frames[1];
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace lumenseg::data
