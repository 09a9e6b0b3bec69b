#include <cmath>
#include <functional>
#include <optional>
#include <utility>

#include "lumenseg/data.hpp"
#include "lumenseg/error.hpp"

namespace lumenseg::data {

namespace {

using SourcePixel = std::optional<std::pair<std::size_t, std::size_t>>;

// Rebuilds input and mask on an (out_h, out_w) grid; each output pixel takes
// the source pixel named by `source`, or zero when it names none.
Sample remap(const Sample& s, std::size_t out_h, std::size_t out_w,
             const std::function<SourcePixel(std::size_t, std::size_t)>& source) {
  const auto& shape = s.input.shape();
  if (shape.size() != 3 && shape.size() != 4) {
    throw DimensionError("augmentation expects a [p,q,c] or [r,p,q,c] input, got " + to_string(shape));
  }
  const std::size_t frames = shape.size() == 4 ? shape[0] : 1;
  const std::size_t h = shape[shape.size() - 3], w = shape[shape.size() - 2], c = shape.back();
  if (s.target.height() != h || s.target.width() != w) {
    throw DimensionError("sample mask " + std::to_string(s.target.height()) + "x" + std::to_string(s.target.width()) +
                         " does not match input " + to_string(shape));
  }

  std::vector<float> pixels(frames * out_h * out_w * c, 0.0f);
  std::vector<std::uint8_t> mask(out_h * out_w, 0);
  const auto in = s.input.data();
  for (std::size_t r = 0; r < out_h; ++r) {
    for (std::size_t col = 0; col < out_w; ++col) {
      const auto src = source(r, col);
      if (!src) continue;
      const auto [sr, sc] = *src;
      mask[r * out_w + col] = s.target.at(sr, sc) ? 1 : 0;
      for (std::size_t f = 0; f < frames; ++f) {
        const float* from = &in[((f * h + sr) * w + sc) * c];
        float* to = &pixels[((f * out_h + r) * out_w + col) * c];
        std::copy(from, from + c, to);
      }
    }
  }
  Shape out_shape = shape;
  out_shape[shape.size() - 3] = out_h;
  out_shape[shape.size() - 2] = out_w;
  return Sample{Tensor<float>(std::move(out_shape), std::move(pixels)), BinaryMask(out_h, out_w, std::move(mask)),
                s.patient_id, s.video_id, s.index};
}

}  // namespace

Sample rotate90(const Sample& s, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  const std::size_t h = s.target.height(), w = s.target.width();
  switch (k) {
    case 0:
      return remap(s, h, w, [](std::size_t r, std::size_t c) -> SourcePixel { return std::pair{r, c}; });
    case 1:  // counter-clockwise
      return remap(s, w, h, [w](std::size_t r, std::size_t c) -> SourcePixel { return std::pair{c, w - 1 - r}; });
    case 2:
      return remap(s, h, w,
                   [h, w](std::size_t r, std::size_t c) -> SourcePixel { return std::pair{h - 1 - r, w - 1 - c}; });
    default:
      return remap(s, w, h, [h](std::size_t r, std::size_t c) -> SourcePixel { return std::pair{h - 1 - c, r}; });
  }
}

Sample flip_horizontal(const Sample& s) {
  const std::size_t h = s.target.height(), w = s.target.width();
  return remap(s, h, w, [w](std::size_t r, std::size_t c) -> SourcePixel { return std::pair{r, w - 1 - c}; });
}

Sample flip_vertical(const Sample& s) {
  const std::size_t h = s.target.height(), w = s.target.width();
  return remap(s, h, w, [h](std::size_t r, std::size_t c) -> SourcePixel { return std::pair{h - 1 - r, c}; });
}

Sample zoom(const Sample& s, double factor) {
  if (!(factor > 0.0)) throw ParameterError("zoom factor must be positive");
  const std::size_t h = s.target.height(), w = s.target.width();
  const double hh = static_cast<double>(h) / 2.0, hw = static_cast<double>(w) / 2.0;
  return remap(s, h, w, [=](std::size_t r, std::size_t c) -> SourcePixel {
    const double sr = std::floor((static_cast<double>(r) + 0.5 - hh) / factor + hh);
    const double sc = std::floor((static_cast<double>(c) + 0.5 - hw) / factor + hw);
    if (sr < 0 || sc < 0 || sr >= static_cast<double>(h) || sc >= static_cast<double>(w)) return std::nullopt;
    return std::pair{static_cast<std::size_t>(sr), static_cast<std::size_t>(sc)};
  });
}

Augmented augment(const Sample& s, Rng& rng) {
  Augmented out;
  if (s.target.height() == s.target.width()) {
    for (int k = 1; k <= 3; ++k) out.samples.push_back(rotate90(s, k));
  }
  out.samples.push_back(flip_horizontal(s));
  out.samples.push_back(flip_vertical(s));
  out.zoom_factor = rng.uniform(kZoomLow, kZoomHigh);
  out.samples.push_back(zoom(s, out.zoom_factor));
  return out;
}

AugmentedSet augment_all(std::span<const Sample> samples, std::uint64_t seed) {
  Rng rng(seed);
  AugmentedSet out;
  out.samples.assign(samples.begin(), samples.end());
  for (const auto& s : samples) {
    auto a = augment(s, rng);
    out.zoom_factors.push_back(a.zoom_factor);
    for (auto& t : a.samples) out.samples.push_back(std::move(t));
  }
  return out;
}

}  // namespace lumenseg::data
