#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "lumenseg/dataset.hpp"
#include "lumenseg/error.hpp"
#include "lumenseg/image_io.hpp"
#include "lumenseg/metrics.hpp"
#include "support/temp_dir.hpp"

namespace data = lumenseg::data;
namespace fs = std::filesystem;
using lumenseg::BinaryMask;
using lumenseg::Rng;
using lumenseg::Shape;
using lumenseg::Tensor;

namespace {

data::Video make_video(std::uint64_t seed, std::size_t n, data::Artifacts a, std::size_t size = 48) {
  data::VideoSpec spec;
  spec.seed = seed;
  spec.n_frames = n;
  spec.height = size;
  spec.width = size;
  spec.artifacts = a;
  spec.style = data::PatientStyle::from_seed(seed + 100);
  return data::generate_synthetic_video(spec);
}

bool same_values(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

bool same_sample(const data::Sample& a, const data::Sample& b) {
  return same_values(a.input, b.input) && a.target == b.target;
}

std::pair<double, double> centroid(const BinaryMask& m) {
  double sx = 0, sy = 0, n = 0;
  for (std::size_t r = 0; r < m.height(); ++r)
    for (std::size_t c = 0; c < m.width(); ++c)
      if (m.at(r, c)) {
        sx += static_cast<double>(c);
        sy += static_cast<double>(r);
        n += 1;
      }
  return {sx / n, sy / n};
}

std::vector<double> luminance(const Tensor<float>& image) {
  std::vector<double> out(image.dim(0) * image.dim(1));
  for (std::size_t p = 0; p < out.size(); ++p) {
    out[p] = (image[p * 3] + image[p * 3 + 1] + image[p * 3 + 2]) / 3.0;
  }
  return out;
}

// The clean profile renders lumen pixels far darker than any wall pixel, so
// the mask can be recovered from the image alone.
BinaryMask dark_region(const Tensor<float>& image) {
  const auto lum = luminance(image);
  std::vector<std::uint8_t> v(lum.size());
  for (std::size_t i = 0; i < lum.size(); ++i) v[i] = lum[i] < 0.075 ? 1 : 0;
  return BinaryMask(image.dim(0), image.dim(1), std::move(v));
}

data::Sample as_sample(const data::Frame& f) { return {f.image, f.mask, f.patient_id, f.video_id, f.index}; }

}  // namespace

TEST_CASE("synthetic video generation") {
  SUBCASE("same seed gives bit-identical video") {
    const auto a = make_video(42, 6, data::Artifacts::kStandard);
    const auto b = make_video(42, 6, data::Artifacts::kStandard);
    REQUIRE(a.frames.size() == 6);
    for (std::size_t t = 0; t < 6; ++t) {
      CHECK(same_values(a.frames[t].image, b.frames[t].image));
      CHECK(a.frames[t].mask == b.frames[t].mask);
    }
    const auto c = make_video(43, 6, data::Artifacts::kStandard);
    CHECK_FALSE(same_values(a.frames[0].image, c.frames[0].image));
  }
  SUBCASE("values are 8-bit levels in [0, 1]") {
    const auto v = make_video(1, 3, data::Artifacts::kStandard);
    for (float x : v.frames[1].image.data()) {
      CHECK(x >= 0.0f);
      CHECK(x <= 1.0f);
      CHECK(static_cast<float>(std::lround(x * 255.0f)) / 255.0f == x);
    }
  }
  SUBCASE("lumen centroid moves less than 5% of the width per frame") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto v = make_video(seed, 40, data::Artifacts::kStandard, 64);
      for (std::size_t t = 1; t < v.frames.size(); ++t) {
        const auto [x0, y0] = centroid(v.frames[t - 1].mask);
        const auto [x1, y1] = centroid(v.frames[t].mask);
        CHECK(std::hypot(x1 - x0, y1 - y0) < 0.05 * 64);
      }
    }
  }
  SUBCASE("clean profile: darkest 1% of pixels lie inside the mask") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto v = make_video(seed, 10, data::Artifacts::kNone, 64);
      for (const auto& f : v.frames) {
        const auto lum = luminance(f.image);
        std::vector<std::size_t> order(lum.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return lum[a] < lum[b]; });
        const std::size_t darkest = lum.size() / 100;
        for (std::size_t i = 0; i < darkest; ++i) CHECK(f.mask[order[i]]);
        CHECK(dark_region(f.image) == f.mask);
      }
    }
  }
  SUBCASE("invalid requests") {
    data::VideoSpec spec;
    spec.n_frames = 2;
    CHECK_THROWS_AS(data::generate_synthetic_video(spec), lumenseg::ConfigError);
    spec.n_frames = 3;
    spec.height = 4;
    CHECK_THROWS_AS(data::generate_synthetic_video(spec), lumenseg::ConfigError);
    CHECK_THROWS_AS(data::parse_artifacts("heavy"), lumenseg::ConfigError);
  }
}

TEST_CASE("triplet assembly") {
  const auto v = make_video(5, 5, data::Artifacts::kStandard, 16);
  const auto triplets = data::make_triplets(v);
  REQUIRE(triplets.size() == 5);
  CHECK(triplets[0].source_indices == std::array<std::size_t, 3>{0, 0, 1});
  CHECK(triplets[2].source_indices == std::array<std::size_t, 3>{1, 2, 3});
  CHECK(triplets[4].source_indices == std::array<std::size_t, 3>{3, 4, 4});
  for (const auto& t : triplets) {
    CHECK(t.video_id == v.video_id);
    CHECK(t.target == v.frames[t.index].mask);
    for (std::size_t k = 0; k < 3; ++k) CHECK(same_values(t.frames[k], v.frames[t.source_indices[k]].image));
  }

  data::Video single{"P1", "V1", {v.frames[0]}};
  const auto one = data::make_triplets(single);
  REQUIRE(one.size() == 1);
  CHECK(one[0].source_indices == std::array<std::size_t, 3>{0, 0, 0});

  data::Video empty{"P1", "V1", {}};
  CHECK_THROWS_AS(data::make_triplets(empty), lumenseg::DataError);

  const auto core = data::to_samples(triplets, false);
  const auto temporal = data::to_samples(triplets, true);
  CHECK(core[0].input.shape() == Shape{16, 16, 3});
  CHECK(temporal[0].input.shape() == Shape{3, 16, 16, 3});
  CHECK(same_values(core[3].input, v.frames[3].image));
}

TEST_CASE("augmentation group properties") {
  const auto v = make_video(9, 4, data::Artifacts::kStandard, 24);
  const auto core = data::to_samples(data::make_triplets(v), false);
  const auto temporal = data::to_samples(data::make_triplets(v), true);
  for (const auto* s : {&core[1], &temporal[1]}) {
    auto r = *s;
    for (int i = 0; i < 4; ++i) r = data::rotate90(r, 1);
    CHECK(same_sample(r, *s));
    CHECK(same_sample(data::rotate90(data::rotate90(*s, 1), 3), *s));
    CHECK(same_sample(data::flip_horizontal(data::flip_horizontal(*s)), *s));
    CHECK(same_sample(data::flip_vertical(data::flip_vertical(*s)), *s));
    CHECK(same_sample(data::zoom(*s, 1.0), *s));
    CHECK(same_sample(data::rotate90(*s, 2), data::flip_vertical(data::flip_horizontal(*s))));
  }

  SUBCASE("rotation direction on a tiny fixture") {
    // 2x3 single-channel-per-pixel layout encoded in channel 0
    std::vector<float> px(2 * 3 * 3, 0.0f);
    for (std::size_t p = 0; p < 6; ++p) px[p * 3] = static_cast<float>(p + 1) / 10.0f;
    data::Sample s{Tensor<float>({2, 3, 3}, px), BinaryMask(2, 3, std::vector<std::uint8_t>{1, 0, 0, 0, 0, 0}), "", "", 0};
    const auto r = data::rotate90(s, 1);
    REQUIRE(r.input.shape() == Shape{3, 2, 3});
    // counter-clockwise: top row becomes [3, 6], bottom row [1, 4]
    CHECK(r.input[0] == doctest::Approx(0.3f));
    CHECK(r.input[3] == doctest::Approx(0.6f));
    CHECK(r.input[12] == doctest::Approx(0.1f));
    CHECK(r.target.at(2, 0));
  }

  SUBCASE("temporal frames are transformed jointly") {
    const auto& s = temporal[2];
    const auto t = data::flip_horizontal(data::rotate90(s, 1));
    for (std::size_t f = 0; f < 3; ++f) {
      const auto& shape = s.input.shape();
      const std::size_t frame_size = shape[1] * shape[2] * shape[3];
      std::vector<float> one(s.input.data().begin() + f * frame_size, s.input.data().begin() + (f + 1) * frame_size);
      data::Sample single{Tensor<float>({shape[1], shape[2], shape[3]}, one), s.target, "", "", 0};
      const auto expected = data::flip_horizontal(data::rotate90(single, 1));
      CHECK(std::equal(expected.input.data().begin(), expected.input.data().end(),
                       t.input.data().begin() + f * frame_size));
      CHECK(expected.target == t.target);
    }
  }

  SUBCASE("augment emits rotations, flips and one bounded zoom") {
    Rng rng(17);
    const auto out = data::augment(core[0], rng);
    CHECK(out.samples.size() == 6);
    for (int i = 0; i < 1000; ++i) {
      const auto a = data::augment(core[0], rng);
      CHECK(a.zoom_factor >= data::kZoomLow);
      CHECK(a.zoom_factor <= data::kZoomHigh);
    }
    data::Sample wide{Tensor<float>({4, 6, 3}, 0.5f), BinaryMask(4, 6), "", "", 0};
    CHECK(data::augment(wide, rng).samples.size() == 3);
  }

  SUBCASE("zoom out pads image and mask with zeros") {
    data::Sample full{Tensor<float>({50, 50, 3}, 1.0f), BinaryMask(50, 50, true), "", "", 0};
    const auto z = data::zoom(full, 0.9);
    CHECK(z.target.at(0, 0) == false);
    CHECK(z.input[0] == 0.0f);
    CHECK(z.target.at(25, 25));
    for (std::size_t p = 0; p < z.target.size(); ++p) CHECK((z.input[p * 3] == 1.0f) == z.target[p]);
  }
}

TEST_CASE("augmentation keeps masks aligned with image content") {
  const auto v = make_video(21, 3, data::Artifacts::kNone, 64);
  const auto s = as_sample(v.frames[1]);
  std::vector<data::Sample> transformed = {data::rotate90(s, 1), data::rotate90(s, 2), data::rotate90(s, 3),
                                           data::flip_horizontal(s), data::flip_vertical(s), data::zoom(s, 1.02)};
  for (const auto& t : transformed) {
    const auto c = lumenseg::metrics::confusion(t.target, dark_region(t.input));
    CHECK(lumenseg::metrics::dsc(c) == 1.0);
  }
}

TEST_CASE("PPM and PGM raster I/O") {
  testing::TempDir dir;
  SUBCASE("random image round trip is byte-identical") {
    Rng rng(4);
    std::vector<float> px(7 * 5 * 3);
    for (auto& x : px) x = static_cast<float>(rng.index(256)) / 255.0f;
    const Tensor<float> img({7, 5, 3}, px);
    data::write_image(img, dir / "a.ppm");
    const auto back = data::read_image(dir / "a.ppm");
    CHECK(same_values(back, img));
    data::write_image(back, dir / "b.ppm");
    CHECK(testing::read_bytes(dir / "a.ppm") == testing::read_bytes(dir / "b.ppm"));
  }
  SUBCASE("hand-built 2x2 P6 fixture with a comment") {
    std::string bytes = "P6\n# fixture\n2 2\n255\n";
    for (unsigned char b : {0, 51, 255, 102, 153, 204, 255, 0, 0, 10, 20, 30}) bytes.push_back(static_cast<char>(b));
    testing::write_bytes(dir / "f.ppm", bytes);
    const auto img = data::read_image(dir / "f.ppm");
    REQUIRE(img.shape() == Shape{2, 2, 3});
    CHECK(img[1] == 0.2f);
    CHECK(img[2] == 1.0f);
    CHECK(img[3] == 0.4f);
    CHECK(img[6] == 1.0f);
    CHECK(img[11] == 30.0f / 255.0f);
  }
  SUBCASE("mask round trip and value check") {
    const BinaryMask m(3, 2, std::vector<std::uint8_t>{1, 0, 0, 1, 1, 1});
    data::write_mask(m, dir / "m.pgm");
    CHECK(data::read_mask(dir / "m.pgm") == m);
    std::string bytes = "P5\n2 1\n255\n";
    bytes.push_back(0);
    bytes.push_back(static_cast<char>(128));
    testing::write_bytes(dir / "bad.pgm", bytes);
    CHECK_THROWS_AS(data::read_mask(dir / "bad.pgm"), lumenseg::FormatError);
  }
  SUBCASE("malformed files") {
    testing::write_bytes(dir / "t.ppm", "P6\n2 2\n255\n" + std::string(5, 'x'));
    CHECK_THROWS_AS(data::read_image(dir / "t.ppm"), lumenseg::FormatError);
    testing::write_bytes(dir / "magic.ppm", "P3\n1 1\n255\n" + std::string(3, 'x'));
    CHECK_THROWS_AS(data::read_image(dir / "magic.ppm"), lumenseg::FormatError);
    testing::write_bytes(dir / "deep.ppm", "P6\n1 1\n65535\n" + std::string(6, 'x'));
    CHECK_THROWS_AS(data::read_image(dir / "deep.ppm"), lumenseg::FormatError);
    testing::write_bytes(dir / "hdr.ppm", "P6\n1\n");
    CHECK_THROWS_AS(data::read_image(dir / "hdr.ppm"), lumenseg::FormatError);
    CHECK_THROWS_AS(data::read_image(dir / "missing.ppm"), lumenseg::DataError);
    CHECK_THROWS_AS(data::write_image(Tensor<float>({1, 1, 3}, 1.5f), dir / "x.ppm"), lumenseg::NumericError);
  }
}

TEST_CASE("dataset layout and manifest") {
  SUBCASE("default layout mirrors the eleven-video collection") {
    const auto layout = data::default_layout();
    REQUIRE(layout.size() == 11);
    std::set<std::string> patients;
    std::size_t lo = 1000, hi = 0;
    for (const auto& e : layout) {
      patients.insert(e.patient);
      lo = std::min(lo, e.frames);
      hi = std::max(hi, e.frames);
    }
    CHECK(patients.size() == 6);
    CHECK(lo == 40);
    CHECK(hi == 60);
    CHECK(std::count_if(layout.begin(), layout.end(), [](auto& e) { return e.patient == "P6"; }) == 4);
    for (const auto& e : data::default_layout(3)) CHECK(e.frames == 3);
  }

  testing::TempDir dir;
  data::DatasetOptions opt;
  opt.seed = 3;
  opt.height = opt.width = 16;
  opt.frames_per_video = 3;
  const auto m = data::generate_dataset(dir / "ds", opt);

  SUBCASE("generated tree") {
    CHECK(m.patients.size() == 6);
    std::size_t videos = 0;
    for (const auto& p : m.patients) videos += p.videos.size();
    CHECK(videos == 11);
    CHECK(m.test == std::vector<std::string>{"P5"});
    CHECK(m.train.size() == 5);

    const auto loaded = data::load_manifest(dir / "ds" / "manifest.json");
    CHECK(loaded.patient_ids() == m.patient_ids());
    const auto vids = data::load_videos(loaded, {"P6"});
    CHECK(vids.size() == 4);
    CHECK(vids[0].frames.size() == 3);
    CHECK(vids[0].frames[0].image.shape() == Shape{16, 16, 3});
  }
  SUBCASE("same seed reproduces every file") {
    data::generate_dataset(dir / "again", opt);
    for (const auto& entry : fs::recursive_directory_iterator(dir / "ds")) {
      if (!entry.is_regular_file()) continue;
      const auto rel = fs::relative(entry.path(), dir / "ds");
      CHECK(testing::read_bytes(entry.path()) == testing::read_bytes(dir / "again" / rel));
    }
  }
  SUBCASE("refuses a non-empty directory without force") {
    CHECK_THROWS_AS(data::generate_dataset(dir / "ds", opt), lumenseg::ConfigError);
    opt.force = true;
    CHECK_NOTHROW(data::generate_dataset(dir / "ds", opt));
  }
  SUBCASE("validation failures") {
    auto bad = m;
    bad.test.push_back("P1");
    CHECK_THROWS_AS(data::validate(bad), lumenseg::DataError);
    bad = m;
    bad.patients[0].videos[0].frames[1].index = 5;
    CHECK_THROWS_AS(data::validate(bad), lumenseg::FormatError);
    bad = m;
    fs::remove(dir / "ds" / bad.patients[0].videos[0].frames[0].mask);
    CHECK_THROWS_AS(data::validate(bad), lumenseg::DataError);
    testing::write_bytes(dir / "broken.json", "{\"patients\": 3}");
    CHECK_THROWS_AS(data::load_manifest(dir / "broken.json"), lumenseg::FormatError);
  }
}
