#include <doctest.h>

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <map>

#include "lumenseg/error.hpp"
#include "lumenseg/metrics.hpp"
#include "lumenseg/random.hpp"
#include "support/oracles.hpp"

using lumenseg::BinaryMask;
using lumenseg::ProbabilityMap;
using lumenseg::Rng;
namespace metrics = lumenseg::metrics;

namespace {

BinaryMask mask_from_bits(unsigned bits, std::size_t h, std::size_t w) {
  std::vector<std::uint8_t> v(h * w);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (bits >> i) & 1u;
  return BinaryMask(h, w, std::move(v));
}

std::vector<int> as_ints(const BinaryMask& m) { return {m.values().begin(), m.values().end()}; }

ProbabilityMap random_map(Rng& rng, std::size_t h, std::size_t w) {
  std::vector<double> v(h * w);
  for (auto& x : v) x = rng.uniform();
  return ProbabilityMap(h, w, std::move(v));
}

BinaryMask random_mask(Rng& rng, std::size_t h, std::size_t w, double density) {
  std::vector<std::uint8_t> v(h * w);
  for (auto& x : v) x = rng.uniform() < density ? 1 : 0;
  return BinaryMask(h, w, std::move(v));
}

}  // namespace

TEST_CASE("probability maps clamp and masks reject non-binary values") {
  ProbabilityMap m(1, 3, std::vector<double>{-0.5, 0.3, 1.7});
  CHECK(m[0] == 0.0);
  CHECK(m[1] == 0.3);
  CHECK(m[2] == 1.0);
  CHECK_THROWS_AS(ProbabilityMap(2, 2, std::vector<double>{0.1}), lumenseg::DimensionError);
  CHECK_THROWS_AS(BinaryMask(1, 2, std::vector<std::uint8_t>{0, 2}), lumenseg::FormatError);
}

TEST_CASE("ensemble average") {
  SUBCASE("four-member arithmetic") {
    std::vector<ProbabilityMap> maps = {ProbabilityMap(1, 1, 0.2), ProbabilityMap(1, 1, 0.4),
                                        ProbabilityMap(1, 1, 0.6), ProbabilityMap(1, 1, 0.8)};
    CHECK(metrics::ensemble_average(maps)[0] == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("single member is identity") {
    Rng rng(3);
    std::vector<ProbabilityMap> maps = {random_map(rng, 4, 5)};
    CHECK(metrics::ensemble_average(maps).values() == maps[0].values());
  }
  SUBCASE("errors") {
    std::vector<ProbabilityMap> none;
    CHECK_THROWS_AS(metrics::ensemble_average(none), lumenseg::ConfigError);
    std::vector<ProbabilityMap> mixed = {ProbabilityMap(2, 2), ProbabilityMap(2, 3)};
    CHECK_THROWS_AS(metrics::ensemble_average(mixed), lumenseg::DimensionError);
  }
  SUBCASE("random maps against a scalar loop") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t k = 1 + rng.index(5);
      std::vector<ProbabilityMap> maps;
      for (std::size_t i = 0; i < k; ++i) maps.push_back(random_map(rng, 6, 7));
      const auto avg = metrics::ensemble_average(maps);
      for (std::size_t p = 0; p < avg.size(); ++p) {
        double s = 0;
        for (const auto& m : maps) s += m[p];
        CHECK(std::abs(avg[p] - s / static_cast<double>(k)) < 1e-12);
      }
    }
  }
}

TEST_CASE("binarize") {
  ProbabilityMap m(1, 4, std::vector<double>{0.0, 0.4999999, 0.5, 0.9});
  const auto b = metrics::binarize(m, 0.5);
  CHECK(as_ints(b) == std::vector<int>{0, 0, 1, 1});
  CHECK(metrics::binarize(ProbabilityMap(3, 3, 0.0)).count() == 0);
  CHECK_THROWS_AS(metrics::binarize(m, 0.0), lumenseg::ParameterError);
  CHECK_THROWS_AS(metrics::binarize(m, 1.0), lumenseg::ParameterError);

  Rng rng(5);
  const auto r = random_map(rng, 16, 16);
  std::size_t previous = r.size() + 1;
  for (double t = 0.05; t < 1.0; t += 0.05) {
    const auto n = metrics::binarize(r, t).count();
    CHECK(n <= previous);
    previous = n;
  }
}

TEST_CASE("confusion and scores on hand cases") {
  const BinaryMask truth(2, 2, std::vector<std::uint8_t>{1, 1, 0, 0});
  auto c = metrics::confusion(truth, truth);
  CHECK(c.fp == 0);
  CHECK(c.fn == 0);
  const BinaryMask inverse(2, 2, std::vector<std::uint8_t>{0, 0, 1, 1});
  c = metrics::confusion(inverse, truth);
  CHECK(c.tp == 0);
  CHECK(c.tn == 0);

  metrics::ConfusionCounts counts{2, 1, 1, 0};
  CHECK(metrics::precision(counts) == doctest::Approx(2.0 / 3.0));
  CHECK(metrics::recall(counts) == doctest::Approx(2.0 / 3.0));
  CHECK(metrics::dsc(counts) == doctest::Approx(2.0 / 3.0));

  metrics::ConfusionCounts empty{0, 0, 0, 9};
  CHECK(metrics::dsc(empty) == 1.0);
  CHECK(metrics::precision(empty) == 1.0);
  CHECK(metrics::recall(empty) == 1.0);

  metrics::ConfusionCounts missed{0, 0, 3, 6};
  CHECK(metrics::dsc(missed) == 0.0);
  CHECK(metrics::precision(missed) == 0.0);
  CHECK(metrics::recall(missed) == 0.0);

  CHECK_THROWS_AS(metrics::confusion(BinaryMask(2, 2), BinaryMask(2, 3)), lumenseg::DimensionError);
}

TEST_CASE("exhaustive 2x2 enumeration matches the scalar oracle exactly") {
  for (unsigned p = 0; p < 16; ++p) {
    for (unsigned t = 0; t < 16; ++t) {
      const auto pred = mask_from_bits(p, 2, 2), truth = mask_from_bits(t, 2, 2);
      const auto c = metrics::confusion(pred, truth);
      const auto o = oracle::count(as_ints(pred), as_ints(truth));
      CHECK(static_cast<long>(c.tp) == o.tp);
      CHECK(static_cast<long>(c.fp) == o.fp);
      CHECK(static_cast<long>(c.fn) == o.fn);
      CHECK(static_cast<long>(c.tn) == o.tn);
      CHECK(c.total() == 4);
      CHECK(metrics::dsc(c) == oracle::dsc(o));
      CHECK(metrics::precision(c) == oracle::precision(o));
      CHECK(metrics::recall(c) == oracle::recall(o));

      const auto swapped = metrics::confusion(truth, pred);
      CHECK(metrics::dsc(swapped) == metrics::dsc(c));
      CHECK(metrics::precision(c) == metrics::recall(swapped));
    }
  }
}

TEST_CASE("random 32x32 pairs match the scalar oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const double density = rng.uniform(0.0, 1.0);
    const auto pred = random_mask(rng, 32, 32, density), truth = random_mask(rng, 32, 32, rng.uniform());
    const auto c = metrics::confusion(pred, truth);
    const auto o = oracle::count(as_ints(pred), as_ints(truth));
    CHECK(std::abs(metrics::dsc(c) - oracle::dsc(o)) < 1e-9);
    CHECK(std::abs(metrics::precision(c) - oracle::precision(o)) < 1e-9);
    CHECK(std::abs(metrics::recall(c) - oracle::recall(o)) < 1e-9);
  }
}

TEST_CASE("subset evaluation and ablation table") {
  Rng rng(8);
  const std::size_t frames = 6;
  std::vector<BinaryMask> truth;
  for (std::size_t f = 0; f < frames; ++f) truth.push_back(random_mask(rng, 8, 8, 0.4));
  std::map<std::string, std::vector<ProbabilityMap>> preds;
  for (const char* name : {"m1", "m2", "M1", "M2"}) {
    for (std::size_t f = 0; f < frames; ++f) preds[name].push_back(random_map(rng, 8, 8));
  }
  auto lookup = [&](const std::string& n) -> const std::vector<ProbabilityMap>* {
    auto it = preds.find(n);
    return it == preds.end() ? nullptr : &it->second;
  };

  SUBCASE("singleton subset equals the model's own metrics") {
    const auto r = metrics::evaluate_subset({"m1"}, {preds["m1"]}, truth);
    CHECK(r.label == "(m1)");
    for (std::size_t f = 0; f < frames; ++f) {
      const auto c = metrics::confusion(metrics::binarize(preds["m1"][f]), truth[f]);
      CHECK(r.per_frame[f].dsc == metrics::dsc(c));
      CHECK(r.per_frame[f].precision == metrics::precision(c));
      CHECK(r.per_frame[f].recall == metrics::recall(c));
    }
  }
  SUBCASE("five rows in reporting order") {
    const auto rows = metrics::ablation_eval(lookup, truth);
    REQUIRE(rows.size() == 5);
    CHECK(rows[0].label == "(m1,m2)");
    CHECK(rows[1].label == "(M1,M2)");
    CHECK(rows[2].label == "(M1,m1)");
    CHECK(rows[3].label == "(M2,m2)");
    CHECK(rows[4].label == "(m1,m2,M1,M2)");
    for (const auto& r : rows) CHECK(r.per_frame.size() == frames);
  }
  SUBCASE("missing member is a config error") {
    preds.erase("M2");
    CHECK_THROWS_AS(metrics::ablation_eval(lookup, truth), lumenseg::ConfigError);
  }
}

TEST_CASE("kruskal-wallis fixtures") {
  const auto r = metrics::kruskal_wallis({{1, 2, 3}, {4, 5, 6}});
  CHECK(std::abs(r.h - 27.0 / 7.0) < 1e-12);
  CHECK(r.dof == 1);
  CHECK(std::abs(r.p_value - 0.049534613435626915) < 1e-10);

  const auto same = metrics::kruskal_wallis({{0.3, 0.7, 0.5}, {0.3, 0.7, 0.5}});
  CHECK(std::abs(same.h) < 1e-12);

  const auto flat = metrics::kruskal_wallis({{2, 2}, {2, 2, 2}});
  CHECK(flat.h == 0.0);
  CHECK(flat.p_value == 1.0);

  const auto tied = metrics::kruskal_wallis({{1, 1, 2}, {1, 2, 2}});
  CHECK(std::abs(tied.h - oracle::kruskal_h({{1, 1, 2}, {1, 2, 2}})) < 1e-9);
  CHECK(std::abs(tied.h - 0.5555555555555536) < 1e-9);
  CHECK(std::abs(tied.p_value - 0.4560565402502569) < 1e-10);

  const auto three = metrics::kruskal_wallis({{0.1, 0.5, 0.5, 0.9}, {0.2, 0.5, 0.7}, {0.3, 0.3, 0.95, 0.99, 0.4}});
  CHECK(std::abs(three.h - 0.17615658362989714) < 1e-9);
  CHECK(std::abs(three.p_value - 0.9156891829487825) < 1e-10);

  CHECK_THROWS_AS(metrics::kruskal_wallis({{1, 2}}), lumenseg::ParameterError);
  CHECK_THROWS_AS(metrics::kruskal_wallis({{1, 2}, {}}), lumenseg::ParameterError);
}

TEST_CASE("kruskal-wallis randomized with ties against the variance-of-ranks oracle") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t g = 2 + rng.index(4);
    std::vector<std::vector<double>> groups(g);
    for (auto& grp : groups) {
      const std::size_t n = 1 + rng.index(12);
      for (std::size_t i = 0; i < n; ++i) grp.push_back(static_cast<double>(rng.index(6)) / 5.0);
    }
    const auto r = metrics::kruskal_wallis(groups);
    CHECK(std::abs(r.h - oracle::kruskal_h(groups)) < 1e-9);
    if (r.h > 0) {
      const double p = boost::math::gamma_q(static_cast<double>(g - 1) / 2.0, r.h / 2.0);
      CHECK(std::abs(r.p_value - p) < 1e-10);
    }

    auto transformed = groups;
    for (auto& grp : transformed)
      for (auto& v : grp) v = std::exp(3.0 * v) - 7.0;
    CHECK(std::abs(metrics::kruskal_wallis(transformed).h - r.h) < 1e-9);
  }
}

TEST_CASE("chi-squared survival against reference values") {
  CHECK(std::abs(metrics::chi_squared_sf(3.5, 1) - 0.0613688291394023) < 1e-12);
  CHECK(std::abs(metrics::chi_squared_sf(40.0, 3) - 1.065509033425585e-08) < 1e-16);
  CHECK(std::abs(metrics::chi_squared_sf(0.01, 4) - 0.9999875415886458) < 1e-12);
  for (double a : {0.5, 1.0, 2.5, 7.0, 20.0}) {
    for (double x : {0.01, 0.3, 1.0, 4.0, 12.0, 45.0}) {
      CHECK(std::abs(metrics::regularized_gamma_q(a, x) - boost::math::gamma_q(a, x)) < 1e-10);
    }
  }
}

TEST_CASE("timing summary") {
  const std::vector<double> samples = {10, 12, 14};
  const auto t = metrics::summarize_timings(samples);
  CHECK(t.frames == 3);
  CHECK(t.mean_ms == doctest::Approx(12.0));
  CHECK(t.std_ms == doctest::Approx(2.0));
}
