#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lumenseg/tensor.hpp"

namespace lumenseg {

struct GradCheckOptions {
  double step = 1e-5;
  // Per-element errors are divided by max(|analytic|, |numeric|, floor).
  double floor = 1e-6;
  // 0 checks every coordinate; otherwise a seeded sample of this many
  // coordinates per tensor. Coordinates whose +-step evaluations take another
  // relu/maxpool/dice branch than the unperturbed one are skipped, and a
  // sample draws a replacement.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;  // finite difference straddled a branch point
  bool covered = true;             // every tensor had a checkable coordinate
  double tolerance = 0.0;
  bool passed = false;
};

// Compares reverse-mode gradients of `fn` w.r.t. each tensor in `wrt` against
// central finite differences. `fn` must recompute its output from the current
// contents of `wrt`; non-scalar outputs are reduced to a scalar by a fixed
// pseudo-random weighted sum. A tensor with no checkable coordinate fails the
// report. Never throws on mismatch: the report carries the verdict.
GradCheckReport gradcheck(const std::string& name, const std::function<Tensor<double>()>& fn,
                          std::vector<Tensor<double>> wrt, double tolerance, const GradCheckOptions& options = {});

}  // namespace lumenseg

namespace lumenseg {

struct GradCheckSuiteOptions {
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  bool include_models = true;
  std::size_t model_size = 16;         // spatial extent of the model checks
  std::size_t model_coords = 3;        // sampled coordinates per parameter tensor
};

// Checks every differentiable op on randomized inputs, then full m1 and M1
// forward passes followed by the Dice loss (training mode, batch of 2). A
// model draw that leaves some tensor without a checkable coordinate is
// replaced by a fresh draw, at most three times.
std::vector<GradCheckReport> gradcheck_suite(const GradCheckSuiteOptions& options = {});

}  // namespace lumenseg
