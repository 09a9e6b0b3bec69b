#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace lumenseg {

// Per-pixel lumen probability, row-major, values clamped to [0, 1].
class ProbabilityMap {
 public:
  ProbabilityMap() = default;
  ProbabilityMap(std::size_t height, std::size_t width, std::vector<double> values);
  ProbabilityMap(std::size_t height, std::size_t width, double fill = 0.0);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return values_.size(); }
  const std::vector<double>& values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double at(std::size_t row, std::size_t col) const { return values_[row * width_ + col]; }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> values_;
};

// Strictly binary mask, row-major; 1 marks lumen.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> values);
  BinaryMask(std::size_t height, std::size_t width, bool fill = false);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return values_.size(); }
  const std::vector<std::uint8_t>& values() const { return values_; }
  bool operator[](std::size_t i) const { return values_[i] != 0; }
  bool at(std::size_t row, std::size_t col) const { return values_[row * width_ + col] != 0; }
  void set(std::size_t row, std::size_t col, bool v) { values_[row * width_ + col] = v ? 1 : 0; }
  std::size_t count() const;

  bool operator==(const BinaryMask&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> values_;
};

}  // namespace lumenseg
