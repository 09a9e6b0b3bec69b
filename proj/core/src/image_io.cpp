#include "lumenseg/image_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "lumenseg/error.hpp"

namespace lumenseg::data {

namespace {

struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::string payload;
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

class HeaderParser {
 public:
  HeaderParser(const std::string& bytes, const std::filesystem::path& path) : bytes_(bytes), path_(path) {}

  std::size_t number() {
    skip_space_and_comments();
    std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (value > (1u << 24)) fail("header value out of range");
      ++pos_;
    }
    if (pos_ == start) fail("malformed header");
    return value;
  }

  // Exactly one whitespace byte separates the header from the payload.
  std::size_t payload_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) fail("malformed header");
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& what) const { throw FormatError(what + ": " + path_.string()); }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 2;
};

Raster read_raster(const std::filesystem::path& path, const char* magic, std::size_t channels) {
  const auto bytes = slurp(path);
  HeaderParser parser(bytes, path);
  if (bytes.size() < 2 || bytes.compare(0, 2, magic) != 0) parser.fail(std::string("expected ") + magic + " magic");
  Raster r;
  r.width = parser.number();
  r.height = parser.number();
  const auto maxval = parser.number();
  if (r.width == 0 || r.height == 0) parser.fail("zero image extent");
  if (maxval != 255) parser.fail("unsupported maxval " + std::to_string(maxval));
  const auto start = parser.payload_start();
  const auto expected = r.width * r.height * channels;
  if (bytes.size() - start < expected) parser.fail("truncated payload");
  if (bytes.size() - start > expected) parser.fail("trailing bytes after payload");
  r.payload = bytes.substr(start);
  return r;
}

std::string header(const char* magic, std::size_t width, std::size_t height) {
  return std::string(magic) + "\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
}

}  // namespace

Tensor<float> read_image(const std::filesystem::path& path) {
  const auto r = read_raster(path, "P6", 3);
  std::vector<float> values(r.payload.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = static_cast<float>(static_cast<unsigned char>(r.payload[i])) / 255.0f;
  }
  return Tensor<float>({r.height, r.width, 3}, std::move(values));
}

void write_image(const Tensor<float>& image, const std::filesystem::path& path) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw DimensionError("write_image expects a [p,q,3] tensor, got " + to_string(image.shape()));
  }
  std::string bytes = header("P6", image.dim(1), image.dim(0));
  bytes.reserve(bytes.size() + image.size());
  for (float v : image.data()) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw NumericError("write_image: value " + std::to_string(v) + " outside [0, 1] for " + path.string());
    }
    bytes.push_back(static_cast<char>(std::lround(v * 255.0f)));
  }
  dump(path, bytes);
}

BinaryMask read_mask(const std::filesystem::path& path) {
  const auto r = read_raster(path, "P5", 1);
  std::vector<std::uint8_t> values(r.payload.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto v = static_cast<unsigned char>(r.payload[i]);
    if (v != 0 && v != 255) {
      throw FormatError("mask value " + std::to_string(v) + " at pixel " + std::to_string(i) +
                        " is not 0 or 255: " + path.string());
    }
    values[i] = v == 255 ? 1 : 0;
  }
  return BinaryMask(r.height, r.width, std::move(values));
}

void write_mask(const BinaryMask& mask, const std::filesystem::path& path) {
  std::string bytes = header("P5", mask.width(), mask.height());
  for (std::size_t i = 0; i < mask.size(); ++i) bytes.push_back(static_cast<char>(mask[i] ? 255 : 0));
  dump(path, bytes);
}

}  // namespace lumenseg::data
