#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <utility>

#include "lumenseg/error.hpp"
#include "lumenseg/models.hpp"

namespace lumenseg::models {

namespace {

constexpr char kMagic[4] = {'L', 'S', 'E', 'G'};
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::size_t kConfigFields = 8;

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  void flush(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open weight file for writing: " + path.string());
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw DataError("failed writing weight file: " + path.string());
  }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open weight file: " + path.string());
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("weight file truncated: " + path_.string());
  }

  std::filesystem::path path_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

struct Entry {
  std::string name;
  Shape shape;
};

void write_config(Writer& w, const ModelConfig& c) {
  const std::size_t fields[kConfigFields] = {static_cast<std::size_t>(c.variant), c.height, c.width, c.channels,
                                             c.temporal_depth, c.temporal_kernels, c.base_width, c.depth};
  for (auto f : fields) w.u32(static_cast<std::uint32_t>(f));
}

ModelConfig read_header(Reader& r, const std::filesystem::path& path) {
  if (r.raw(4) != std::string(kMagic, 4)) throw FormatError("not an LSEG weight file: " + path.string());
  const auto version = r.u32();
  if (version != kWeightFormatVersion) {
    throw FormatError("unsupported weight format version " + std::to_string(version) + " in " + path.string());
  }
  std::uint32_t f[kConfigFields];
  for (auto& v : f) v = r.u32();
  if (f[0] > static_cast<std::uint32_t>(Variant::kTemporalLiteSegNet)) {
    throw FormatError("unknown variant id " + std::to_string(f[0]) + " in " + path.string());
  }
  ModelConfig c;
  c.variant = static_cast<Variant>(f[0]);
  c.height = f[1];
  c.width = f[2];
  c.channels = f[3];
  c.temporal_depth = f[4];
  c.temporal_kernels = f[5];
  c.base_width = f[6];
  c.depth = f[7];
  return c;
}

std::vector<Entry> read_manifest(Reader& r) {
  const auto count = r.u32();
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.raw(r.u32());
    if (r.u8() != kDtypeF32) throw FormatError("weight entry '" + e.name + "' has unsupported dtype");
    const auto rank = r.u32();
    for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(r.u32());
    entries.push_back(std::move(e));
  }
  return entries;
}

template <typename T>
std::vector<const NamedTensor<T>*> layout(const Model<T>& model) {
  std::vector<const NamedTensor<T>*> out;
  for (const auto& p : model.parameters()) out.push_back(&p);
  for (const auto& b : model.buffers()) out.push_back(&b);
  return out;
}

}  // namespace

template <typename T>
void save_weights(const Model<T>& model, const std::filesystem::path& path) {
  Writer w;
  w.raw(std::string(kMagic, 4));
  w.u32(kWeightFormatVersion);
  write_config(w, model.config());
  const auto tensors = layout(model);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto* t : tensors) {
    w.u32(static_cast<std::uint32_t>(t->name.size()));
    w.raw(t->name);
    w.u8(kDtypeF32);
    w.u32(static_cast<std::uint32_t>(t->tensor.rank()));
    for (auto d : t->tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
  }
  for (const auto* t : tensors) {
    for (T v : t->tensor.data()) w.f32(static_cast<float>(v));
  }
  w.flush(path);
}

template <typename T>
void load_weights_into(Model<T>& model, const std::filesystem::path& path) {
  Reader r(path);
  read_header(r, path);
  const auto entries = read_manifest(r);
  const auto tensors = layout(std::as_const(model));
  for (std::size_t i = 0; i < std::min(entries.size(), tensors.size()); ++i) {
    const auto& e = entries[i];
    const auto& t = *tensors[i];
    if (e.name != t.name || e.shape != t.tensor.shape()) {
      throw FormatError("weight file " + path.string() + ": entry " + std::to_string(i) + " '" + e.name + "' " +
                        to_string(e.shape) + " does not match model parameter '" + t.name + "' " +
                        to_string(t.tensor.shape()));
    }
  }
  if (entries.size() != tensors.size()) {
    throw FormatError("weight file " + path.string() + " holds " + std::to_string(entries.size()) +
                      " tensors, model expects " + std::to_string(tensors.size()));
  }
  for (auto* group : {&model.parameters(), &model.buffers()}) {
    for (auto& t : *group) {
      for (auto& v : t.tensor.data()) v = static_cast<T>(r.f32());
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes in weight file " + path.string());
}

template <typename T>
Model<T> load_weights(const std::filesystem::path& path) {
  const auto config = read_weight_config(path);
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw FormatError("weight file " + path.string() + " carries an invalid config: " + e.what());
  }
  Model<T> model(config, 0);
  load_weights_into(model, path);
  return model;
}

ModelConfig read_weight_config(const std::filesystem::path& path) {
  Reader r(path);
  return read_header(r, path);
}

template void save_weights(const Model<float>&, const std::filesystem::path&);
template void save_weights(const Model<double>&, const std::filesystem::path&);
template Model<float> load_weights(const std::filesystem::path&);
template Model<double> load_weights(const std::filesystem::path&);
template void load_weights_into(Model<float>&, const std::filesystem::path&);
template void load_weights_into(Model<double>&, const std::filesystem::path&);

}  // namespace lumenseg::models
