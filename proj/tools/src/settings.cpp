#include "settings.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "embedded_defaults.hpp"
#include "lumenseg/error.hpp"

namespace lumenseg::cli {

namespace {

using nlohmann::json;

template <typename T>
void take(const json& j, const char* section, const char* key, T& out) {
  const json* node = &j;
  if (section != nullptr) {
    if (!j.contains(section)) return;
    node = &j.at(section);
  }
  if (!node->contains(key)) return;
  try {
    out = node->at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("defaults: bad value for ") + (section ? std::string(section) + "." : "") + key +
                      ": " + e.what());
  }
}

void apply_json(const json& j, Defaults& d) {
  take(j, nullptr, "seed", d.seed);
  take(j, "data", "size", d.size);
  take(j, "data", "frames_per_video", d.frames_per_video);
  take(j, "data", "artifacts", d.artifacts);
  take(j, "train", "learning_rate", d.learning_rate);
  take(j, "train", "batch_size", d.batch_size);
  take(j, "train", "epochs", d.epochs);
  take(j, "train", "patience", d.patience);
  take(j, "train", "augment", d.augment);
  take(j, "train", "temporal_kernels", d.temporal_kernels);
  take(j, "grid", "learning_rates", d.grid_learning_rates);
  take(j, "grid", "batch_sizes", d.grid_batch_sizes);
  take(j, "grid", "temporal_kernels", d.grid_temporal_kernels);
  take(j, "grid", "folds", d.folds);
  take(j, "grid", "epochs", d.grid_epochs);
  take(j, "eval", "threshold", d.threshold);
  take(j, "bench", "frames", d.bench_frames);
  take(j, "bench", "warmup", d.bench_warmup);
}

json parse(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse defaults " + origin + ": " + e.what());
  }
}

}  // namespace

Defaults load_defaults(const std::optional<std::filesystem::path>& path) {
  Defaults d;
  apply_json(parse(kEmbeddedDefaults, "(built in)"), d);
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open defaults file " + path->string());
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    apply_json(parse(text, path->string()), d);
  }
  return d;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const Defaults& defaults) {
  if (flag) return *flag;
  if (const char* env = std::getenv("LUMENSEG_SEED"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (errno != 0 || end == env || *end != '\0' || *env == '-') {
      throw ConfigError(std::string("LUMENSEG_SEED is not an unsigned integer: '") + env + "'");
    }
    return v;
  }
  return defaults.seed;
}

}  // namespace lumenseg::cli
