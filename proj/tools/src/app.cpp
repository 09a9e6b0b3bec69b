#include "app.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <ostream>
#include <sstream>

#include "commands.hpp"
#include "lumenseg/error.hpp"
#include "settings.hpp"

namespace lumenseg::cli {

namespace {

using models::Variant;

struct Flags {
  std::optional<std::string> defaults_file;
  std::optional<std::uint64_t> seed;

  std::string manifest;
  std::string run_dir = "runs";
  std::string out;
  std::optional<std::string> model;
  std::optional<std::string> ensemble;
  std::optional<std::string> pred_manifest;
  std::optional<std::string> hparams;

  std::optional<double> lr;
  std::optional<std::size_t> bs;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> patience;
  std::optional<std::size_t> nk;
  std::optional<std::size_t> size;
  std::optional<std::size_t> frames;
  std::optional<std::size_t> warmup;
  std::optional<std::string> artifacts;
  std::optional<double> threshold;
  std::optional<double> tolerance;
  std::size_t threads = 1;
  std::optional<std::size_t> folds;
  std::vector<double> grid_lr;
  std::vector<std::size_t> grid_bs;
  std::vector<std::size_t> grid_nk;
  bool force = false;
  bool no_augment = false;
};

std::vector<Variant> members(const Flags& f, bool required) {
  if (f.model && f.ensemble) throw ConfigError("give either --model or --ensemble, not both");
  std::vector<Variant> out;
  if (f.model) out.push_back(models::parse_variant(*f.model));
  if (f.ensemble) {
    if (*f.ensemble == "all") return {std::begin(models::kAllVariants), std::end(models::kAllVariants)};
    std::stringstream ss(*f.ensemble);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto v = models::parse_variant(item);
      if (std::find(out.begin(), out.end(), v) != out.end()) {
        throw ConfigError("ensemble member " + item + " listed twice");
      }
      out.push_back(v);
    }
  }
  if (required && out.empty()) throw ConfigError("name a model with --model or members with --ensemble");
  return out;
}

Variant single_model(const Flags& f) {
  if (f.ensemble || !f.model) throw ConfigError("this command trains one model; give --model {m1,m2,M1,M2}");
  return models::parse_variant(*f.model);
}

template <typename T>
T pick(const std::optional<T>& flag, T fallback) {
  return flag ? *flag : fallback;
}

// lr / bs / n_k from a grid-search best.json.
void apply_hparams(const std::string& path, TrainOptions& o) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open hyperparameter file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    if (j.contains("model") && models::parse_variant(j.at("model").get<std::string>()) != o.model) {
      throw ConfigError(path + " was searched for model " + j.at("model").get<std::string>() + ", not " +
                        std::string(models::name(o.model)));
    }
    o.learning_rate = j.at("learning_rate").get<double>();
    o.batch_size = j.at("batch_size").get<std::size_t>();
    if (const auto nk = j.value("temporal_kernels", std::size_t{0}); nk != 0) o.temporal_kernels = nk;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad hyperparameter file " + path + ": " + e.what());
  }
}

void require_manifest(const Flags& f) {
  if (f.manifest.empty()) throw ConfigError("--manifest is required");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"lumenseg: spatio-temporal lumen segmentation ensemble"};
  app.name("lumenseg");
  app.require_subcommand(1);
  Flags f;

  app.add_option("--defaults", f.defaults_file, "JSON file overriding the built-in defaults");
  app.add_option("--seed", f.seed, "Seed (falls back to LUMENSEG_SEED, then the defaults)");

  auto* gen = app.add_subcommand("gen-data", "Render the synthetic six-patient dataset");
  gen->add_option("--out", f.out, "Output directory")->required();
  gen->add_option("--size", f.size, "Frame height and width");
  gen->add_option("--frames", f.frames, "Frames per video (>= 3; 0 keeps the default layout)");
  gen->add_option("--artifacts", f.artifacts, "none or standard");
  gen->add_flag("--force", f.force, "Write into a non-empty directory");

  auto add_common = [&](CLI::App* sub, bool model_flags) {
    sub->add_option("--manifest", f.manifest, "Dataset manifest.json");
    sub->add_option("--run-dir", f.run_dir, "Run directory")->capture_default_str();
    sub->add_option("--threshold", f.threshold, "Binarization threshold");
    if (model_flags) {
      sub->add_option("--model", f.model, "m1, m2, M1 or M2");
      sub->add_option("--ensemble", f.ensemble, "Comma-separated members, or all");
    }
  };

  auto* train = app.add_subcommand("train", "Train one model on the training patients");
  add_common(train, true);
  train->add_option("--lr", f.lr, "Learning rate");
  train->add_option("--bs", f.bs, "Batch size");
  train->add_option("--epochs", f.epochs, "Maximum epochs");
  train->add_option("--patience", f.patience, "Early-stopping patience (0 disables)");
  train->add_option("--nk", f.nk, "Temporal kernels for M1");
  train->add_option("--hparams", f.hparams, "best.json from gridsearch");
  train->add_flag("--no-augment", f.no_augment, "Skip data augmentation");

  auto* grid = app.add_subcommand("gridsearch", "Patient-wise k-fold grid search");
  add_common(grid, true);
  grid->add_option("--grid-lr", f.grid_lr, "Learning rates")->delimiter(',');
  grid->add_option("--grid-bs", f.grid_bs, "Batch sizes")->delimiter(',');
  grid->add_option("--grid-nk", f.grid_nk, "Temporal kernel counts (M1)")->delimiter(',');
  grid->add_option("--folds", f.folds, "Cross-validation folds");
  grid->add_option("--epochs", f.epochs, "Maximum epochs per fold");
  grid->add_option("--patience", f.patience, "Early-stopping patience (0 disables)");
  grid->add_option("--threads", f.threads, "Parallel fold jobs")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "Score a model or ensemble on the test patients");
  add_common(eval, true);
  eval->add_option("--pred-manifest", f.pred_manifest, "Score masks listed in this manifest instead");

  auto* ablate = app.add_subcommand("ablate", "Ensemble ablation and Kruskal-Wallis test");
  add_common(ablate, false);

  auto* bench = app.add_subcommand("bench", "Per-frame inference time");
  add_common(bench, true);
  bench->add_option("--frames", f.frames, "Timed frames");
  bench->add_option("--warmup", f.warmup, "Untimed warm-up frames");
  bench->add_option("--size", f.size, "Frame size without --manifest");

  auto* gcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gcheck->add_option("--run-dir", f.run_dir, "Directory for gradcheck.csv");
  gcheck->add_option("--tolerance", f.tolerance, "Maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return static_cast<int>(ErrorCategory::kConfig);
  }

  try {
    const auto d = load_defaults(f.defaults_file ? std::optional<fs::path>(*f.defaults_file) : std::nullopt);
    const auto seed = resolve_seed(f.seed, d);
    const double threshold = pick(f.threshold, d.threshold);

    if (gen->parsed()) {
      GenDataOptions o;
      o.out = f.out;
      o.seed = seed;
      o.size = pick(f.size, d.size);
      o.frames = pick(f.frames, d.frames_per_video);
      o.artifacts = pick(f.artifacts, d.artifacts);
      o.force = f.force;
      cmd_gen_data(o, out);
    } else if (train->parsed()) {
      require_manifest(f);
      TrainOptions o;
      o.manifest = f.manifest;
      o.run_dir = f.run_dir;
      o.model = single_model(f);
      o.seed = seed;
      o.learning_rate = d.learning_rate;
      o.batch_size = d.batch_size;
      o.temporal_kernels = d.temporal_kernels;
      if (f.hparams) apply_hparams(*f.hparams, o);
      o.learning_rate = pick(f.lr, o.learning_rate);
      o.batch_size = pick(f.bs, o.batch_size);
      o.temporal_kernels = pick(f.nk, o.temporal_kernels);
      o.epochs = pick(f.epochs, d.epochs);
      o.patience = pick(f.patience, d.patience);
      o.augment = d.augment && !f.no_augment;
      o.threshold = threshold;
      cmd_train(o, out);
    } else if (grid->parsed()) {
      require_manifest(f);
      GridSearchOptions o;
      o.manifest = f.manifest;
      o.run_dir = f.run_dir;
      o.model = single_model(f);
      o.seed = seed;
      o.learning_rates = f.grid_lr.empty() ? d.grid_learning_rates : f.grid_lr;
      o.batch_sizes = f.grid_bs.empty() ? d.grid_batch_sizes : f.grid_bs;
      o.temporal_kernels = f.grid_nk.empty() ? d.grid_temporal_kernels : f.grid_nk;
      o.folds = pick(f.folds, d.folds);
      o.epochs = pick(f.epochs, d.grid_epochs);
      o.patience = pick(f.patience, d.patience);
      o.threads = f.threads;
      o.threshold = threshold;
      if (o.threads == 0) throw ConfigError("--threads must be at least 1");
      cmd_gridsearch(o, out);
    } else if (eval->parsed()) {
      require_manifest(f);
      EvalOptions o;
      o.manifest = f.manifest;
      o.run_dir = f.run_dir;
      o.members = members(f, !f.pred_manifest);
      if (f.pred_manifest) o.pred_manifest = fs::path(*f.pred_manifest);
      o.threshold = threshold;
      cmd_eval(o, out);
    } else if (ablate->parsed()) {
      require_manifest(f);
      cmd_ablate({f.manifest, f.run_dir, threshold}, out);
    } else if (bench->parsed()) {
      BenchOptions o;
      o.run_dir = f.run_dir;
      if (!f.manifest.empty()) o.manifest = fs::path(f.manifest);
      o.members = members(f, false);
      if (o.members.empty()) o.members.assign(std::begin(models::kAllVariants), std::end(models::kAllVariants));
      o.seed = seed;
      o.size = pick(f.size, d.size);
      o.frames = pick(f.frames, d.bench_frames);
      o.warmup = pick(f.warmup, d.bench_warmup);
      o.threshold = threshold;
      cmd_bench(o, out);
    } else if (gcheck->parsed()) {
      GradCheckOptions o;
      if (gcheck->count("--run-dir") > 0) o.run_dir = fs::path(f.run_dir);
      o.seed = seed;
      o.tolerance = pick(f.tolerance, 1e-4);
      cmd_gradcheck(o, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorCategory::kData);
  }
  return 0;
}

}  // namespace lumenseg::cli
