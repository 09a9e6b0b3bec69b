#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <map>
#include <ostream>
#include <tuple>

#include "lumenseg/csv.hpp"
#include "lumenseg/dataset.hpp"
#include "lumenseg/error.hpp"
#include "lumenseg/gradcheck.hpp"
#include "lumenseg/image_io.hpp"
#include "lumenseg/inference.hpp"
#include "lumenseg/metrics.hpp"
#include "lumenseg/training.hpp"

namespace lumenseg::cli {

namespace {

using nlohmann::json;
using models::Variant;

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

fs::path ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create directory " + p.string() + ": " + ec.message());
  return p;
}

json config_json(const models::ModelConfig& c) {
  return {{"variant", std::string(models::name(c.variant))},
          {"height", c.height},
          {"width", c.width},
          {"channels", c.channels},
          {"temporal_depth", c.temporal_depth},
          {"temporal_kernels", c.temporal_kernels},
          {"base_width", c.base_width},
          {"depth", c.depth}};
}

models::ModelConfig model_config(Variant v, std::size_t height, std::size_t width, std::size_t temporal_kernels) {
  auto core = models::default_config(models::core_of(v), height, width);
  return models::is_temporal(v) ? models::extend_temporal(core, temporal_kernels) : core;
}

std::pair<std::size_t, std::size_t> frame_size(const std::vector<data::FrameTriplet>& t) {
  if (t.empty()) throw DataError("no frames to work on");
  return {t.front().target.height(), t.front().target.width()};
}

std::vector<data::FrameTriplet> split_triplets(const data::Manifest& m, const std::vector<std::string>& patients,
                                               const char* split) {
  if (patients.empty()) throw DataError(std::string("manifest has no ") + split + " patients");
  auto t = data::load_triplets(m, patients);
  if (t.empty()) throw DataError(std::string("manifest ") + split + " split holds no frames");
  return t;
}

std::vector<BinaryMask> targets(const std::vector<data::FrameTriplet>& t) {
  std::vector<BinaryMask> out;
  out.reserve(t.size());
  for (const auto& x : t) out.push_back(x.target);
  return out;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? sep : "") + parts[i];
  return s;
}

std::vector<std::string> names(const std::vector<Variant>& vs) {
  std::vector<std::string> out;
  for (auto v : vs) out.emplace_back(models::name(v));
  return out;
}

models::Model<float> load_member(const fs::path& run_dir, Variant v) {
  const auto path = weights_path(run_dir, v);
  if (!fs::exists(path)) {
    throw ConfigError("missing weights for ensemble member " + std::string(models::name(v)) + ": " + path.string() +
                      " (run `lumenseg train --model " + std::string(models::name(v)) + "` first)");
  }
  auto model = models::load_weights<float>(path);
  if (model.config().variant != v) {
    throw FormatError(path.string() + " holds a " + std::string(models::name(model.config().variant)) +
                      " model, expected " + std::string(models::name(v)));
  }
  return model;
}

// Subset labels such as "(m1,m2)" carry commas; CSV cells use "m1+m2".
std::string csv_label(const metrics::SubsetResult& r) { return join(r.members, "+"); }

CsvTable per_frame_table(const std::vector<data::FrameTriplet>& frames, const metrics::SubsetResult& r) {
  CsvTable t({"patient", "video", "frame", "dsc", "precision", "recall"});
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto& s = r.per_frame[f];
    t.row({frames[f].patient_id, frames[f].video_id, std::to_string(frames[f].index), format_number(s.dsc),
           format_number(s.precision), format_number(s.recall)});
  }
  t.row({"all", "all", "mean", format_number(r.mean.dsc), format_number(r.mean.precision),
         format_number(r.mean.recall)});
  return t;
}

}  // namespace

std::string member_dir(Variant v) {
  switch (v) {
    case Variant::kResUNet:
      return "m1";
    case Variant::kLiteSegNet:
      return "m2";
    case Variant::kTemporalResUNet:
      return "M1_temporal";
    case Variant::kTemporalLiteSegNet:
      return "M2_temporal";
  }
  return "unknown";
}

fs::path weights_path(const fs::path& run_dir, Variant v) { return run_dir / member_dir(v) / "weights.lseg"; }

// ---------------------------------------------------------------------------

void cmd_gen_data(const GenDataOptions& o, std::ostream& out) {
  if (o.frames != 0 && o.frames < 3) throw ConfigError("--frames must be at least 3");
  if (o.size < 8) throw ConfigError("--size must be at least 8");
  data::DatasetOptions d;
  d.seed = o.seed;
  d.height = d.width = o.size;
  d.frames_per_video = o.frames;
  d.artifacts = data::parse_artifacts(o.artifacts);
  d.force = o.force;
  const auto manifest = data::generate_dataset(o.out, d);

  std::size_t videos = 0, frames = 0;
  for (const auto& p : manifest.patients) {
    videos += p.videos.size();
    for (const auto& v : p.videos) frames += v.frames.size();
  }
  out << "wrote " << (o.out / "manifest.json").string() << ": " << manifest.patients.size() << " patients, " << videos
      << " videos, " << frames << " frames of " << o.size << "x" << o.size << "\n"
      << "train patients: " << join(manifest.train, ",") << "  test patients: " << join(manifest.test, ",") << "\n";
}

void cmd_train(const TrainOptions& o, std::ostream& out) {
  const auto manifest = data::load_manifest(o.manifest);
  const auto triplets = split_triplets(manifest, manifest.train, "train");
  const auto [h, w] = frame_size(triplets);
  const auto config = model_config(o.model, h, w, o.temporal_kernels);
  const auto samples = data::to_samples(triplets, models::is_temporal(o.model));

  training::TrainConfig tc;
  tc.learning_rate = o.learning_rate;
  tc.batch_size = o.batch_size;
  tc.epochs = o.epochs;
  tc.patience = o.patience;
  tc.seed = o.seed;
  tc.threshold = o.threshold;
  tc.validate();

  const auto t0 = std::chrono::steady_clock::now();
  auto run = training::train_final(config, samples, tc, o.augment);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const auto dir = ensure_dir(o.run_dir / member_dir(o.model));
  models::save_weights(run.model, dir / "weights.lseg");
  training::history_table(run.result).write(dir / "history.csv");

  CsvTable split({"patient", "video", "frame", "side"});
  for (const auto& [indices, side] : {std::pair{&run.split.train, "train"}, std::pair{&run.split.val, "val"}}) {
    for (auto i : *indices) {
      split.row({samples[i].patient_id, samples[i].video_id, std::to_string(samples[i].index), side});
    }
  }
  split.write(dir / "split.csv");

  CsvTable zooms({"patient", "video", "frame", "zoom_factor"});
  for (std::size_t k = 0; k < run.zoom_factors.size(); ++k) {
    const auto& s = samples[run.split.train[k]];
    zooms.row({s.patient_id, s.video_id, std::to_string(s.index), format_number(run.zoom_factors[k])});
  }
  zooms.write(dir / "zoom_factors.csv");

  write_json({{"model", config_json(config)},
              {"seed", o.seed},
              {"learning_rate", o.learning_rate},
              {"batch_size", o.batch_size},
              {"epochs", o.epochs},
              {"patience", o.patience},
              {"augment", o.augment},
              {"threshold", o.threshold},
              {"train_patients", manifest.train},
              {"train_frames", run.split.train.size()},
              {"val_frames", run.split.val.size()},
              {"best_epoch", run.result.best_epoch},
              {"best_val_dsc", run.result.best_val_dsc},
              {"stopped_early", run.result.stopped_early}},
             dir / "train.json");

  out << "trained " << models::name(o.model) << " (" << run.model.parameter_count() << " parameters) on "
      << run.split.train.size() << " frames";
  if (o.augment) out << " plus their augmented copies";
  out << ", validated on " << run.split.val.size() << "\n"
      << "epochs run " << run.result.history.size() << ", best epoch " << run.result.best_epoch << ", best val DSC "
      << fixed(run.result.best_val_dsc) << (run.result.stopped_early ? " (early stop)" : "") << ", " << fixed(secs, 1)
      << " s\n"
      << "outputs in " << dir.string() << "\n";
}

void cmd_gridsearch(const GridSearchOptions& o, std::ostream& out) {
  const auto manifest = data::load_manifest(o.manifest);
  const auto folds = training::kfold_split(manifest.train, o.folds, o.seed);
  const bool temporal = models::is_temporal(o.model);

  std::map<std::string, std::vector<data::Sample>> by_patient;
  std::size_t h = 0, w = 0;
  for (const auto& p : manifest.train) {
    const auto t = data::load_triplets(manifest, {p});
    if (t.empty()) throw DataError("training patient " + p + " has no frames");
    std::tie(h, w) = frame_size(t);
    by_patient[p] = data::to_samples(t, temporal);
  }

  training::GridSpec spec;
  spec.learning_rates = o.learning_rates;
  spec.batch_sizes = o.batch_sizes;
  if (o.model == Variant::kTemporalResUNet) spec.temporal_kernels = o.temporal_kernels;
  if (o.model == Variant::kTemporalLiteSegNet) spec.temporal_kernels = {3};
  const auto grid = training::enumerate_grid(spec);

  auto evaluate = [&](const training::GridPoint& point, const training::FoldSplit& fold) {
    std::vector<data::Sample> train_set, val_set;
    for (const auto& p : fold.train_patients) {
      const auto& s = by_patient.at(p);
      train_set.insert(train_set.end(), s.begin(), s.end());
    }
    for (const auto& p : fold.val_patients) {
      const auto& s = by_patient.at(p);
      val_set.insert(val_set.end(), s.begin(), s.end());
    }
    std::uint64_t key = o.seed;
    for (std::uint64_t part : {static_cast<std::uint64_t>(std::llround(-std::log10(point.learning_rate) * 1000.0)),
                               static_cast<std::uint64_t>(point.batch_size),
                               static_cast<std::uint64_t>(point.temporal_kernels),
                               static_cast<std::uint64_t>(fold.fold_id)}) {
      key = Rng::mix(key ^ part);
    }
    training::TrainConfig tc;
    tc.learning_rate = point.learning_rate;
    tc.batch_size = point.batch_size;
    tc.epochs = o.epochs;
    tc.patience = o.patience;
    tc.seed = key;
    tc.threshold = o.threshold;
    models::Model<float> model(model_config(o.model, h, w, point.temporal_kernels ? point.temporal_kernels : 8), key);
    return training::train(model, train_set, val_set, tc).best_val_dsc;
  };

  const auto t0 = std::chrono::steady_clock::now();
  const auto result = training::grid_search(grid, folds, evaluate, o.threads);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const auto dir = ensure_dir(o.run_dir / ("gridsearch_" + member_dir(o.model)));
  training::cv_table(result).write(dir / "cv_table.csv");
  CsvTable means({"learning_rate", "batch_size", "temporal_kernels", "mean_val_dsc"});
  for (std::size_t g = 0; g < grid.size(); ++g) {
    means.row({format_number(grid[g].learning_rate), std::to_string(grid[g].batch_size),
               std::to_string(grid[g].temporal_kernels), format_number(result.mean_dsc[g])});
  }
  means.write(dir / "grid_means.csv");
  json folds_json = json::array();
  for (const auto& f : folds) {
    folds_json.push_back({{"fold", f.fold_id}, {"train", f.train_patients}, {"val", f.val_patients}});
  }
  write_json({{"model", std::string(models::name(o.model))},
              {"learning_rate", result.best.learning_rate},
              {"batch_size", result.best.batch_size},
              {"temporal_kernels", result.best.temporal_kernels},
              {"mean_val_dsc", result.best_mean_dsc},
              {"epochs", o.epochs},
              {"patience", o.patience},
              {"seed", o.seed},
              {"folds", folds_json}},
             dir / "best.json");

  out << "grid search for " << models::name(o.model) << ": " << grid.size() << " points x " << folds.size()
      << " folds in " << fixed(secs, 1) << " s\n"
      << "best lr " << format_number(result.best.learning_rate) << ", bs " << result.best.batch_size;
  if (result.best.temporal_kernels) out << ", n_k " << result.best.temporal_kernels;
  out << ": mean val DSC " << fixed(result.best_mean_dsc) << "\n"
      << "outputs in " << dir.string() << "\n";
}

void cmd_eval(const EvalOptions& o, std::ostream& out) {
  const auto manifest = data::load_manifest(o.manifest);
  const auto dir = ensure_dir(o.run_dir / "eval");

  if (o.pred_manifest) {
    const auto pred = data::load_manifest(*o.pred_manifest);
    std::vector<data::FrameTriplet> ids;
    std::vector<std::vector<ProbabilityMap>> maps(1);
    std::vector<BinaryMask> truth;
    for (const auto& pp : pred.patients) {
      const auto& tp = manifest.patient(pp.id);
      for (const auto& pv : pp.videos) {
        auto tv = std::find_if(tp.videos.begin(), tp.videos.end(), [&](const auto& v) { return v.id == pv.id; });
        if (tv == tp.videos.end()) throw DataError("prediction video " + pp.id + "/" + pv.id + " not in manifest");
        for (const auto& pf : pv.frames) {
          if (pf.index >= tv->frames.size()) {
            throw DataError("prediction frame " + pp.id + "/" + pv.id + "/" + std::to_string(pf.index) +
                            " not in manifest");
          }
          const auto mask = data::read_mask(pred.root / pf.mask);
          truth.push_back(data::read_mask(manifest.root / tv->frames[pf.index].mask));
          std::vector<double> values(mask.values().begin(), mask.values().end());
          maps[0].emplace_back(mask.height(), mask.width(), std::move(values));
          data::FrameTriplet id;
          id.patient_id = pp.id;
          id.video_id = pv.id;
          id.index = pf.index;
          ids.push_back(std::move(id));
        }
      }
    }
    if (ids.empty()) throw DataError("prediction manifest holds no frames");
    const auto r = metrics::evaluate_subset({"pred"}, maps, truth, o.threshold);
    per_frame_table(ids, r).write(dir / "eval_pred.csv");
    out << "evaluated " << ids.size() << " predicted masks: DSC " << fixed(r.mean.dsc) << ", Prec "
        << fixed(r.mean.precision) << ", Rec " << fixed(r.mean.recall) << "\n"
        << "output " << (dir / "eval_pred.csv").string() << "\n";
    return;
  }

  if (o.members.empty()) throw ConfigError("eval needs --model or --ensemble");
  const auto test = split_triplets(manifest, manifest.test, "test");
  std::vector<std::vector<ProbabilityMap>> maps;
  for (auto v : o.members) maps.push_back(inference::member_maps(load_member(o.run_dir, v), test));
  const auto truth = targets(test);
  const auto r = metrics::evaluate_subset(names(o.members), maps, truth, o.threshold);

  std::vector<std::string> dirs;
  for (auto v : o.members) dirs.push_back(member_dir(v));
  const auto path = dir / ("eval_" + join(dirs, "+") + ".csv");
  per_frame_table(test, r).write(path);
  out << "evaluated " << r.label << " on " << test.size() << " test frames: DSC " << fixed(r.mean.dsc) << ", Prec "
      << fixed(r.mean.precision) << ", Rec " << fixed(r.mean.recall) << "\n"
      << "output " << path.string() << "\n";
}

void cmd_ablate(const AblateOptions& o, std::ostream& out) {
  const auto manifest = data::load_manifest(o.manifest);
  const auto test = split_triplets(manifest, manifest.test, "test");
  const auto truth = targets(test);

  std::map<std::string, std::vector<ProbabilityMap>> maps;
  std::vector<std::string> singles;
  for (auto v : models::kAllVariants) {
    singles.emplace_back(models::name(v));
    maps[singles.back()] = inference::member_maps(load_member(o.run_dir, v), test);
  }
  const auto lookup = [&](const std::string& name) -> const std::vector<ProbabilityMap>* {
    auto it = maps.find(name);
    return it == maps.end() ? nullptr : &it->second;
  };
  const auto subsets = metrics::ablation_eval(lookup, truth, o.threshold);

  std::vector<metrics::SubsetResult> groups;
  for (const auto& s : singles) groups.push_back(metrics::evaluate_subset({s}, {maps[s]}, truth, o.threshold));
  groups.push_back(subsets.back());  // the four-member ensemble

  const auto dir = ensure_dir(o.run_dir / "ablation");
  CsvTable table({"subset", "dsc", "precision", "recall"});
  for (const auto& s : subsets) {
    table.row({csv_label(s), format_number(s.mean.dsc), format_number(s.mean.precision), format_number(s.mean.recall)});
  }
  table.write(dir / "ablation.csv");

  CsvTable singles_table({"model", "dsc", "precision", "recall"});
  for (const auto& g : groups) {
    singles_table.row({csv_label(g), format_number(g.mean.dsc), format_number(g.mean.precision),
                       format_number(g.mean.recall)});
  }
  singles_table.write(dir / "models.csv");

  std::vector<std::string> header{"patient", "video", "frame"};
  for (std::size_t g = 0; g < groups.size(); ++g) header.push_back(g < singles.size() ? singles[g] : "ensemble");
  CsvTable per_frame(header);
  std::vector<std::vector<double>> kw_groups(groups.size());
  for (std::size_t f = 0; f < test.size(); ++f) {
    std::vector<std::string> row{test[f].patient_id, test[f].video_id, std::to_string(test[f].index)};
    for (std::size_t g = 0; g < groups.size(); ++g) {
      row.push_back(format_number(groups[g].per_frame[f].dsc));
      kw_groups[g].push_back(groups[g].per_frame[f].dsc);
    }
    per_frame.row(row);
  }
  per_frame.write(dir / "per_frame_dsc.csv");

  const auto kw = metrics::kruskal_wallis(kw_groups);
  std::vector<std::string> labels;
  for (std::size_t g = 0; g < groups.size(); ++g) labels.push_back(header[3 + g]);
  CsvTable kw_table({"groups", "frames_per_group", "h", "dof", "p_value"});
  kw_table.row({join(labels, " "), std::to_string(test.size()), format_number(kw.h), std::to_string(kw.dof),
                format_number(kw.p_value)});
  kw_table.write(dir / "kruskal_wallis.csv");

  out << "ablation on " << test.size() << " test frames (threshold " << format_number(o.threshold) << ")\n";
  out << "  subset              DSC     Prec    Rec\n";
  for (const auto& s : subsets) {
    char line[128];
    std::snprintf(line, sizeof line, "  %-18s  %.4f  %.4f  %.4f\n", s.label.c_str(), s.mean.dsc, s.mean.precision,
                  s.mean.recall);
    out << line;
  }
  out << "  single models:";
  for (std::size_t g = 0; g + 1 < groups.size(); ++g) out << " " << singles[g] << " " << fixed(groups[g].mean.dsc);
  out << "\n  Kruskal-Wallis over per-frame DSC of " << join(labels, ", ") << ": H = " << fixed(kw.h) << ", dof "
      << kw.dof << ", p = " << format_number(kw.p_value) << "\n"
      << "outputs in " << dir.string() << "\n";
}

void cmd_bench(const BenchOptions& o, std::ostream& out) {
  if (o.members.empty()) throw ConfigError("bench needs --model or --ensemble");
  std::vector<data::FrameTriplet> frames;
  if (o.manifest) {
    const auto manifest = data::load_manifest(*o.manifest);
    frames = split_triplets(manifest, manifest.test, "test");
  } else {
    data::VideoSpec spec;
    spec.seed = o.seed;
    spec.n_frames = 10;
    spec.height = spec.width = o.size;
    spec.style = data::PatientStyle::from_seed(o.seed);
    frames = data::make_triplets(data::generate_synthetic_video(spec));
  }
  const auto [h, w] = frame_size(frames);

  std::vector<models::Model<float>> owned;
  std::vector<std::string> sources;
  for (auto v : o.members) {
    if (fs::exists(weights_path(o.run_dir, v))) {
      owned.push_back(load_member(o.run_dir, v));
      sources.push_back("trained");
    } else {
      owned.emplace_back(model_config(v, h, w, 8), o.seed);
      sources.push_back("untrained");
    }
    if (owned.back().config().height != h || owned.back().config().width != w) {
      throw ConfigError("model " + std::string(models::name(v)) + " expects " +
                        std::to_string(owned.back().config().height) + "x" +
                        std::to_string(owned.back().config().width) + " frames, bench frames are " +
                        std::to_string(h) + "x" + std::to_string(w));
    }
  }
  std::vector<inference::Member> members;
  for (std::size_t i = 0; i < owned.size(); ++i) members.push_back({std::string(models::name(o.members[i])), &owned[i]});

  const auto report = inference::bench_inference(members, frames, o.frames, o.warmup, o.threshold);
  const auto dir = ensure_dir(o.run_dir / "bench");
  CsvTable table({"name", "mean_ms", "std_ms", "frames"});
  for (std::size_t m = 0; m < members.size(); ++m) {
    const auto& s = report.member_stats[m];
    table.row({members[m].name, format_number(s.mean_ms), format_number(s.std_ms), std::to_string(s.frames)});
  }
  table.row({"ensemble", format_number(report.ensemble.mean_ms), format_number(report.ensemble.std_ms),
             std::to_string(report.ensemble.frames)});
  table.write(dir / "bench.csv");
  const double gap = (report.ensemble.mean_ms - report.member_sum_ms) / report.member_sum_ms;
  CsvTable additivity({"ensemble_mean_ms", "member_sum_ms", "relative_difference"});
  additivity.row({format_number(report.ensemble.mean_ms), format_number(report.member_sum_ms), format_number(gap)});
  additivity.write(dir / "additivity.csv");

  out << "inference time per " << h << "x" << w << " frame over " << o.frames << " frames (" << o.warmup
      << " warm-up):\n";
  for (std::size_t m = 0; m < members.size(); ++m) {
    out << "  " << members[m].name << " (" << sources[m] << "): " << fixed(report.member_stats[m].mean_ms, 2)
        << " +- " << fixed(report.member_stats[m].std_ms, 2) << " ms\n";
  }
  out << "  ensemble (sequential): " << fixed(report.ensemble.mean_ms, 2) << " +- "
      << fixed(report.ensemble.std_ms, 2) << " ms; sum of members " << fixed(report.member_sum_ms, 2) << " ms ("
      << (gap >= 0 ? "+" : "") << fixed(100.0 * gap, 1) << "%)\n"
      << "outputs in " << dir.string() << "\n";
}

void cmd_gradcheck(const GradCheckOptions& o, std::ostream& out) {
  GradCheckSuiteOptions options;
  options.seed = o.seed;
  options.tolerance = o.tolerance;
  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = gradcheck_suite(options);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  CsvTable table({"check", "max_rel_error", "max_abs_error", "coords", "skipped", "tolerance", "passed"});
  bool ok = true;
  for (const auto& r : reports) {
    ok = ok && r.passed;
    table.row({r.name, format_number(r.max_rel_error), format_number(r.max_abs_error),
               std::to_string(r.coords_checked), std::to_string(r.coords_skipped), format_number(r.tolerance),
               r.passed ? "1" : "0"});
    char line[160];
    std::snprintf(line, sizeof line, "  %-18s max rel err %.3e  (%zu coords, %zu skipped)  %s\n", r.name.c_str(),
                  r.max_rel_error, r.coords_checked, r.coords_skipped, r.passed ? "ok" : "FAIL");
    out << line;
  }
  if (o.run_dir) table.write(ensure_dir(*o.run_dir) / "gradcheck.csv");
  out << (ok ? "all " : "some ") << reports.size() << " checks " << (ok ? "passed" : "FAILED") << " at tolerance "
      << format_number(o.tolerance) << " in " << fixed(secs, 1) << " s\n";
  if (!ok) throw NumericError("gradient check failed");
}

}  // namespace lumenseg::cli
