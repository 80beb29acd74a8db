#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "microseg/experiment.hpp"

namespace fs = std::filesystem;
namespace ms = microseg;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

/// Bad flag values that CLI11 cannot see on its own.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

ms::json report_header(const std::string& kind) {
  return {{"format_version", ms::kReportFormatVersion}, {"kind", kind}};
}

std::vector<double> parse_number_list(const std::string& text, const char* flag) {
  std::vector<double> out;
  std::size_t from = 0;
  while (from <= text.size()) {
    const auto comma = text.find(',', from);
    const auto cell = text.substr(from, comma == std::string::npos ? std::string::npos : comma - from);
    double v = 0.0;
    const auto r = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (cell.empty() || r.ec != std::errc() || r.ptr != cell.data() + cell.size())
      throw UsageError(std::string(flag) + ": '" + cell + "' is not a number");
    out.push_back(v);
    if (comma == std::string::npos) break;
    from = comma + 1;
  }
  return out;
}

/// Every *.ckpt under the given files or directories, sorted per directory.
std::vector<fs::path> expand_checkpoints(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in))
        if (e.path().extension() == ".ckpt") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      if (found.empty()) throw ms::DataError("no .ckpt files in " + in);
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.emplace_back(in);
    }
  }
  return out;
}

ms::RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return ms::run_config_from_json(ms::json::object());
  return ms::run_config_from_json(ms::read_json_file(path));
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::size_t subjects = 8;
  std::uint64_t seed = 1;
  std::string plan = ms::format_plan(ms::default_plan());
  std::string out;
};

int run_generate(const GenerateArgs& a) {
  ms::SessionPlan plan;
  try {
    plan = ms::parse_plan(a.plan);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--plan: ") + e.what());
  }
  if (a.subjects == 0) throw UsageError("--subjects must be at least 1");
  const auto cohort = ms::generate_cohort(a.subjects, plan, a.seed);
  ms::write_dataset(a.out, cohort, a.seed, plan);

  std::printf("%-8s", "subject");
  for (std::size_t c = 1; c < ms::kNumActivities; ++c) std::printf(" %24s", ms::activity_name(static_cast<int>(c)).c_str());
  std::printf(" %8s\n", "samples");
  for (const auto& [profile, rec] : cohort) {
    const auto counts = ms::segment_counts(rec);
    std::printf("%-8s", rec.subject_id.c_str());
    for (std::size_t c = 1; c < ms::kNumActivities; ++c)
      std::printf(" %24zu", counts.at(ms::activity_name(static_cast<int>(c))));
    std::printf(" %8zu\n", rec.length());
  }
  std::printf("wrote %zu subjects to %s\n", cohort.size(), a.out.c_str());
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string config;
  std::optional<double> mask_ratio;
  std::optional<double> eta;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string report;
  bool losocv = false;
  std::size_t jobs = 1;
};

int run_train(const TrainArgs& a) {
  auto config = load_run_config(a.config);
  if (a.mask_ratio) config.train.mask_ratio = *a.mask_ratio;
  if (a.eta) config.train.eta = *a.eta;
  if (a.epochs) config.train.epochs = *a.epochs;
  if (a.seed) config.train.seed = *a.seed;
  config = ms::run_config_from_json(ms::to_json(config));  // re-validate flag overrides

  const auto ds = ms::read_dataset(a.data);
  ms::check_compatible(ds, config.model);
  fs::create_directories(a.out);
  const auto start = std::chrono::steady_clock::now();

  std::vector<ms::FoldRun> runs;
  auto announce = [](const ms::FoldRun& r) {
    const auto& last = r.result.epochs.back();
    std::printf("fold %-6s epochs %3zu  L %.6g  L_CE %.6g  L_MSE %.6g\n",
                r.held_out ? r.held_out->c_str() : "all", r.result.epochs.size(), last.loss, last.ce, last.mse);
    std::fflush(stdout);
  };
  if (a.losocv) {
    runs = ms::train_losocv(ds, config, a.jobs, announce);
  } else {
    runs.push_back(ms::train_subjects(ds, config, ds.subject_ids(), std::nullopt, 0));
    announce(runs.back());
  }

  auto report = report_header("train");
  report["data"] = {{"path", a.data}, {"subjects", ds.subject_ids()}};
  report["config"] = ms::to_json(config);
  report["seed"] = config.train.seed;
  report["losocv"] = a.losocv;
  report["folds"] = ms::json::array();
  for (const auto& r : runs) {
    const auto name = (r.held_out ? "fold_" + *r.held_out : std::string("all")) + ".ckpt";
    ms::save_checkpoint(fs::path(a.out) / name, r.model, ms::checkpoint_meta(r, config));
    report["folds"].push_back(ms::train_report_fold(r, name));
  }
  report["wall_clock_s"] = seconds_since(start);
  const auto report_path = a.report.empty() ? fs::path(a.out) / "train_report.json" : fs::path(a.report);
  ms::write_json_file(report_path, report);
  std::printf("wrote %zu checkpoint(s) to %s, report %s\n", runs.size(), a.out.c_str(), report_path.c_str());
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string data;
  std::vector<std::string> checkpoints;
  double iou_threshold = 0.75;
  std::size_t min_segment = 0;
  std::string report;
  std::string table;
  bool oracle = false;
};

int run_evaluate(const EvaluateArgs& a) {
  if (!a.oracle && a.checkpoints.empty()) throw UsageError("--checkpoints is required unless --oracle is set");
  if (a.iou_threshold < 0.0 || a.iou_threshold > 1.0) throw UsageError("--iou-threshold must lie in [0, 1]");
  const auto ds = ms::read_dataset(a.data);
  const auto start = std::chrono::steady_clock::now();
  ms::EvaluationOptions options;
  options.iou_threshold = a.iou_threshold;
  options.loa.min_segment_len = a.min_segment;

  auto report = report_header("evaluation");
  report["data"] = {{"path", a.data}, {"subjects", ds.subject_ids()}};
  report["iou_threshold"] = a.iou_threshold;
  report["min_segment_len"] = a.min_segment;
  report["oracle"] = a.oracle;

  // Predictions grouped by the mask ratio each checkpoint was trained with.
  std::map<double, std::vector<ms::SubjectPrediction>> by_ratio;
  ms::json sources = ms::json::array();
  if (a.oracle) {
    for (const auto& r : ds.recordings) by_ratio[-1.0].push_back(ms::oracle_subject(r));
  } else {
    for (const auto& path : expand_checkpoints(a.checkpoints)) {
      const auto ck = ms::load_checkpoint(path);
      ms::check_compatible(ds, ck.model.config());
      const double ratio = ck.meta.contains("train") ? ck.meta["train"].value("mask_ratio", -1.0) : -1.0;
      for (const auto& id : ms::evaluation_subjects(ds, ck.meta))
        by_ratio[ratio].push_back(ms::predict_subject(ck.model, ds.subject(id)));
      sources.push_back(path.string());
    }
  }
  report["checkpoints"] = sources;

  ms::json groups = ms::json::array();
  std::vector<ms::SweepCell> cells;
  for (const auto& [ratio, preds] : by_ratio) {
    const auto summary = ms::evaluate_predictions(preds, options);
    groups.push_back({{"mask_ratio", ratio < 0 ? ms::json(nullptr) : ms::json(ratio)},
                      {"summary", ms::to_json(summary)}});
    if (ratio >= 0) cells.push_back({ratio, 0, summary, 0.0});
    std::printf("mask ratio %-5s subjects %zu  sample macro-f1 %.4f  segmental macro-f1 %.4f\n",
                ratio < 0 ? "-" : ms::format_double(ratio).c_str(), preds.size(), summary.mean_sample_macro_f1,
                summary.mean_segmental_macro_f1);
  }
  report["groups"] = groups;
  ms::json table = ms::json::array();
  const auto rows = ms::summarize_sweep(cells);
  for (const auto& r : rows) table.push_back(ms::to_json(r));
  report["mask_ratio_table"] = table;
  report["wall_clock_s"] = seconds_since(start);
  if (!a.table.empty()) ms::write_text_file(a.table, ms::sweep_table_csv(rows));
  if (!a.report.empty()) ms::write_json_file(a.report, report);
  return 0;
}

// ---------------------------------------------------------------- velocity

struct VelocityArgs {
  std::string data;
  std::string checkpoint;
  std::string subject;
  std::string report;
  bool use_true_labels = false;
  std::string still_window;
  std::size_t still_length = 200;
  std::size_t min_segment = 30;
};

ms::SampleRange parse_range(const std::string& text) {
  const auto colon = text.find(':');
  std::size_t b = 0, e = 0;
  const bool ok = colon != std::string::npos &&
                  std::from_chars(text.data(), text.data() + colon, b).ptr == text.data() + colon &&
                  std::from_chars(text.data() + colon + 1, text.data() + text.size(), e).ptr ==
                      text.data() + text.size();
  if (!ok || e <= b) throw UsageError("--still-window expects BEGIN:END sample indices, got '" + text + "'");
  return {b, e};
}

int run_velocity(const VelocityArgs& a) {
  if (!a.use_true_labels && a.checkpoint.empty())
    throw UsageError("--checkpoint is required unless --use-true-labels is set");
  ms::VelocityRequest request;
  request.use_true_labels = a.use_true_labels;
  request.min_segment_len = a.min_segment;
  request.options.still_length = a.still_length;
  if (!a.still_window.empty()) request.options.manual_still = parse_range(a.still_window);

  const auto ds = ms::read_dataset(a.data);
  const auto& rec = ds.subject(a.subject);
  std::optional<ms::LoadedCheckpoint> ck;
  if (!a.use_true_labels) {
    ck = ms::load_checkpoint(a.checkpoint);
    ms::check_compatible(ds, ck->model.config());
  }
  const auto start = std::chrono::steady_clock::now();
  const auto result = ms::velocity_for_subject(rec, ck ? &ck->model : nullptr, request);

  if (result.notice) std::printf("notice: %s\n", result.notice->c_str());
  for (const auto& k : result.analysis.repetitions)
    std::printf("%-14s start %7zu  duration %5.2f s  max |v| %.4f m/s\n", ms::activity_name(k.class_id).c_str(),
                k.start, k.duration_s, k.max_abs_velocity);

  auto report = report_header("velocity");
  report["data"] = {{"path", a.data}};
  report["checkpoint"] = a.use_true_labels ? ms::json(nullptr) : ms::json(a.checkpoint);
  report["min_segment_len"] = a.min_segment;
  report["still_length"] = a.still_length;
  report["result"] = ms::to_json(result);
  report["wall_clock_s"] = seconds_since(start);
  if (!a.report.empty()) ms::write_json_file(a.report, report);
  return 0;
}

// ------------------------------------------------------------------- sweep

struct SweepArgs {
  std::string data;
  std::string config;
  std::string ratios = "0,0.2,0.4,0.6,0.8,0.9";
  std::string seeds = "1";
  std::size_t jobs = 1;
  std::string out;
};

int run_sweep(const SweepArgs& a) {
  auto config = load_run_config(a.config);
  const auto ratios = parse_number_list(a.ratios, "--ratios");
  std::vector<std::uint64_t> seeds;
  for (double s : parse_number_list(a.seeds, "--seeds")) {
    if (s < 0 || s != std::floor(s)) throw UsageError("--seeds must be non-negative integers");
    seeds.push_back(static_cast<std::uint64_t>(s));
  }
  for (double r : ratios)
    if (r < 0.0 || r > 1.0) throw UsageError("--ratios must lie in [0, 1]");

  const auto ds = ms::read_dataset(a.data);
  ms::check_compatible(ds, config.model);
  fs::create_directories(a.out);
  const auto start = std::chrono::steady_clock::now();
  std::vector<ms::SweepCell> cells;
  ms::json runs = ms::json::array();
  for (double r : ratios) {
    for (auto s : seeds) {
      cells.push_back(ms::losocv_cell(ds, config, r, s, a.jobs));
      const auto& c = cells.back();
      std::printf("mask ratio %-4s seed %-3llu sample macro-f1 %.4f  segmental %.4f  (%.0f s)\n",
                  ms::format_double(r).c_str(), static_cast<unsigned long long>(s), c.summary.mean_sample_macro_f1,
                  c.summary.mean_segmental_macro_f1, c.seconds);
      std::fflush(stdout);
      runs.push_back({{"mask_ratio", r},
                      {"seed", s},
                      {"mean_sample_macro_f1", c.summary.mean_sample_macro_f1},
                      {"mean_segmental_macro_f1", c.summary.mean_segmental_macro_f1},
                      {"summary", ms::to_json(c.summary)}});
    }
  }
  const auto rows = ms::summarize_sweep(cells);
  ms::json table = ms::json::array();
  for (const auto& r : rows) table.push_back(ms::to_json(r));
  auto report = report_header("sweep");
  report["data"] = {{"path", a.data}, {"subjects", ds.subject_ids()}};
  report["config"] = ms::to_json(config);
  report["seeds"] = seeds;
  report["runs"] = runs;
  report["table"] = table;
  report["wall_clock_s"] = seconds_since(start);
  ms::write_json_file(fs::path(a.out) / "sweep.json", report);
  ms::write_text_file(fs::path(a.out) / "sweep.csv", ms::sweep_table_csv(rows));
  std::printf("%s", ms::sweep_table_csv(rows).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Repetition segmentation on 6-axis IMU recordings"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic dataset");
  g->add_option("--subjects", gen.subjects, "Number of subjects")->capture_default_str();
  g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  g->add_option("--plan", gen.plan, "Session plan, e.g. heels=8,knees=8,trunk=5,chair=5")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one model, or one per LOSOCV fold");
  t->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--config", tr.config, "JSON config with optional 'model' and 'train' sections")
      ->check(CLI::ExistingFile);
  t->add_option("--mask-ratio", tr.mask_ratio, "Fraction of patches masked (0 disables masking)");
  t->add_option("--eta", tr.eta, "Weight of the classification loss");
  t->add_option("--epochs", tr.epochs, "Training epochs");
  t->add_option("--seed", tr.seed, "Training seed");
  t->add_option("--out-checkpoint", tr.out, "Checkpoint directory")->required();
  t->add_option("--report", tr.report, "Report path (default <out-checkpoint>/train_report.json)");
  t->add_flag("--losocv", tr.losocv, "Leave-one-subject-out: one checkpoint per held-out subject");
  t->add_option("--jobs", tr.jobs, "Folds trained in parallel")->capture_default_str()->check(CLI::PositiveNumber);

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score checkpoints on their held-out subjects");
  e->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--checkpoints", ev.checkpoints, "Checkpoint files or directories");
  e->add_option("--iou-threshold", ev.iou_threshold, "Segment match threshold")->capture_default_str();
  e->add_option("--min-segment", ev.min_segment, "Ignore predicted segments shorter than this when counting")
      ->capture_default_str();
  e->add_option("--report", ev.report, "Report path");
  e->add_option("--table", ev.table, "CSV table of f1 per mask ratio");
  e->add_flag("--oracle", ev.oracle, "Score ground truth against itself");

  VelocityArgs ve;
  auto* v = app.add_subcommand("velocity", "Chair-rising velocity for one subject");
  v->add_option("--data", ve.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  v->add_option("--checkpoint", ve.checkpoint, "Checkpoint used to predict segments")->check(CLI::ExistingFile);
  v->add_option("--subject", ve.subject, "Subject id")->required();
  v->add_option("--report", ve.report, "Report path");
  v->add_flag("--use-true-labels", ve.use_true_labels, "Use ground-truth segments instead of predictions");
  v->add_option("--still-window", ve.still_window, "Manual still window BEGIN:END (samples)");
  v->add_option("--still-length", ve.still_length, "Automatic still window length (samples)")
      ->capture_default_str()
      ->check(CLI::Range(50, 100000));
  v->add_option("--min-segment", ve.min_segment, "Drop predicted segments shorter than this (samples)")
      ->capture_default_str();

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "LOSOCV across mask ratios and seeds");
  s->add_option("--data", sw.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  s->add_option("--config", sw.config, "JSON config")->check(CLI::ExistingFile);
  s->add_option("--ratios", sw.ratios, "Comma-separated mask ratios")->capture_default_str();
  s->add_option("--seeds", sw.seeds, "Comma-separated seeds")->capture_default_str();
  s->add_option("--jobs", sw.jobs, "Folds trained in parallel")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--out", sw.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& ok) {
    return app.exit(ok);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitUsage;
  }

  try {
    if (*g) return run_generate(gen);
    if (*t) return run_train(tr);
    if (*e) return run_evaluate(ev);
    if (*v) return run_velocity(ve);
    if (*s) return run_sweep(sw);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const ms::NumericalError& err) {
    std::cerr << "numerical failure: " << err.what() << "\n";
    return kExitNumerical;
  } catch (const ms::StillWindowError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitData;
  } catch (const ms::DataError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitData;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
