#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

#include "microseg/io.hpp"

namespace microseg {

/// Non-overlapping windows of every listed subject, in listing order.
inline std::vector<LabeledWindow> windows_for(const Dataset& ds,
                                              const std::vector<std::string>& subjects,
                                              std::size_t window_len) {
  std::vector<LabeledWindow> out;
  for (const auto& id : subjects) {
    const auto& rec = ds.subject(id);
    if (rec.length() < window_len) continue;
    for (auto& w : windowize(rec, window_len, window_len)) out.push_back(std::move(w));
  }
  return out;
}

/// Runs `task(i)` for i in [0, n) on up to `jobs` threads. The first
/// exception is rethrown after all workers stop.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& task) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------- training

struct FoldRun {
  std::optional<std::string> held_out;  // empty when trained on every subject
  std::vector<std::string> train_subjects;
  TrainResult result;
  Model model;
};

inline std::uint64_t model_seed(std::uint64_t seed, std::size_t fold_index) {
  return derive_seed(seed, 1000 + fold_index);
}

/// Trains one model on `train_subjects`.
inline FoldRun train_subjects(const Dataset& ds, const RunConfig& config,
                              std::vector<std::string> subjects, std::optional<std::string> held_out,
                              std::size_t fold_index, const TrainObserver& observer = {}) {
  const auto windows = windows_for(ds, subjects, config.model.window_len);
  if (windows.empty())
    throw DataError("no subject in the training set is at least one window long");
  FoldRun run{std::move(held_out), std::move(subjects), {},
              Model(config.model, model_seed(config.train.seed, fold_index))};
  run.result = train_fold(windows, config.train, run.model, observer);
  return run;
}

/// One model per leave-one-subject-out fold; folds run on `jobs` threads
/// and do not depend on each other, so results are independent of `jobs`.
inline std::vector<FoldRun> train_losocv(const Dataset& ds, const RunConfig& config, std::size_t jobs = 1,
                                         const std::function<void(const FoldRun&)>& on_fold = {}) {
  const auto plan = make_losocv(ds.subject_ids());
  std::vector<std::optional<FoldRun>> slots(plan.size());
  std::mutex report_mutex;
  parallel_for(plan.size(), jobs, [&](std::size_t i) {
    slots[i] = train_subjects(ds, config, plan[i].train, plan[i].held_out, i);
    if (on_fold) {
      std::lock_guard lock(report_mutex);
      on_fold(*slots[i]);
    }
  });
  std::vector<FoldRun> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

inline json checkpoint_meta(const FoldRun& run, const RunConfig& config) {
  return {{"held_out", run.held_out ? json(*run.held_out) : json(nullptr)},
          {"train_subjects", run.train_subjects},
          {"train", to_json(config.train)},
          {"best_epoch", run.result.best_epoch}};
}

inline json train_report_fold(const FoldRun& run, const std::string& checkpoint) {
  json epochs = json::array();
  for (const auto& e : run.result.epochs) epochs.push_back(to_json(e));
  return {{"held_out", run.held_out ? json(*run.held_out) : json(nullptr)},
          {"train_subjects", run.train_subjects},
          {"checkpoint", checkpoint},
          {"steps", run.result.steps.size()},
          {"best_epoch", run.result.best_epoch},
          {"stopped_early", run.result.stopped_early},
          {"epochs", epochs}};
}

// -------------------------------------------------------------- evaluation

/// Truth and prediction over the predicted prefix of one recording.
struct SubjectPrediction {
  std::string subject;
  LabelSequence truth;
  LabelSequence pred;
};

inline SubjectPrediction predict_subject(const Model& model, const Recording& rec) {
  SubjectPrediction p{rec.subject_id, {}, predict_recording(model, rec)};
  p.truth.assign(rec.labels.begin(), rec.labels.begin() + static_cast<std::ptrdiff_t>(p.pred.size()));
  return p;
}

/// Ground truth as its own prediction.
inline SubjectPrediction oracle_subject(const Recording& rec) {
  return {rec.subject_id, rec.labels, rec.labels};
}

struct EvaluationOptions {
  double iou_threshold = 0.75;
  LoaOptions loa;
};

struct SubjectEvaluation {
  std::string subject;
  ClassF1Report sample;
  ClassF1Report segmental;
  ConfusionMatrix confusion;
};

struct EvaluationSummary {
  std::vector<SubjectEvaluation> subjects;
  ConfusionMatrix pooled;
  LoaReport loa;
  double mean_sample_macro_f1 = 0.0;
  double mean_segmental_macro_f1 = 0.0;
};

inline EvaluationSummary evaluate_predictions(const std::vector<SubjectPrediction>& preds,
                                              const EvaluationOptions& options = {}) {
  EvaluationSummary out;
  std::vector<SubjectCounts> counts;
  for (const auto& p : preds) {
    SubjectEvaluation e;
    e.subject = p.subject;
    e.sample = sample_f1(p.truth, p.pred, kNumActivities);
    const auto truth_segs = labels_to_segments(p.truth);
    const auto pred_segs = labels_to_segments(p.pred);
    e.segmental = segmental_iou_f1(truth_segs, pred_segs, kNumActivities, options.iou_threshold);
    e.confusion = confusion_matrix(p.truth, p.pred, kNumActivities);
    accumulate(out.pooled, e.confusion);
    counts.push_back({p.subject, truth_segs, pred_segs});
    out.mean_sample_macro_f1 += e.sample.macro_f1;
    out.mean_segmental_macro_f1 += e.segmental.macro_f1;
    out.subjects.push_back(std::move(e));
  }
  if (!preds.empty()) {
    out.mean_sample_macro_f1 /= static_cast<double>(preds.size());
    out.mean_segmental_macro_f1 /= static_cast<double>(preds.size());
    out.loa = count_loa(counts, kNumActivities, options.loa);
  }
  return out;
}

inline json to_json(const EvaluationSummary& s) {
  json subjects = json::array();
  for (const auto& e : s.subjects) {
    subjects.push_back({{"subject", e.subject},
                        {"sample_f1", to_json(e.sample)},
                        {"segmental_f1", to_json(e.segmental)},
                        {"confusion", to_json(e.confusion)}});
  }
  return {{"mean_sample_macro_f1", s.mean_sample_macro_f1},
          {"mean_segmental_macro_f1", s.mean_segmental_macro_f1},
          {"subjects", subjects},
          {"pooled_confusion", to_json(s.pooled)},
          {"loa", to_json(s.loa)}};
}

/// Subjects a checkpoint is scored on: its held-out subject, or every
/// subject when it was trained on all of them.
inline std::vector<std::string> evaluation_subjects(const Dataset& ds, const json& meta) {
  if (meta.contains("held_out") && meta.at("held_out").is_string()) {
    const auto id = meta.at("held_out").get<std::string>();
    ds.subject(id);
    return {id};
  }
  return ds.subject_ids();
}

inline void check_compatible(const Dataset& ds, const ModelConfig& config) {
  if (config.n_channels != kNumChannels || config.n_classes != kNumActivities)
    throw DataError("checkpoint expects " + std::to_string(config.n_channels) + " channels and " +
                    std::to_string(config.n_classes) + " classes; dataset has " +
                    std::to_string(kNumChannels) + " and " + std::to_string(kNumActivities));
  for (const auto& r : ds.recordings)
    if (r.length() < config.window_len)
      throw DataError("subject " + r.subject_id + " is shorter than one " +
                      std::to_string(config.window_len) + "-sample window");
}

// ------------------------------------------------------------------- sweep

struct SweepCell {
  double mask_ratio = 0.0;
  std::uint64_t seed = 0;
  EvaluationSummary summary;
  double seconds = 0.0;
};

struct SweepRow {
  double mask_ratio = 0.0;
  std::size_t runs = 0;
  double mean_sample_macro_f1 = 0.0;
  double std_sample_macro_f1 = 0.0;
  double mean_segmental_macro_f1 = 0.0;
};

/// Full LOSOCV for one mask ratio and seed, scored on the held-out subjects.
inline SweepCell losocv_cell(const Dataset& ds, RunConfig config, double mask_ratio, std::uint64_t seed,
                             std::size_t jobs, const EvaluationOptions& eval = {}) {
  config.train.mask_ratio = mask_ratio;
  config.train.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  const auto folds = train_losocv(ds, config, jobs);
  std::vector<SubjectPrediction> preds;
  for (const auto& f : folds) preds.push_back(predict_subject(f.model, ds.subject(*f.held_out)));
  SweepCell cell{mask_ratio, seed, evaluate_predictions(preds, eval), 0.0};
  cell.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return cell;
}

inline std::vector<SweepRow> summarize_sweep(const std::vector<SweepCell>& cells) {
  std::vector<SweepRow> rows;
  std::set<double> ratios;
  for (const auto& c : cells) ratios.insert(c.mask_ratio);
  for (double r : ratios) {
    SweepRow row;
    row.mask_ratio = r;
    std::vector<double> f1;
    for (const auto& c : cells) {
      if (c.mask_ratio != r) continue;
      f1.push_back(c.summary.mean_sample_macro_f1);
      row.mean_segmental_macro_f1 += c.summary.mean_segmental_macro_f1;
    }
    row.runs = f1.size();
    for (double v : f1) row.mean_sample_macro_f1 += v;
    row.mean_sample_macro_f1 /= static_cast<double>(row.runs);
    row.mean_segmental_macro_f1 /= static_cast<double>(row.runs);
    for (double v : f1) row.std_sample_macro_f1 += (v - row.mean_sample_macro_f1) * (v - row.mean_sample_macro_f1);
    row.std_sample_macro_f1 = std::sqrt(row.std_sample_macro_f1 / static_cast<double>(row.runs));
    rows.push_back(row);
  }
  return rows;
}

/// Plot-ready table, one row per mask ratio.
inline std::string sweep_table_csv(const std::vector<SweepRow>& rows) {
  std::string out = "mask_ratio,runs,mean_sample_macro_f1,std_sample_macro_f1,mean_segmental_macro_f1\n";
  for (const auto& r : rows) {
    out += format_double(r.mask_ratio) + "," + std::to_string(r.runs) + "," +
           format_double(r.mean_sample_macro_f1) + "," + format_double(r.std_sample_macro_f1) + "," +
           format_double(r.mean_segmental_macro_f1) + "\n";
  }
  return out;
}

inline json to_json(const SweepRow& r) {
  return {{"mask_ratio", r.mask_ratio},
          {"runs", r.runs},
          {"mean_sample_macro_f1", r.mean_sample_macro_f1},
          {"std_sample_macro_f1", r.std_sample_macro_f1},
          {"mean_segmental_macro_f1", r.mean_segmental_macro_f1}};
}

inline const SweepRow& sweep_row(const std::vector<SweepRow>& rows, double mask_ratio) {
  for (const auto& r : rows)
    if (r.mask_ratio == mask_ratio) return r;
  throw std::out_of_range("no sweep row for mask ratio " + format_double(mask_ratio));
}

// ---------------------------------------------------------------- velocity

struct VelocityRequest {
  bool use_true_labels = false;
  /// Predicted segments shorter than this are dropped before analysis.
  std::size_t min_segment_len = 30;
  VelocityOptions options;
};

struct VelocityReport {
  std::string subject;
  std::string label_source;
  std::optional<std::string> notice;
  VelocityAnalysis analysis;
};

inline VelocityReport velocity_for_subject(const Recording& rec, const Model* model,
                                           const VelocityRequest& request = {}) {
  VelocityReport out;
  out.subject = rec.subject_id;
  SegmentList segments;
  if (request.use_true_labels || model == nullptr) {
    out.label_source = "true";
    segments = rec.segments;
  } else {
    out.label_source = "predicted";
    segments = filter_short_segments(labels_to_segments(predict_recording(*model, rec)),
                                     request.min_segment_len);
  }
  const auto vertical = rec.channel(channel::ax);
  out.analysis = analyze_chair_rising(vertical, segments, request.options);
  if (out.analysis.repetitions.empty())
    out.notice = "subject " + rec.subject_id + " has no chair-rising repetitions (" + out.label_source +
                 " labels); kinematics are empty";
  return out;
}

inline json to_json(const VelocityReport& r) {
  json bouts = json::array(), reps = json::array();
  for (const auto& b : r.analysis.bouts) {
    bouts.push_back({{"still_begin", b.still_window.begin},
                     {"still_end", b.still_window.end},
                     {"initial_index", b.initial_index},
                     {"gravity", b.gravity}});
  }
  for (const auto& k : r.analysis.repetitions) reps.push_back(to_json(k));
  return {{"subject", r.subject},
          {"label_source", r.label_source},
          {"notice", r.notice ? json(*r.notice) : json(nullptr)},
          {"sample_rate", kSampleRate},
          {"bouts", bouts},
          {"repetitions", reps},
          {"trace", r.analysis.trace}};
}

}  // namespace microseg
