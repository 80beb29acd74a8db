#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace microseg {

using LabelSequence = std::vector<int>;

inline constexpr int kBackgroundClass = 0;

/// Half-open run [start, end) of one class.
struct Segment {
  std::size_t start = 0;
  std::size_t end = 0;
  int class_id = 0;

  std::size_t length() const { return end - start; }
  bool operator==(const Segment&) const = default;
};

using SegmentList = std::vector<Segment>;

/// Maximal constant-class runs, background excluded.
inline SegmentList labels_to_segments(const LabelSequence& labels,
                                      int background = kBackgroundClass) {
  SegmentList out;
  std::size_t t = 0;
  while (t < labels.size()) {
    std::size_t end = t + 1;
    while (end < labels.size() && labels[end] == labels[t]) ++end;
    if (labels[t] != background) out.push_back({t, end, labels[t]});
    t = end;
  }
  return out;
}

/// Expands segments into a label sequence of `length` samples, filling gaps
/// with background.
inline LabelSequence segments_to_labels(const SegmentList& segments,
                                        std::size_t length,
                                        int background = kBackgroundClass) {
  LabelSequence out(length, background);
  for (const auto& s : segments) {
    if (s.end > length) throw std::out_of_range("segment exceeds sequence length");
    std::fill(out.begin() + static_cast<std::ptrdiff_t>(s.start),
              out.begin() + static_cast<std::ptrdiff_t>(s.end), s.class_id);
  }
  return out;
}

/// Checks ordering, non-overlap, positive length and maximality.
inline void validate_segments(const SegmentList& segments) {
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    if (s.end <= s.start) throw std::invalid_argument("segment with end <= start");
    if (i > 0) {
      const auto& p = segments[i - 1];
      if (s.start < p.end) throw std::invalid_argument("segments overlap or are unordered");
      if (s.start == p.end && s.class_id == p.class_id)
        throw std::invalid_argument("adjacent same-class segments must be merged");
    }
  }
}

/// Drops segments shorter than `min_length` samples. Off by default in
/// counting; predicted fragments are otherwise each one repetition.
inline SegmentList filter_short_segments(const SegmentList& segments,
                                         std::size_t min_length) {
  SegmentList out;
  for (const auto& s : segments)
    if (s.length() >= min_length) out.push_back(s);
  return out;
}

struct ClassScore {
  int class_id = 0;
  bool present = false;  // false when the class occurs in neither truth nor pred
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct ClassF1Report {
  std::vector<ClassScore> classes;
  /// Mean f1 over present classes, background excluded.
  double macro_f1 = 0.0;

  const ClassScore& of(int class_id) const {
    for (const auto& c : classes)
      if (c.class_id == class_id) return c;
    throw std::out_of_range("class " + std::to_string(class_id) + " not in report");
  }
};

namespace detail {

inline void finish_score(ClassScore& s) {
  s.present = (s.tp + s.fp + s.fn) > 0;
  s.precision = (s.tp + s.fp) ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp) : 0.0;
  s.recall = (s.tp + s.fn) ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn) : 0.0;
  s.f1 = (s.precision + s.recall) > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
}

inline double macro_over_present(const std::vector<ClassScore>& classes, int background) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& c : classes) {
    if (!c.present || c.class_id == background) continue;
    total += c.f1;
    ++n;
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

}  // namespace detail

/// Sample-wise one-vs-rest precision/recall/f1 per class.
inline ClassF1Report sample_f1(const LabelSequence& truth, const LabelSequence& pred,
                               std::size_t n_classes, int background = kBackgroundClass) {
  if (truth.size() != pred.size()) {
    throw std::invalid_argument("sample_f1: truth has " + std::to_string(truth.size()) +
                                " samples, prediction has " + std::to_string(pred.size()));
  }
  ClassF1Report report;
  report.classes.resize(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) report.classes[c].class_id = static_cast<int>(c);
  for (std::size_t t = 0; t < truth.size(); ++t) {
    const auto y = static_cast<std::size_t>(truth[t]);
    const auto p = static_cast<std::size_t>(pred[t]);
    if (y >= n_classes || p >= n_classes) throw std::out_of_range("label outside class range");
    if (y == p) {
      ++report.classes[y].tp;
    } else {
      ++report.classes[p].fp;
      ++report.classes[y].fn;
    }
  }
  for (auto& c : report.classes) detail::finish_score(c);
  report.macro_f1 = detail::macro_over_present(report.classes, background);
  return report;
}

inline double intersection_over_union(const Segment& a, const Segment& b) {
  const std::size_t lo = std::max(a.start, b.start);
  const std::size_t hi = std::min(a.end, b.end);
  if (hi <= lo) return 0.0;
  const std::size_t inter = hi - lo;
  const std::size_t uni = a.length() + b.length() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

/// One truth/prediction pairing produced by the segment matcher.
struct SegmentMatch {
  std::size_t truth_index;
  std::size_t pred_index;
  double iou;
};

/// Greedy one-to-one matching within one class: overlapping pairs are taken
/// in order of decreasing IoU (ties by truth index, then prediction index),
/// each segment used at most once.
inline std::vector<SegmentMatch> match_segments(const SegmentList& truth,
                                                const SegmentList& pred) {
  std::vector<SegmentMatch> candidates;
  for (std::size_t i = 0; i < truth.size(); ++i)
    for (std::size_t j = 0; j < pred.size(); ++j) {
      const double iou = intersection_over_union(truth[i], pred[j]);
      if (iou > 0.0) candidates.push_back({i, j, iou});
    }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const SegmentMatch& a, const SegmentMatch& b) { return a.iou > b.iou; });
  std::vector<bool> truth_used(truth.size(), false), pred_used(pred.size(), false);
  std::vector<SegmentMatch> out;
  for (const auto& m : candidates) {
    if (truth_used[m.truth_index] || pred_used[m.pred_index]) continue;
    truth_used[m.truth_index] = pred_used[m.pred_index] = true;
    out.push_back(m);
  }
  return out;
}

/// Classifies matched and unmatched segments of one class into TP/FP/FN.
/// Matched pairs below threshold count as FP when the true segment is
/// strictly shorter than the predicted one, otherwise FN.
inline ClassScore score_segments(const SegmentList& truth, const SegmentList& pred,
                                 const std::vector<SegmentMatch>& matches, double threshold,
                                 int class_id) {
  ClassScore s;
  s.class_id = class_id;
  for (const auto& m : matches) {
    if (m.iou >= threshold) {
      ++s.tp;
    } else if (truth[m.truth_index].length() < pred[m.pred_index].length()) {
      ++s.fp;
    } else {
      ++s.fn;
    }
  }
  s.fp += pred.size() - matches.size();
  s.fn += truth.size() - matches.size();
  detail::finish_score(s);
  return s;
}

inline std::map<int, SegmentList> split_by_class(const SegmentList& segments) {
  std::map<int, SegmentList> out;
  for (const auto& s : segments) out[s.class_id].push_back(s);
  return out;
}

/// Segment-wise IoU f1 per foreground class.
inline ClassF1Report segmental_iou_f1(const SegmentList& truth, const SegmentList& pred,
                                      std::size_t n_classes, double threshold = 0.75,
                                      int background = kBackgroundClass) {
  validate_segments(truth);
  validate_segments(pred);
  auto truth_by = split_by_class(truth);
  auto pred_by = split_by_class(pred);
  ClassF1Report report;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const int id = static_cast<int>(c);
    if (id == background) continue;
    const auto& t = truth_by[id];
    const auto& p = pred_by[id];
    report.classes.push_back(score_segments(t, p, match_segments(t, p), threshold, id));
  }
  report.macro_f1 = detail::macro_over_present(report.classes, background);
  return report;
}

/// Row-normalized confusion matrix plus the raw counts it came from.
struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::vector<std::size_t>> counts;  // [true][pred]
  std::vector<std::vector<double>> normalized;   // rows sum to 1 where supported

  double recall(int class_id) const {
    return normalized[static_cast<std::size_t>(class_id)][static_cast<std::size_t>(class_id)];
  }
};

inline ConfusionMatrix confusion_matrix(const LabelSequence& truth, const LabelSequence& pred,
                                        std::size_t n_classes) {
  if (truth.size() != pred.size()) {
    throw std::invalid_argument("confusion_matrix: sequence lengths differ");
  }
  ConfusionMatrix cm;
  cm.n_classes = n_classes;
  cm.counts.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
  cm.normalized.assign(n_classes, std::vector<double>(n_classes, 0.0));
  for (std::size_t t = 0; t < truth.size(); ++t)
    ++cm.counts.at(static_cast<std::size_t>(truth[t])).at(static_cast<std::size_t>(pred[t]));
  for (std::size_t r = 0; r < n_classes; ++r) {
    std::size_t support = 0;
    for (auto v : cm.counts[r]) support += v;
    if (support == 0) continue;
    for (std::size_t c = 0; c < n_classes; ++c)
      cm.normalized[r][c] = static_cast<double>(cm.counts[r][c]) / static_cast<double>(support);
  }
  return cm;
}

inline void accumulate(ConfusionMatrix& into, const ConfusionMatrix& other) {
  if (into.n_classes == 0) {
    into = other;
    return;
  }
  for (std::size_t r = 0; r < into.n_classes; ++r)
    for (std::size_t c = 0; c < into.n_classes; ++c) into.counts[r][c] += other.counts[r][c];
  for (std::size_t r = 0; r < into.n_classes; ++r) {
    std::size_t support = 0;
    for (auto v : into.counts[r]) support += v;
    for (std::size_t c = 0; c < into.n_classes; ++c)
      into.normalized[r][c] =
          support ? static_cast<double>(into.counts[r][c]) / static_cast<double>(support) : 0.0;
  }
}

struct SubjectCounts {
  std::string subject;
  SegmentList truth;
  SegmentList pred;
};

struct ClassAgreement {
  int class_id = 0;
  double mean = 0.0;
  double std = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (true, predicted) per subject
};

struct LoaReport {
  std::vector<ClassAgreement> classes;
};

struct LoaOptions {
  bool sample_std = false;       // population std unless set
  std::size_t min_segment_len = 0;  // 0 = keep every predicted fragment
};

/// Limits of agreement on per-subject repetition counts:
/// mean(true - pred) +/- 2 * std(true - pred).
inline LoaReport count_loa(const std::vector<SubjectCounts>& subjects, std::size_t n_classes,
                           LoaOptions options = {}, int background = kBackgroundClass) {
  if (subjects.size() < 2) {
    throw std::invalid_argument("count_loa needs at least 2 subjects, got " +
                                std::to_string(subjects.size()));
  }
  LoaReport report;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const int id = static_cast<int>(c);
    if (id == background) continue;
    ClassAgreement a;
    a.class_id = id;
    // Differences are integers, so the moments are accumulated exactly and
    // the statistics do not depend on subject order.
    long long n = 0, sum = 0, sum_sq = 0;
    for (const auto& s : subjects) {
      const SegmentList pred = options.min_segment_len
                                   ? filter_short_segments(s.pred, options.min_segment_len)
                                   : s.pred;
      const auto count = [id](const SegmentList& l) {
        return static_cast<std::size_t>(std::count_if(
            l.begin(), l.end(), [id](const Segment& g) { return g.class_id == id; }));
      };
      const std::size_t t = count(s.truth), p = count(pred);
      a.pairs.emplace_back(t, p);
      const long long d = static_cast<long long>(t) - static_cast<long long>(p);
      ++n;
      sum += d;
      sum_sq += d * d;
    }
    const long long spread = n * sum_sq - sum * sum;  // n^2 * population variance
    const long long denom = options.sample_std ? n * (n - 1) : n * n;
    a.mean = static_cast<double>(sum) / static_cast<double>(n);
    a.std = std::sqrt(static_cast<double>(spread) / static_cast<double>(denom));
    a.lower = a.mean - 2.0 * a.std;
    a.upper = a.mean + 2.0 * a.std;
    report.classes.push_back(std::move(a));
  }
  return report;
}

}  // namespace microseg
