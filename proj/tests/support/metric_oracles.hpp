#pragma once

// Brute-force references for the evaluation metrics. They share no code with
// the library beyond the result structs: IoU is computed on explicit sample
// sets, matchings are enumerated exhaustively, and counts are tallied per
// sample.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <tuple>
#include <vector>

#include "microseg/metrics.hpp"

namespace microseg::testing {

inline ClassScore oracle_finish(int class_id, std::size_t tp, std::size_t fp, std::size_t fn) {
  ClassScore s;
  s.class_id = class_id;
  s.tp = tp;
  s.fp = fp;
  s.fn = fn;
  s.present = tp + fp + fn > 0;
  s.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  s.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

inline double oracle_macro(const std::vector<ClassScore>& scores) {
  double total = 0.0;
  int n = 0;
  for (const auto& s : scores)
    if (s.class_id != 0 && s.present) {
      total += s.f1;
      ++n;
    }
  return n ? total / n : 0.0;
}

inline ClassF1Report oracle_sample_f1(const LabelSequence& truth, const LabelSequence& pred,
                                      int n_classes) {
  ClassF1Report r;
  for (int c = 0; c < n_classes; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t t = 0; t < truth.size(); ++t) {
      tp += truth[t] == c && pred[t] == c;
      fp += truth[t] != c && pred[t] == c;
      fn += truth[t] == c && pred[t] != c;
    }
    r.classes.push_back(oracle_finish(c, tp, fp, fn));
  }
  r.macro_f1 = oracle_macro(r.classes);
  return r;
}

inline double oracle_iou(const Segment& a, const Segment& b) {
  std::set<std::size_t> sa, sb, un;
  for (auto t = a.start; t < a.end; ++t) sa.insert(t), un.insert(t);
  for (auto t = b.start; t < b.end; ++t) sb.insert(t), un.insert(t);
  std::size_t inter = 0;
  for (auto t : sa) inter += sb.count(t);
  return static_cast<double>(inter) / static_cast<double>(un.size());
}

/// Edge of a matching, ordered so that "greater" means preferred: higher
/// IoU, then lower truth index, then lower prediction index.
struct OracleEdge {
  double iou;
  std::size_t truth;
  std::size_t pred;
  bool operator<(const OracleEdge& o) const {
    if (iou != o.iou) return iou < o.iou;
    if (truth != o.truth) return truth > o.truth;
    return pred > o.pred;
  }
};

/// Enumerates every one-to-one matching over overlapping pairs and keeps the
/// one whose edges, sorted best-first, are lexicographically greatest.
inline std::vector<OracleEdge> oracle_best_matching(const SegmentList& truth,
                                                    const SegmentList& pred) {
  std::vector<OracleEdge> best, current;
  std::vector<bool> used(pred.size(), false);
  auto sorted_desc = [](std::vector<OracleEdge> e) {
    std::sort(e.begin(), e.end(), [](const OracleEdge& a, const OracleEdge& b) { return b < a; });
    return e;
  };
  auto better = [&](const std::vector<OracleEdge>& a, const std::vector<OracleEdge>& b) {
    const auto x = sorted_desc(a), y = sorted_desc(b);
    for (std::size_t i = 0; i < std::min(x.size(), y.size()); ++i) {
      if (y[i] < x[i]) return true;
      if (x[i] < y[i]) return false;
    }
    return x.size() > y.size();
  };
  std::function<void(std::size_t)> go = [&](std::size_t i) {
    if (i == truth.size()) {
      if (better(current, best)) best = current;
      return;
    }
    go(i + 1);
    for (std::size_t j = 0; j < pred.size(); ++j) {
      if (used[j]) continue;
      const double iou = oracle_iou(truth[i], pred[j]);
      if (iou <= 0.0) continue;
      used[j] = true;
      current.push_back({iou, i, j});
      go(i + 1);
      current.pop_back();
      used[j] = false;
    }
  };
  go(0);
  return best;
}

inline ClassF1Report oracle_segmental_f1(const SegmentList& truth, const SegmentList& pred,
                                         int n_classes, double threshold) {
  ClassF1Report r;
  for (int c = 1; c < n_classes; ++c) {
    SegmentList t, p;
    for (const auto& s : truth)
      if (s.class_id == c) t.push_back(s);
    for (const auto& s : pred)
      if (s.class_id == c) p.push_back(s);
    const auto matching = oracle_best_matching(t, p);
    std::size_t tp = 0, fp = 0, fn = 0;
    std::vector<bool> t_hit(t.size(), false), p_hit(p.size(), false);
    for (const auto& e : matching) {
      t_hit[e.truth] = p_hit[e.pred] = true;
      const auto lt = t[e.truth].end - t[e.truth].start;
      const auto lp = p[e.pred].end - p[e.pred].start;
      if (e.iou >= threshold) {
        ++tp;
      } else if (lt < lp) {
        ++fp;
      } else {
        ++fn;
      }
    }
    for (bool h : t_hit) fn += !h;
    for (bool h : p_hit) fp += !h;
    r.classes.push_back(oracle_finish(c, tp, fp, fn));
  }
  r.macro_f1 = oracle_macro(r.classes);
  return r;
}

/// counts[r][c] by scanning all (r, c) cells against every sample.
inline std::vector<std::vector<double>> oracle_confusion(const LabelSequence& truth,
                                                         const LabelSequence& pred,
                                                         int n_classes,
                                                         std::vector<std::vector<std::size_t>>* raw) {
  std::vector<std::vector<double>> norm(n_classes, std::vector<double>(n_classes, 0.0));
  raw->assign(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (int r = 0; r < n_classes; ++r) {
    std::size_t support = 0;
    for (auto y : truth) support += y == r;
    for (int c = 0; c < n_classes; ++c) {
      std::size_t n = 0;
      for (std::size_t t = 0; t < truth.size(); ++t) n += truth[t] == r && pred[t] == c;
      (*raw)[r][c] = n;
      if (support) norm[r][c] = static_cast<double>(n) / static_cast<double>(support);
    }
  }
  return norm;
}

struct OracleLoa {
  double mean, std, lower, upper;
};

/// Population statistics from the pairwise identity
/// var = sum_i sum_j (d_i - d_j)^2 / (2 n^2), evaluated in integers.
inline OracleLoa oracle_loa(const std::vector<long long>& diffs) {
  const long long n = static_cast<long long>(diffs.size());
  long long total = 0, pairwise = 0;
  for (auto d : diffs) total += d;
  for (auto a : diffs)
    for (auto b : diffs) pairwise += (a - b) * (a - b);
  OracleLoa o;
  o.mean = static_cast<double>(total) / static_cast<double>(n);
  o.std = std::sqrt(static_cast<double>(pairwise) / static_cast<double>(2 * n * n));
  o.lower = o.mean - 2.0 * o.std;
  o.upper = o.mean + 2.0 * o.std;
  return o;
}

/// Random label sequence built from runs of 1..max_run samples.
inline LabelSequence random_runs(std::size_t length, int n_classes, std::size_t max_run,
                                 std::mt19937_64& rng) {
  std::uniform_int_distribution<int> cls(0, n_classes - 1);
  std::uniform_int_distribution<std::size_t> run(1, max_run);
  LabelSequence out;
  while (out.size() < length) {
    const int c = cls(rng);
    const auto r = std::min(run(rng), length - out.size());
    out.insert(out.end(), r, c);
  }
  return out;
}

/// A random prediction that mostly follows `truth`: boundaries jitter,
/// some runs change class, some fragments appear.
inline LabelSequence perturb_labels(const LabelSequence& truth, int n_classes,
                                    std::mt19937_64& rng) {
  LabelSequence out = truth;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, n_classes - 1);
  for (std::size_t t = 1; t < out.size(); ++t)
    if (truth[t] != truth[t - 1] && u(rng) < 0.5) {
      const std::size_t shift = 1 + static_cast<std::size_t>(u(rng) * 3);
      for (std::size_t k = t; k < std::min(out.size(), t + shift); ++k) out[k] = truth[t - 1];
    }
  for (std::size_t t = 0; t < out.size(); ++t)
    if (u(rng) < 0.03) {
      const int c = cls(rng);
      const std::size_t len = 1 + static_cast<std::size_t>(u(rng) * 4);
      for (std::size_t k = t; k < std::min(out.size(), t + len); ++k) out[k] = c;
    }
  return out;
}

inline std::size_t max_segments_per_class(const SegmentList& segs, int n_classes) {
  std::size_t m = 0;
  for (int c = 0; c < n_classes; ++c)
    m = std::max<std::size_t>(m, std::count_if(segs.begin(), segs.end(),
                                               [c](const Segment& s) { return s.class_id == c; }));
  return m;
}

}  // namespace microseg::testing
