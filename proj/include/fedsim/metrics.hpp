#pragma once
//
// Precision-recall curves and average precision (step-wise PR-AUC), plus
// the client-selection probability calculator.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "fedsim/error.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

struct PRPoint {
  double recall;
  double precision;
};

struct PRCurve {
  std::vector<PRPoint> points;  // starts at (recall 0, precision 1)
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

// One curve point per distinct score, visited from the highest score down.
// Tied scores enter together.
inline PRCurve pr_curve(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw ValidationError("pr_curve: length mismatch");
  PRCurve curve;
  for (double y : labels) (y > 0.5 ? curve.positives : curve.negatives) += 1;
  if (curve.positives == 0) throw ValidationError("pr_curve: no positive labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double total_pos = static_cast<double>(curve.positives);
  curve.points.push_back({0.0, 1.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i)
      (labels[order[i]] > 0.5 ? tp : fp) += 1;
    curve.points.push_back({static_cast<double>(tp) / total_pos,
                            static_cast<double>(tp) / static_cast<double>(tp + fp)});
  }
  return curve;
}

// Average precision: sum over thresholds of (R_i - R_{i-1}) * P_i.
inline double average_precision(const PRCurve& curve) {
  double ap = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i)
    ap += (curve.points[i].recall - curve.points[i - 1].recall) * curve.points[i].precision;
  return ap;
}

inline double pr_auc(std::span<const double> scores, std::span<const double> labels) {
  return average_precision(pr_curve(scores, labels));
}

struct MacroPrAuc {
  double value = 0.0;
  std::size_t scored_classes = 0;
  std::size_t skipped_classes = 0;  // classes with no positive example
};

// Unweighted mean of per-class PR-AUC over classes that have a positive.
inline MacroPrAuc macro_pr_auc(const Matrix& scores, const Matrix& labels) {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols())
    throw ValidationError("macro_pr_auc: score and label shapes differ");
  MacroPrAuc out;
  std::vector<double> s(scores.rows()), y(scores.rows());
  double sum = 0.0;
  for (std::size_t c = 0; c < scores.cols(); ++c) {
    bool any_pos = false;
    for (std::size_t r = 0; r < scores.rows(); ++r) {
      s[r] = scores(r, c);
      y[r] = labels(r, c);
      any_pos = any_pos || y[r] > 0.5;
    }
    if (!any_pos) {
      ++out.skipped_classes;
      continue;
    }
    sum += pr_auc(s, y);
    ++out.scored_classes;
  }
  if (out.scored_classes == 0) throw ValidationError("macro_pr_auc: no class has a positive label");
  out.value = sum / static_cast<double>(out.scored_classes);
  return out;
}

// Cohort size used by the samplers: round-half-up of C*N, at least one.
inline std::size_t cohort_size(std::size_t num_clients, double fraction) {
  const double raw = std::floor(fraction * static_cast<double>(num_clients) + 0.5);
  const auto m = static_cast<std::size_t>(std::max(1.0, raw));
  return std::min(m, num_clients);
}

// Probability that a fixed client is selected at least once in `rounds`
// rounds of uniform sampling with cohort_size(N, C) clients per round.
inline double selection_probability(std::size_t num_clients, double fraction, std::size_t rounds) {
  detail::require(num_clients >= 1, "selection_probability: need at least one client");
  detail::require(rounds >= 1, "selection_probability: need at least one round");
  detail::require(fraction > 0.0 && fraction <= 1.0, "selection_probability: C must be in (0, 1]");
  const double per_round =
      static_cast<double>(cohort_size(num_clients, fraction)) / static_cast<double>(num_clients);
  return 1.0 - std::pow(1.0 - per_round, static_cast<double>(rounds));
}

}  // namespace fedsim
