#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "fairft/autodiff.hpp"

namespace fairft {

// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before any log.
inline constexpr double kProbClamp = 1e-12;

struct ClassCounts {
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;

  static ClassCounts of(std::span<const int> labels);
};

// ---------------------------------------------------------------------------
// Differentiable objectives. `probs` is any taped tensor with one probability
// per example; labels / attrs are aligned with it.

// Class-weighted binary cross-entropy, summed over the batch:
//   sum_i -(N_n/N) y_i log p_i - (N_p/N) (1 - y_i) log(1 - p_i)
// with N_p, N_n taken from `counts` (dataset-level, not per batch).
ad::Var wbce(ad::Var probs, std::span<const int> labels, ClassCounts counts);

// Equalized-odds proxy tpr + fpr, where each term is the absolute gap between
// the mean log-probability of attribute group 0 and group 1 among examples
// with label 1 (tpr) or label 0 (fpr). A term whose cells are not both
// populated in the batch is 0. Attributes must be binary.
ad::Var eodds_proxy(ad::Var probs, std::span<const int> labels, std::span<const int> attrs);

// beta * wbce + (1 - beta) * eodds_proxy, beta in [0, 1].
ad::Var combined_loss(ad::Var probs, std::span<const int> labels, std::span<const int> attrs,
                      ClassCounts counts, double beta);

// ---------------------------------------------------------------------------
// Evaluation metrics

// Mann-Whitney statistic P(s_pos > s_neg) + 0.5 P(tie). Throws MetricError
// unless both classes are present.
double metric_auc(std::span<const double> scores, std::span<const int> labels);

// |P(s >= t | a = 0) - P(s >= t | a = 1)|.
double metric_spd(std::span<const double> scores, std::span<const int> attrs, double threshold);

// (|TPR_0 - TPR_1| + |FPR_0 - FPR_1|) / 2 at the threshold. Every (a, y) cell
// must be populated.
double metric_eodds(std::span<const double> scores, std::span<const int> labels,
                    std::span<const int> attrs, double threshold);

// metric_auc restricted to each group 0..group_count-1.
std::vector<double> group_auc(std::span<const double> scores, std::span<const int> labels,
                              std::span<const int> attrs, std::size_t group_count);

// Indices of the highest- and lowest-AUC groups; ties go to the lower id.
std::pair<std::size_t, std::size_t> best_worst_groups(std::span<const double> group_aucs);

struct FairnessReport {
  double auc = 0.0;
  std::vector<double> group_auc;
  double spd = 0.0;
  double eodds = 0.0;
  double threshold = 0.5;
  // Groups compared by spd / eodds: (0, 1) for binary attributes, otherwise
  // the best- and worst-AUC groups.
  std::pair<std::size_t, std::size_t> compared_groups{0, 1};
};

FairnessReport fairness_report(std::span<const double> scores, std::span<const int> labels,
                               std::span<const int> attrs, std::size_t group_count, double threshold);

}  // namespace fairft
