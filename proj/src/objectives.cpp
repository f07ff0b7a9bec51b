#include "fairft/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "fairft/error.hpp"

namespace fairft {

namespace {

void check_binary(std::span<const int> v, const char* what, const char* op) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] != 0 && v[i] != 1)
      throw ContractError(std::string(op) + ": " + what + "[" + std::to_string(i) + "] = " +
                          std::to_string(v[i]) + " is not binary");
}

void check_length(std::size_t n, std::size_t m, const char* what, const char* op) {
  if (n != m)
    throw DimensionError(std::string(op) + ": " + std::to_string(m) + " " + what + " for " +
                         std::to_string(n) + " probabilities");
}

ad::Var clamped_log(ad::Var probs) { return ad::log(ad::clamp(probs, kProbClamp, 1.0 - kProbClamp)); }

}  // namespace

ClassCounts ClassCounts::of(std::span<const int> labels) {
  ClassCounts c;
  for (int y : labels) (y == 1 ? c.n_pos : c.n_neg) += 1;
  return c;
}

ad::Var wbce(ad::Var probs, std::span<const int> labels, ClassCounts counts) {
  const std::size_t n = probs.value().size();
  check_length(n, labels.size(), "labels", "wbce");
  check_binary(labels, "labels", "wbce");
  const std::size_t total = counts.n_pos + counts.n_neg;
  if (total == 0) throw ContractError("wbce: class counts are both zero");
  const double w_pos = static_cast<double>(counts.n_neg) / static_cast<double>(total);
  const double w_neg = static_cast<double>(counts.n_pos) / static_cast<double>(total);

  std::vector<double> cp(n), cn(n);
  for (std::size_t i = 0; i < n; ++i) {
    cp[i] = labels[i] == 1 ? -w_pos : 0.0;
    cn[i] = labels[i] == 1 ? 0.0 : -w_neg;
  }
  ad::Var p = ad::clamp(probs, kProbClamp, 1.0 - kProbClamp);
  ad::Var log_p = ad::log(p);
  ad::Var log_q = ad::log(ad::affine(p, -1.0, 1.0));
  return ad::add(ad::dot(log_p, cp), ad::dot(log_q, cn));
}

ad::Var eodds_proxy(ad::Var probs, std::span<const int> labels, std::span<const int> attrs) {
  const std::size_t n = probs.value().size();
  check_length(n, labels.size(), "labels", "eodds_proxy");
  check_length(n, attrs.size(), "attributes", "eodds_proxy");
  check_binary(labels, "labels", "eodds_proxy");
  check_binary(attrs, "attributes", "eodds_proxy");

  ad::Var log_p = clamped_log(probs);
  // cell[a][y]
  std::size_t cell[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < n; ++i) ++cell[attrs[i]][labels[i]];

  ad::Var total = ad::dot(log_p, std::vector<double>(n, 0.0));
  for (int y : {1, 0}) {
    const std::size_t n0 = cell[0][y], n1 = cell[1][y];
    if (n0 == 0 || n1 == 0) continue;
    std::vector<double> w(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] != y) continue;
      w[i] = attrs[i] == 0 ? 1.0 / static_cast<double>(n0) : -1.0 / static_cast<double>(n1);
    }
    total = ad::add(total, ad::abs(ad::dot(log_p, w)));
  }
  return total;
}

ad::Var combined_loss(ad::Var probs, std::span<const int> labels, std::span<const int> attrs,
                      ClassCounts counts, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0))
    throw ContractError("combined_loss: beta " + std::to_string(beta) + " outside [0, 1]");
  ad::Var w = wbce(probs, labels, counts);
  ad::Var b = eodds_proxy(probs, labels, attrs);
  return ad::add(ad::mul_scalar(w, beta), ad::mul_scalar(b, 1.0 - beta));
}

// ---------------------------------------------------------------------------

double metric_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw DimensionError("metric_auc: " + std::to_string(scores.size()) + " scores, " +
                         std::to_string(labels.size()) + " labels");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) throw MetricError("metric_auc: score " + std::to_string(i) + " is NaN");
    if (labels[i] == 1)
      pos.push_back(scores[i]);
    else if (labels[i] == 0)
      neg.push_back(scores[i]);
    else
      throw MetricError("metric_auc: label " + std::to_string(i) + " is not binary");
  }
  if (pos.empty() || neg.empty())
    throw MetricError("metric_auc: need at least one positive and one negative (got " +
                      std::to_string(pos.size()) + " / " + std::to_string(neg.size()) + ")");
  std::sort(neg.begin(), neg.end());
  std::uint64_t wins = 0, ties = 0;
  for (double s : pos) {
    auto lo = std::lower_bound(neg.begin(), neg.end(), s);
    auto hi = std::upper_bound(lo, neg.end(), s);
    wins += static_cast<std::uint64_t>(lo - neg.begin());
    ties += static_cast<std::uint64_t>(hi - lo);
  }
  const double pairs = static_cast<double>(pos.size()) * static_cast<double>(neg.size());
  return static_cast<double>(2 * wins + ties) / (2.0 * pairs);
}

namespace {

// Positive-prediction rate per (group, label) cell restricted to groups g0, g1.
struct Rates {
  std::size_t count[2][2] = {{0, 0}, {0, 0}};
  std::size_t hits[2][2] = {{0, 0}, {0, 0}};
};

Rates tally(std::span<const double> scores, std::span<const int> labels, std::span<const int> attrs,
            double threshold, int g0, int g1) {
  Rates r;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int a = attrs[i];
    if (a != g0 && a != g1) continue;
    const int k = a == g0 ? 0 : 1;
    const int y = labels.empty() ? 0 : labels[i];
    ++r.count[k][y];
    if (scores[i] >= threshold) ++r.hits[k][y];
  }
  return r;
}

double rate(std::size_t hits, std::size_t count) {
  return static_cast<double>(hits) / static_cast<double>(count);
}

double spd_between(std::span<const double> scores, std::span<const int> attrs, double threshold, int g0,
                   int g1) {
  const Rates r = tally(scores, {}, attrs, threshold, g0, g1);
  for (int k = 0; k < 2; ++k)
    if (r.count[k][0] == 0)
      throw MetricError("metric_spd: group " + std::to_string(k == 0 ? g0 : g1) + " is empty");
  return std::abs(rate(r.hits[0][0], r.count[0][0]) - rate(r.hits[1][0], r.count[1][0]));
}

double eodds_between(std::span<const double> scores, std::span<const int> labels, std::span<const int> attrs,
                     double threshold, int g0, int g1) {
  const Rates r = tally(scores, labels, attrs, threshold, g0, g1);
  for (int k = 0; k < 2; ++k)
    for (int y = 0; y < 2; ++y)
      if (r.count[k][y] == 0)
        throw MetricError("metric_eodds: empty cell (a=" + std::to_string(k == 0 ? g0 : g1) +
                          ", y=" + std::to_string(y) + ")");
  const double tpr = std::abs(rate(r.hits[0][1], r.count[0][1]) - rate(r.hits[1][1], r.count[1][1]));
  const double fpr = std::abs(rate(r.hits[0][0], r.count[0][0]) - rate(r.hits[1][0], r.count[1][0]));
  return (tpr + fpr) / 2.0;
}

void check_metric_inputs(std::span<const double> scores, std::span<const int> labels,
                         std::span<const int> attrs, const char* op) {
  if (scores.size() != attrs.size() || (!labels.empty() && labels.size() != scores.size()))
    throw DimensionError(std::string(op) + ": scores, labels and attributes differ in length");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != 0 && labels[i] != 1)
      throw MetricError(std::string(op) + ": label " + std::to_string(i) + " is not binary");
  for (std::size_t i = 0; i < attrs.size(); ++i)
    if (attrs[i] < 0) throw MetricError(std::string(op) + ": attribute " + std::to_string(i) + " is negative");
}

void check_binary_attrs(std::span<const int> attrs, const char* op) {
  for (std::size_t i = 0; i < attrs.size(); ++i)
    if (attrs[i] != 0 && attrs[i] != 1)
      throw MetricError(std::string(op) + ": attribute " + std::to_string(i) + " is not binary");
}

}  // namespace

double metric_spd(std::span<const double> scores, std::span<const int> attrs, double threshold) {
  check_metric_inputs(scores, {}, attrs, "metric_spd");
  check_binary_attrs(attrs, "metric_spd");
  return spd_between(scores, attrs, threshold, 0, 1);
}

double metric_eodds(std::span<const double> scores, std::span<const int> labels,
                    std::span<const int> attrs, double threshold) {
  check_metric_inputs(scores, labels, attrs, "metric_eodds");
  check_binary_attrs(attrs, "metric_eodds");
  return eodds_between(scores, labels, attrs, threshold, 0, 1);
}

std::vector<double> group_auc(std::span<const double> scores, std::span<const int> labels,
                              std::span<const int> attrs, std::size_t group_count) {
  check_metric_inputs(scores, labels, attrs, "group_auc");
  std::vector<std::vector<double>> s(group_count);
  std::vector<std::vector<int>> l(group_count);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto a = static_cast<std::size_t>(attrs[i]);
    if (a >= group_count)
      throw MetricError("group_auc: attribute " + std::to_string(a) + " >= group count " +
                        std::to_string(group_count));
    s[a].push_back(scores[i]);
    l[a].push_back(labels[i]);
  }
  std::vector<double> out(group_count);
  for (std::size_t g = 0; g < group_count; ++g) {
    try {
      out[g] = metric_auc(s[g], l[g]);
    } catch (const MetricError& e) {
      throw MetricError("group_auc: group " + std::to_string(g) + ": " + e.what());
    }
  }
  return out;
}

std::pair<std::size_t, std::size_t> best_worst_groups(std::span<const double> group_aucs) {
  if (group_aucs.size() < 2) throw ContractError("best_worst_groups: need at least two groups");
  std::size_t best = 0, worst = 0;
  for (std::size_t g = 1; g < group_aucs.size(); ++g) {
    if (group_aucs[g] > group_aucs[best]) best = g;
    if (group_aucs[g] < group_aucs[worst]) worst = g;
  }
  // All equal: both indices land on group 0; keep the pair distinct.
  if (best == worst) worst = best == 0 ? 1 : 0;
  return {best, worst};
}

FairnessReport fairness_report(std::span<const double> scores, std::span<const int> labels,
                               std::span<const int> attrs, std::size_t group_count, double threshold) {
  FairnessReport r;
  r.threshold = threshold;
  r.auc = metric_auc(scores, labels);
  r.group_auc = group_auc(scores, labels, attrs, group_count);
  if (group_count > 2) r.compared_groups = best_worst_groups(r.group_auc);
  const int g0 = static_cast<int>(r.compared_groups.first);
  const int g1 = static_cast<int>(r.compared_groups.second);
  r.spd = spd_between(scores, attrs, threshold, g0, g1);
  r.eodds = eodds_between(scores, labels, attrs, threshold, g0, g1);
  return r;
}

}  // namespace fairft
