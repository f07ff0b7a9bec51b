#include "fairft/mask.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "fairft/error.hpp"
#include "fairft/format.hpp"
#include "fairft/kernels/kernels.hpp"
#include "fairft/seed.hpp"

namespace fairft {

std::string_view to_string(Objective o) { return o == Objective::bias ? "bias" : "prediction"; }

std::string_view to_string(NormMethod m) { return m == NormMethod::zscore ? "zscore" : "minmax"; }

NormMethod parse_norm_method(std::string_view s) {
  if (s == "minmax") return NormMethod::minmax;
  if (s == "zscore") return NormMethod::zscore;
  throw ConfigError("unknown norm_method '" + std::string(s) + "' (expected minmax or zscore)");
}

namespace {

// Gradient of `loss(probs)` w.r.t. every model parameter on the rows of x.
template <typename Loss>
std::vector<double> parameter_gradient(const DecomposableModel& model, const ad::Tensor& x, Loss&& loss) {
  ad::Tensor theta(model.params().shape(),
                   std::vector<double>(model.params().values().begin(), model.params().values().end()));
  theta.require_grad();
  ad::Tape tape;
  ad::Var probs = model.forward(tape, tape.parameter(theta), x);
  tape.backward(loss(probs));
  return std::vector<double>(theta.grad().begin(), theta.grad().end());
}

}  // namespace

ImportanceVector mean_squared(std::span<const std::vector<double>> gradients, Objective tag) {
  if (gradients.empty()) throw ContractError("fim_diag: no gradients to average");
  const std::size_t n = gradients.front().size();
  ImportanceVector out{std::vector<double>(n, 0.0), tag, false};
  for (const auto& g : gradients) {
    if (g.size() != n) throw ContractError("fim_diag: gradient lengths differ");
    kernels::square_acc(g, out.values);
  }
  const double inv = static_cast<double>(gradients.size());
  bool any = false;
  for (double& v : out.values) {
    v /= inv;
    any = any || v != 0.0;
  }
  out.all_zero_warning = !any;
  return out;
}

ImportanceVector fim_diag(const DecomposableModel& model, const Dataset& dataset, Objective objective,
                          ClassCounts counts, const FimOptions& opts) {
  if (dataset.empty()) throw ContractError("fim_diag: empty dataset");
  const std::vector<int> labels = dataset.labels();
  const std::vector<int> attrs = dataset.attributes();
  std::vector<std::vector<double>> grads;

  if (objective == Objective::prediction) {
    grads.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const std::size_t row[1] = {i};
      const int y[1] = {labels[i]};
      grads.push_back(parameter_gradient(model, dataset.features(row),
                                         [&](ad::Var p) { return wbce(p, y, counts); }));
    }
  } else {
    bool g0 = false, g1 = false;
    for (int a : attrs) {
      if (a != 0 && a != 1) throw ContractError("fim_diag: bias objective needs binary attributes");
      (a == 0 ? g0 : g1) = true;
    }
    if (!g0 || !g1) throw ContractError("fim_diag: bias objective needs both attribute groups present");
    if (opts.bias_batch_size == 0) throw ContractError("fim_diag: bias batch size must be positive");

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(opts.seed);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += opts.bias_batch_size) {
      const std::size_t end = std::min(order.size(), start + opts.bias_batch_size);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      std::vector<int> y, a;
      for (std::size_t r : rows) {
        y.push_back(labels[r]);
        a.push_back(attrs[r]);
      }
      grads.push_back(parameter_gradient(model, dataset.features(rows),
                                         [&](ad::Var p) { return eodds_proxy(p, y, a); }));
    }
  }
  return mean_squared(grads, objective);
}

ImportanceVector layer_norm(const ImportanceVector& importance, std::span<const std::size_t> layer_map,
                            NormMethod method) {
  const std::size_t n = importance.values.size();
  if (layer_map.size() != n)
    throw ContractError("layer_norm: layer map has " + std::to_string(layer_map.size()) + " entries for " +
                        std::to_string(n) + " parameters");
  ImportanceVector out{std::vector<double>(n, 0.0), importance.tag, importance.all_zero_warning};
  if (n == 0) return out;
  const std::size_t layers = *std::max_element(layer_map.begin(), layer_map.end()) + 1;
  std::vector<std::vector<std::size_t>> members(layers);
  for (std::size_t i = 0; i < n; ++i) members[layer_map[i]].push_back(i);

  for (const auto& ids : members) {
    if (ids.empty()) continue;
    if (method == NormMethod::minmax) {
      double lo = importance.values[ids.front()], hi = lo;
      for (std::size_t i : ids) {
        lo = std::min(lo, importance.values[i]);
        hi = std::max(hi, importance.values[i]);
      }
      if (hi == lo) continue;
      const double range = hi - lo;
      for (std::size_t i : ids) out.values[i] = (importance.values[i] - lo) / range;
    } else {
      double sum = 0.0;
      for (std::size_t i : ids) sum += importance.values[i];
      const double mean = sum / static_cast<double>(ids.size());
      double ss = 0.0;
      for (std::size_t i : ids) {
        const double d = importance.values[i] - mean;
        ss += d * d;
      }
      const double sd = std::sqrt(ss / static_cast<double>(ids.size()));
      if (sd == 0.0) continue;
      for (std::size_t i : ids) out.values[i] = (importance.values[i] - mean) / sd;
    }
  }
  return out;
}

SoftMask soft_mask(const ImportanceVector& bias_norm, const ImportanceVector& pred_norm,
                   std::span<const std::size_t> layer_map, double eps_div) {
  const std::size_t n = bias_norm.values.size();
  if (pred_norm.values.size() != n || layer_map.size() != n)
    throw ContractError("soft_mask: length mismatch (bias " + std::to_string(n) + ", prediction " +
                        std::to_string(pred_norm.values.size()) + ", layer map " +
                        std::to_string(layer_map.size()) + ")");
  SoftMask m{std::vector<double>(n), std::vector<std::size_t>(layer_map.begin(), layer_map.end())};
  for (std::size_t i = 0; i < n; ++i) {
    const double num = bias_norm.values[i];
    const double den = pred_norm.values[i] + eps_div;
    double v;
    if (den == 0.0)
      v = num == 0.0 ? 0.0 : 1.0;  // zscore inputs can cancel the guard
    else
      v = std::abs(std::tanh(num / den));
    m.values[i] = std::min(v, 1.0);
  }
  return m;
}

SoftMask hard_mask(const SoftMask& soft, double rate) {
  if (!(rate > 0.0 && rate < 1.0))
    throw ContractError("hard_mask: rate " + std::to_string(rate) + " outside (0, 1)");
  const std::size_t n = soft.values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return soft.values[a] > soft.values[b]; });
  const auto k = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
  SoftMask out{std::vector<double>(n, 0.0), soft.layer_map};
  for (std::size_t j = 0; j < std::min(k, n); ++j) out.values[order[j]] = 1.0;
  return out;
}

SoftMask random_mask(std::size_t n, std::uint64_t seed, std::vector<std::size_t> layer_map,
                     std::uint64_t* draws) {
  if (n == 0) throw ContractError("random_mask: n must be positive");
  CountingEngine rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SoftMask m{std::vector<double>(n), std::move(layer_map)};
  for (double& v : m.values) v = u(rng);
  if (draws) *draws = rng.draws();
  return m;
}

void write_mask_dump(const std::filesystem::path& path, const SoftMask& mask, const ImportanceVector& pred,
                     const ImportanceVector& bias, NormMethod method) {
  const std::size_t n = mask.values.size();
  if (pred.values.size() != n || bias.values.size() != n || mask.layer_map.size() != n)
    throw ContractError("write_mask_dump: length mismatch");
  std::string out = "# normalization=" + std::string(to_string(method)) + " scope=layer(weights+offsets jointly)\n";
  out += "param_id,layer,i_pred,i_bias,mask\n";
  for (std::size_t i = 0; i < n; ++i) {
    out += std::to_string(i);
    out += ',';
    out += std::to_string(mask.layer_map[i]);
    out += ',';
    append_double(out, pred.values[i]);
    out += ',';
    append_double(out, bias.values[i]);
    out += ',';
    append_double(out, mask.values[i]);
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string() + " for writing");
  f << out;
  if (!f) throw FormatError("failed writing " + path.string());
}

}  // namespace fairft
