#include "fairft/finetune.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

#include "fairft/error.hpp"
#include "fairft/format.hpp"
#include "fairft/kernels/kernels.hpp"
#include "fairft/seed.hpp"

namespace fairft {

namespace {

double parse_fraction(std::string_view s, const std::string& what) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) throw ConfigError(what + ": '" + std::string(s) + "' is not a number");
  return v;
}

}  // namespace

std::string MaskChoice::str() const {
  switch (strategy) {
    case MaskStrategy::soft: return "soft";
    case MaskStrategy::random: return "random";
    case MaskStrategy::none: return "none";
    case MaskStrategy::hard: return "hard:" + format_double(rate);
  }
  return "soft";
}

MaskChoice MaskChoice::parse(std::string_view s) {
  if (s == "soft") return {MaskStrategy::soft, 0.5};
  if (s == "random") return {MaskStrategy::random, 0.5};
  if (s == "none") return {MaskStrategy::none, 0.5};
  if (s.starts_with("hard:")) {
    const double r = parse_fraction(s.substr(5), "mask_strategy hard rate");
    if (!(r > 0.0 && r < 1.0)) throw ConfigError("mask_strategy: hard rate must lie in (0, 1)");
    return {MaskStrategy::hard, r};
  }
  throw ConfigError("unknown mask_strategy '" + std::string(s) + "' (expected soft, random, none or hard:<rate>)");
}

std::string_view to_string(Reinit r) {
  switch (r) {
    case Reinit::partial: return "partial";
    case Reinit::full: return "full";
    case Reinit::none: return "none";
  }
  return "partial";
}

Reinit parse_reinit(std::string_view s) {
  if (s == "partial") return Reinit::partial;
  if (s == "full") return Reinit::full;
  if (s == "none") return Reinit::none;
  throw ConfigError("unknown reinit '" + std::string(s) + "' (expected partial, full or none)");
}

std::string GammaRule::str() const { return quantile ? "quantile:" + format_double(q) : "mean"; }

GammaRule GammaRule::parse(std::string_view s) {
  if (s == "mean") return {};
  if (s.starts_with("quantile:")) {
    const double q = parse_fraction(s.substr(9), "gamma_rule quantile");
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("gamma_rule: quantile must lie in [0, 1]");
    return {true, q};
  }
  throw ConfigError("unknown gamma_rule '" + std::string(s) + "' (expected mean or quantile:<q>)");
}

std::string_view to_string(Steps s) {
  switch (s) {
    case Steps::both: return "both";
    case Steps::extractor_only: return "extractor_only";
    case Steps::head_only: return "head_only";
  }
  return "both";
}

Steps parse_steps(std::string_view s) {
  if (s == "both") return Steps::both;
  if (s == "extractor_only") return Steps::extractor_only;
  if (s == "head_only") return Steps::head_only;
  throw ConfigError("unknown steps '" + std::string(s) + "' (expected both, extractor_only or head_only)");
}

void DebiasConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw ConfigError("debias.epsilon must lie in (0, 0.5)");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("debias.lr must be positive");
  if (batch_size == 0) throw ConfigError("debias.batch_size must be positive");
  if (epochs_step1 == 0 || epochs_step2 == 0) throw ConfigError("debias epochs must be positive");
  if (fim_batch_size == 0) throw ConfigError("debias.fim_batch_size must be positive");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("debias.threshold must lie in [0, 1]");
  if (mask.strategy == MaskStrategy::hard && !(mask.rate > 0.0 && mask.rate < 1.0))
    throw ConfigError("mask_strategy: hard rate must lie in (0, 1)");
  if (gamma_rule.quantile && !(gamma_rule.q >= 0.0 && gamma_rule.q <= 1.0))
    throw ConfigError("gamma_rule: quantile must lie in [0, 1]");
}

namespace {

void evaluate_into(TraceRecord& rec, const DecomposableModel& model, const Dataset* monitor, double threshold) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  rec.auc = rec.spd = rec.eodds = nan;
  if (!monitor || monitor->empty()) return;
  const ad::Tensor p = model.predict(monitor->features());
  const auto scores = p.values();
  const auto y = monitor->labels();
  const auto a = monitor->attributes();
  try { rec.auc = metric_auc(scores, y); } catch (const MetricError&) {}
  try { rec.spd = metric_spd(scores, a, threshold); } catch (const MetricError&) {}
  try { rec.eodds = metric_eodds(scores, y, a, threshold); } catch (const MetricError&) {}
}

// Shared SGD loop. `update` applies one step from the full parameter gradient.
template <typename Update>
StepResult run_sgd(DecomposableModel& model, const Dataset& data, const DebiasConfig& cfg, double beta,
                   std::size_t epochs, int step, std::uint64_t batch_seed, const Dataset* monitor,
                   Update&& update) {
  if (data.empty()) throw ContractError("fine-tuning: empty external dataset");
  const std::vector<int> labels = data.labels();
  const std::vector<int> attrs = data.attributes();
  const ClassCounts counts = ClassCounts::of(labels);
  CountingEngine rng(batch_seed);
  StepResult out;
  std::vector<std::size_t> order(data.size());
  ad::Tensor& theta = model.params();

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      std::vector<int> y, a;
      y.reserve(rows.size());
      a.reserve(rows.size());
      for (std::size_t r : rows) {
        y.push_back(labels[r]);
        a.push_back(attrs[r]);
      }
      theta.require_grad();
      theta.zero_grad();
      ad::Tape tape;
      ad::Var probs = model.forward(tape, data.features(rows));
      ad::Var loss = combined_loss(probs, y, a, counts, beta);
      const double value = loss.item();
      if (!std::isfinite(value))
        throw TrainingError("step " + std::to_string(step) + " epoch " + std::to_string(epoch) +
                            ": non-finite loss");
      tape.backward(loss);
      update(theta.grad(), theta.values());
      if (!theta.all_finite())
        throw TrainingError("step " + std::to_string(step) + " epoch " + std::to_string(epoch) +
                            ": parameters diverged");
      loss_sum += value;
      ++batches;
    }
    TraceRecord rec;
    rec.step = step;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(batches);
    evaluate_into(rec, model, monitor, cfg.threshold);
    out.trace.push_back(rec);
  }
  theta.drop_grad();
  out.batch_draws = rng.draws();
  return out;
}

void check_binary_groups(const Dataset& d, const char* op) {
  for (const auto& e : d.examples)
    if (e.a != 0 && e.a != 1)
      throw ContractError(std::string(op) + ": attributes must be binary; reduce groups first");
}

}  // namespace

StepResult step1_finetune_extractor(DecomposableModel& model, const SoftMask& mask, const Dataset& external,
                                    const DebiasConfig& cfg, std::uint64_t batch_seed, const Dataset* monitor) {
  if (mask.values.size() != model.parameter_count())
    throw ContractError("step 1: mask has " + std::to_string(mask.values.size()) + " values, model has " +
                        std::to_string(model.parameter_count()) + " parameters");
  check_binary_groups(external, "step 1");
  const std::size_t ne = model.head_offset();
  std::span<const double> m(mask.values.data(), ne);
  return run_sgd(model, external, cfg, cfg.epsilon, cfg.epochs_step1, 1, batch_seed, monitor,
                 [&](std::span<const double> g, std::span<double> theta) {
                   kernels::masked_sgd(cfg.lr, m, g.first(ne), theta.first(ne));
                 });
}

double head_gamma(std::span<const double> head_mask, const GammaRule& rule) {
  if (head_mask.empty()) throw ContractError("reinit: empty head");
  if (!rule.quantile) {
    double sum = 0.0;
    for (double v : head_mask) sum += v;
    return sum / static_cast<double>(head_mask.size());
  }
  std::vector<double> v(head_mask.begin(), head_mask.end());
  std::sort(v.begin(), v.end());
  const double pos = rule.q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

ReinitResult reinit_head(DecomposableModel& model, const SoftMask& mask, const DebiasConfig& cfg) {
  if (mask.values.size() != model.parameter_count())
    throw ContractError("reinit: mask does not cover the model");
  const std::size_t h0 = model.head_offset();
  const std::size_t n = model.parameter_count();
  if (h0 >= n) throw ContractError("reinit: empty head");
  std::span<const double> head(mask.values.data() + h0, n - h0);
  ReinitResult r;
  r.gamma = head_gamma(head, cfg.gamma_rule);
  auto values = model.params().values();
  for (std::size_t id = h0; id < n; ++id) {
    const bool zero = cfg.reinit == Reinit::full || (cfg.reinit == Reinit::partial && mask.values[id] >= r.gamma);
    if (!zero) continue;
    values[id] = 0.0;
    r.zeroed.push_back(id);
  }
  return r;
}

StepResult step2_finetune_head(DecomposableModel& model, const Dataset& external, const DebiasConfig& cfg,
                               std::uint64_t batch_seed, const Dataset* monitor) {
  check_binary_groups(external, "step 2");
  const std::size_t h0 = model.head_offset();
  return run_sgd(model, external, cfg, 1.0 - cfg.epsilon, cfg.epochs_step2, 2, batch_seed, monitor,
                 [&](std::span<const double> g, std::span<double> theta) {
                   kernels::axpy(-cfg.lr, g.subspan(h0), theta.subspan(h0));
                 });
}

std::pair<std::size_t, std::size_t> select_groups(const DecomposableModel& model, const Dataset& dataset) {
  if (dataset.group_count < 2) throw ContractError("select_groups: need at least two groups");
  const ad::Tensor p = model.predict(dataset.features());
  const auto aucs = group_auc(p.values(), dataset.labels(), dataset.attributes(), dataset.group_count);
  return best_worst_groups(aucs);
}

Dataset restrict_to_groups(const Dataset& dataset, std::size_t best, std::size_t worst) {
  if (best == worst) throw ContractError("restrict_to_groups: groups must differ");
  Dataset out;
  out.group_count = 2;
  out.role = dataset.role;
  for (const auto& e : dataset.examples) {
    const auto a = static_cast<std::size_t>(e.a);
    if (a != best && a != worst) continue;
    LabeledExample c = e;
    c.a = a == best ? 0 : 1;
    out.examples.push_back(std::move(c));
  }
  return out;
}

MaskBundle build_mask(const DecomposableModel& model, const Dataset& external, const DebiasConfig& cfg) {
  check_binary_groups(external, "mask");
  MaskBundle b;
  const std::vector<std::size_t> layers = model.layer_map();
  const std::size_t n = model.parameter_count();
  if (cfg.mask.strategy == MaskStrategy::soft || cfg.mask.strategy == MaskStrategy::hard) {
    const ClassCounts counts = ClassCounts::of(external.labels());
    const FimOptions opts{cfg.fim_batch_size, derive_seed(cfg.seed, "fim-batches")};
    b.pred = fim_diag(model, external, Objective::prediction, counts, opts);
    b.bias = fim_diag(model, external, Objective::bias, counts, opts);
    const ImportanceVector pn = layer_norm(b.pred, layers, cfg.norm_method);
    const ImportanceVector bn = layer_norm(b.bias, layers, cfg.norm_method);
    b.mask = soft_mask(bn, pn, layers);
    if (cfg.mask.strategy == MaskStrategy::hard) b.mask = hard_mask(b.mask, cfg.mask.rate);
  } else {
    b.pred = {std::vector<double>(n, 0.0), Objective::prediction, true};
    b.bias = {std::vector<double>(n, 0.0), Objective::bias, true};
    if (cfg.mask.strategy == MaskStrategy::random)
      b.mask = random_mask(n, derive_seed(cfg.seed, "random-mask"), layers, &b.draws);
    else
      b.mask = {std::vector<double>(n, 1.0), layers};
  }
  return b;
}

DebiasResult debias(const DecomposableModel& model, const Dataset& external, const DebiasConfig& cfg,
                    const Dataset* monitor) {
  cfg.validate();
  external.validate();
  DebiasResult r;
  r.model = model;

  bool binary = external.group_count == 2;
  for (const auto& e : external.examples) binary = binary && (e.a == 0 || e.a == 1);
  Dataset ext = external;
  Dataset mon;
  const Dataset* mon_ptr = monitor;
  if (!binary) {
    r.groups = select_groups(model, external);
    ext = restrict_to_groups(external, r.groups.first, r.groups.second);
    if (monitor) {
      mon = restrict_to_groups(*monitor, r.groups.first, r.groups.second);
      mon_ptr = &mon;
    }
  }
  if (!mon_ptr) mon_ptr = &ext;

  std::size_t g0 = 0, g1 = 0;
  for (const auto& e : ext.examples) (e.a == 0 ? g0 : g1) += 1;
  if (g0 != g1)
    r.warnings.push_back("external dataset is not group-balanced (" + std::to_string(g0) + " vs " +
                         std::to_string(g1) + ")");

  MaskBundle b = build_mask(r.model, ext, cfg);
  r.pred_importance = std::move(b.pred);
  r.bias_importance = std::move(b.bias);
  r.mask = std::move(b.mask);
  r.mask_draws = b.draws;
  if (r.pred_importance.all_zero_warning && (cfg.mask.strategy == MaskStrategy::soft ||
                                             cfg.mask.strategy == MaskStrategy::hard))
    r.warnings.push_back("prediction importance is all zero");
  if (r.bias_importance.all_zero_warning && (cfg.mask.strategy == MaskStrategy::soft ||
                                             cfg.mask.strategy == MaskStrategy::hard))
    r.warnings.push_back("bias importance is all zero");

  if (cfg.steps != Steps::head_only) {
    StepResult s = step1_finetune_extractor(r.model, r.mask, ext, cfg, derive_seed(cfg.seed, "step1-batches"),
                                            mon_ptr);
    r.trace.insert(r.trace.end(), s.trace.begin(), s.trace.end());
    r.batch_draws += s.batch_draws;
  }
  r.reinit = reinit_head(r.model, r.mask, cfg);
  if (cfg.steps != Steps::extractor_only) {
    StepResult s = step2_finetune_head(r.model, ext, cfg, derive_seed(cfg.seed, "step2-batches"), mon_ptr);
    r.trace.insert(r.trace.end(), s.trace.begin(), s.trace.end());
    r.batch_draws += s.batch_draws;
  }
  return r;
}

}  // namespace fairft
