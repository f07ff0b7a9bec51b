#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fairft/data.hpp"
#include "fairft/mask.hpp"
#include "fairft/model.hpp"
#include "fairft/objectives.hpp"

namespace fairft {

enum class MaskStrategy { soft, hard, random, none };

struct MaskChoice {
  MaskStrategy strategy = MaskStrategy::soft;
  double rate = 0.5;  // hard only

  std::string str() const;
  static MaskChoice parse(std::string_view s);  // soft | random | none | hard:<rate>
  bool operator==(const MaskChoice&) const = default;
};

enum class Reinit { partial, full, none };
std::string_view to_string(Reinit r);
Reinit parse_reinit(std::string_view s);

struct GammaRule {
  bool quantile = false;
  double q = 0.5;

  std::string str() const;
  static GammaRule parse(std::string_view s);  // mean | quantile:<q>
  bool operator==(const GammaRule&) const = default;
};

// Which fine-tuning steps run. Single-step variants exist for ablations.
enum class Steps { both, extractor_only, head_only };
std::string_view to_string(Steps s);
Steps parse_steps(std::string_view s);

struct DebiasConfig {
  double epsilon = 0.1;  // step 1 uses beta = epsilon, step 2 beta = 1 - epsilon
  double lr = 0.01;
  std::size_t batch_size = 64;
  std::size_t epochs_step1 = 20;
  std::size_t epochs_step2 = 20;
  MaskChoice mask;
  NormMethod norm_method = NormMethod::minmax;
  Reinit reinit = Reinit::partial;
  GammaRule gamma_rule;
  double threshold = 0.5;
  std::uint64_t seed = 0;
  Steps steps = Steps::both;
  std::size_t fim_batch_size = 64;

  void validate() const;  // throws ConfigError
};

struct TraceRecord {
  int step = 0;  // 1 or 2
  std::size_t epoch = 0;
  double loss = 0.0;  // mean batch loss over the epoch
  // Evaluation on the monitor set after the epoch; NaN where undefined.
  double auc = 0.0;
  double spd = 0.0;
  double eodds = 0.0;
};

struct StepResult {
  std::vector<TraceRecord> trace;
  std::uint64_t batch_draws = 0;
};

// Masked SGD on extractor parameters: theta_i -= lr * M_i * g_i, beta = epsilon.
// Head parameters are not written. Batch order comes from `batch_seed`.
StepResult step1_finetune_extractor(DecomposableModel& model, const SoftMask& mask, const Dataset& external,
                                    const DebiasConfig& cfg, std::uint64_t batch_seed,
                                    const Dataset* monitor = nullptr);

struct ReinitResult {
  double gamma = 0.0;
  std::vector<std::size_t> zeroed;  // parameter ids set to 0
};

// Zeroes head parameters per cfg.reinit: partial zeroes ids with M_i >= gamma.
ReinitResult reinit_head(DecomposableModel& model, const SoftMask& mask, const DebiasConfig& cfg);

// Threshold from the head's mask values under the rule (mean or linear-interpolated quantile).
double head_gamma(std::span<const double> head_mask, const GammaRule& rule);

// Plain SGD on head parameters with beta = 1 - epsilon. Extractor untouched.
StepResult step2_finetune_head(DecomposableModel& model, const Dataset& external, const DebiasConfig& cfg,
                               std::uint64_t batch_seed, const Dataset* monitor = nullptr);

// Highest- and lowest-AUC groups of `dataset` under `model`; ties to the lower id.
std::pair<std::size_t, std::size_t> select_groups(const DecomposableModel& model, const Dataset& dataset);

// Keeps only groups best and worst, relabelled best -> 0, worst -> 1.
Dataset restrict_to_groups(const Dataset& dataset, std::size_t best, std::size_t worst);

struct DebiasResult {
  DecomposableModel model;
  ImportanceVector pred_importance;
  ImportanceVector bias_importance;
  SoftMask mask;
  ReinitResult reinit;
  std::vector<TraceRecord> trace;
  std::pair<std::size_t, std::size_t> groups{0, 1};
  std::vector<std::string> warnings;
  // Draw counts per random stream, for audits.
  std::uint64_t mask_draws = 0;
  std::uint64_t batch_draws = 0;
};

// The full pipeline: importance estimation, mask, step 1, head
// re-initialisation, step 2. `monitor` (default: the external set) is
// evaluated after every epoch.
DebiasResult debias(const DecomposableModel& model, const Dataset& external, const DebiasConfig& cfg,
                    const Dataset* monitor = nullptr);

// Mask the pipeline would use for cfg.mask, with importance vectors.
struct MaskBundle {
  ImportanceVector pred;
  ImportanceVector bias;
  SoftMask mask;
  std::uint64_t draws = 0;
};
MaskBundle build_mask(const DecomposableModel& model, const Dataset& external, const DebiasConfig& cfg);

}  // namespace fairft
