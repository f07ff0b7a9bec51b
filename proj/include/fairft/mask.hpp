#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "fairft/data.hpp"
#include "fairft/model.hpp"
#include "fairft/objectives.hpp"

namespace fairft {

enum class Objective { prediction, bias };
std::string_view to_string(Objective o);

enum class NormMethod { minmax, zscore };
std::string_view to_string(NormMethod m);
NormMethod parse_norm_method(std::string_view s);  // throws ConfigError

struct ImportanceVector {
  std::vector<double> values;  // indexed by parameter id
  Objective tag = Objective::prediction;
  // Set when every gradient seen was exactly zero.
  bool all_zero_warning = false;
};

struct SoftMask {
  std::vector<double> values;  // M_i in [0, 1], indexed by parameter id
  std::vector<std::size_t> layer_map;
};

struct FimOptions {
  std::size_t bias_batch_size = 64;
  std::uint64_t seed = 0;  // batch order for the bias objective
};

// Mean of squared gradients over samples. Prediction: one sample per
// gradient (class-weighted cross-entropy of that example). Bias: one
// seeded-shuffled mini-batch per gradient (equalized-odds proxy of the batch).
ImportanceVector fim_diag(const DecomposableModel& model, const Dataset& dataset, Objective objective,
                          ClassCounts counts, const FimOptions& opts = {});

// Mean of squared rows; the reduction used by fim_diag.
ImportanceVector mean_squared(std::span<const std::vector<double>> gradients, Objective tag);

// Per-layer normalisation. Weights and offsets of one layer are normalised
// together. A layer with max == min (minmax) or zero std (zscore) maps to 0.
ImportanceVector layer_norm(const ImportanceVector& importance, std::span<const std::size_t> layer_map,
                            NormMethod method);

inline constexpr double kMaskDivEps = 1e-12;

// M_i = |tanh(b_i / (l_i + eps_div))|.
SoftMask soft_mask(const ImportanceVector& bias_norm, const ImportanceVector& pred_norm,
                   std::span<const std::size_t> layer_map, double eps_div = kMaskDivEps);

// 1 for the top round(rate * n) values (ties to the lower id), else 0.
SoftMask hard_mask(const SoftMask& soft, double rate);

// `draws`, when given, receives the number of engine draws consumed.
SoftMask random_mask(std::size_t n, std::uint64_t seed, std::vector<std::size_t> layer_map = {},
                     std::uint64_t* draws = nullptr);

// CSV param_id,layer,i_pred,i_bias,mask with a leading '#' line naming the normalisation.
void write_mask_dump(const std::filesystem::path& path, const SoftMask& mask, const ImportanceVector& pred,
                     const ImportanceVector& bias, NormMethod method);

}  // namespace fairft
