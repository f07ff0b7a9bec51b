#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fairft/autodiff.hpp"

namespace fairft {

struct LabeledExample {
  std::vector<double> x;
  int y = 0;  // label in {0, 1}
  int a = 0;  // sensitive attribute group in [0, group_count)

  bool operator==(const LabeledExample&) const = default;
};

enum class Role { train, valid, external, test };
std::string_view to_string(Role r);

// Bookkeeping attached by build_external.
struct BalanceInfo {
  std::size_t group_size = 0;       // examples kept per group
  std::size_t group_positives = 0;  // positives kept per group
  // False when the smallest group's exact label counts could not be drawn
  // from every other group and per-group counts fell back to the common minimum.
  bool exact_ratio = true;
};

struct Dataset {
  std::vector<LabeledExample> examples;
  std::size_t group_count = 2;
  Role role = Role::train;
  std::optional<BalanceInfo> balance;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  std::size_t dim() const { return examples.empty() ? 0 : examples.front().x.size(); }

  ad::Tensor features() const;  // (n x dim)
  ad::Tensor features(std::span<const std::size_t> rows) const;
  std::vector<int> labels() const;
  std::vector<int> attributes() const;
  Dataset subset(std::span<const std::size_t> rows) const;

  // Checks invariants: finite x, binary y, a < group_count, consistent widths.
  void validate() const;  // throws ContractError

  bool operator==(const Dataset& o) const {
    return examples == o.examples && group_count == o.group_count && role == o.role;
  }
};

// Generative process per example: y ~ Bernoulli(0.5); a = y with probability
// rho, else 1 - y; core coords ~ N(mu * (2y - 1), sigma^2); bias coords
// ~ N(nu * (2a - 1), sigma^2). Features are laid out [core..., bias...].
struct SyntheticSpec {
  std::size_t n = 1000;
  std::size_t d_core = 4;
  std::size_t d_bias = 4;
  double rho = 0.5;
  double mu = 1.0;
  double nu = 1.5;
  double sigma = 1.0;
  std::uint64_t seed = 0;

  void validate() const;  // throws SpecError
};

Dataset generate_synthetic(const SyntheticSpec& spec, Role role = Role::train);

// Group balancing: every group is subsampled (seeded, without replacement) to
// the size and positive count of the smallest group. Throws BalancingError if
// any group lacks a class.
Dataset build_external(const Dataset& source, std::uint64_t seed);

// Keeps round(fraction * count) examples of every (a, y) cell, at least one
// per non-empty cell.
Dataset subsample_stratified(const Dataset& source, double fraction, std::uint64_t seed);

struct Fold {
  Dataset train;
  Dataset valid;
};

// Seeded shuffle then k contiguous folds whose sizes differ by at most one.
std::vector<Fold> kfold_split(const Dataset& dataset, std::size_t k, std::uint64_t seed);

// CSV: header x0,...,x{d-1},y,a; LF line endings; shortest round-trip floats.
// With no group_count the count is inferred as max(a) + 1 (at least 2).
Dataset load_csv(const std::filesystem::path& path, std::optional<std::size_t> group_count = std::nullopt,
                 Role role = Role::train);
void save_csv(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace fairft
