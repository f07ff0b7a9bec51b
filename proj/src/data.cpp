#include "fairft/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "fairft/error.hpp"
#include "fairft/format.hpp"

namespace fairft {

std::string_view to_string(Role r) {
  switch (r) {
    case Role::train: return "train";
    case Role::valid: return "valid";
    case Role::external: return "external";
    case Role::test: return "test";
  }
  return "unknown";
}

ad::Tensor Dataset::features() const {
  std::vector<std::size_t> all(size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return features(all);
}

ad::Tensor Dataset::features(std::span<const std::size_t> rows) const {
  const std::size_t d = dim();
  std::vector<double> v;
  v.reserve(rows.size() * d);
  for (std::size_t r : rows) v.insert(v.end(), examples[r].x.begin(), examples[r].x.end());
  return ad::Tensor::matrix(rows.size(), d, std::move(v));
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(size());
  for (const auto& e : examples) out.push_back(e.y);
  return out;
}

std::vector<int> Dataset::attributes() const {
  std::vector<int> out;
  out.reserve(size());
  for (const auto& e : examples) out.push_back(e.a);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.group_count = group_count;
  out.role = role;
  out.examples.reserve(rows.size());
  for (std::size_t r : rows) out.examples.push_back(examples.at(r));
  return out;
}

void Dataset::validate() const {
  if (group_count < 2) throw ContractError("dataset: group_count must be at least 2");
  const std::size_t d = dim();
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& e = examples[i];
    const std::string where = "dataset example " + std::to_string(i);
    if (e.x.size() != d) throw ContractError(where + ": feature width differs");
    if (e.y != 0 && e.y != 1) throw ContractError(where + ": label is not binary");
    if (e.a < 0 || static_cast<std::size_t>(e.a) >= group_count)
      throw ContractError(where + ": attribute outside [0, group_count)");
    for (double v : e.x)
      if (!std::isfinite(v)) throw ContractError(where + ": non-finite feature");
  }
}

void SyntheticSpec::validate() const {
  if (!(rho >= 0.5 && rho <= 1.0)) throw SpecError("synthetic spec: rho must lie in [0.5, 1]");
  if (d_core == 0 || d_bias == 0) throw SpecError("synthetic spec: d_core and d_bias must be >= 1");
  if (!(sigma > 0.0)) throw SpecError("synthetic spec: sigma must be positive");
  if (!std::isfinite(mu) || !std::isfinite(nu)) throw SpecError("synthetic spec: non-finite mean");
}

Dataset generate_synthetic(const SyntheticSpec& spec, Role role) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::bernoulli_distribution label(0.5);
  std::bernoulli_distribution coupled(spec.rho);
  std::normal_distribution<double> noise(0.0, spec.sigma);

  Dataset ds;
  ds.group_count = 2;
  ds.role = role;
  ds.examples.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    LabeledExample e;
    e.y = label(rng) ? 1 : 0;
    e.a = coupled(rng) ? e.y : 1 - e.y;
    e.x.reserve(spec.d_core + spec.d_bias);
    const double core_mean = spec.mu * (2.0 * e.y - 1.0);
    const double bias_mean = spec.nu * (2.0 * e.a - 1.0);
    for (std::size_t j = 0; j < spec.d_core; ++j) e.x.push_back(core_mean + noise(rng));
    for (std::size_t j = 0; j < spec.d_bias; ++j) e.x.push_back(bias_mean + noise(rng));
    ds.examples.push_back(std::move(e));
  }
  return ds;
}

namespace {

// Index lists per (group, label) cell.
std::vector<std::array<std::vector<std::size_t>, 2>> cells(const Dataset& ds) {
  std::vector<std::array<std::vector<std::size_t>, 2>> out(ds.group_count);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& e = ds.examples[i];
    out.at(static_cast<std::size_t>(e.a))[static_cast<std::size_t>(e.y)].push_back(i);
  }
  return out;
}

// First `k` of a seeded uniform permutation, returned in ascending order.
std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t k,
                                                    std::mt19937_64& rng) {
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace

Dataset build_external(const Dataset& source, std::uint64_t seed) {
  source.validate();
  const auto by_cell = cells(source);
  std::size_t smallest = 0;
  for (std::size_t g = 0; g < by_cell.size(); ++g) {
    const auto& c = by_cell[g];
    if (c[0].empty() || c[1].empty())
      throw BalancingError("build_external: group " + std::to_string(g) + " has no " +
                           (c[1].empty() ? "positive" : "negative") + " examples");
    const auto size = [](const auto& cc) { return cc[0].size() + cc[1].size(); };
    if (size(c) < size(by_cell[smallest])) smallest = g;
  }

  std::size_t pos = by_cell[smallest][1].size();
  std::size_t neg = by_cell[smallest][0].size();
  bool exact = true;
  for (const auto& c : by_cell)
    if (c[1].size() < pos || c[0].size() < neg) exact = false;
  if (!exact) {
    for (const auto& c : by_cell) {
      pos = std::min(pos, c[1].size());
      neg = std::min(neg, c[0].size());
    }
  }

  std::mt19937_64 rng(seed);
  Dataset out;
  out.group_count = source.group_count;
  out.role = Role::external;
  for (const auto& c : by_cell) {
    auto keep = sample_without_replacement(c[0], neg, rng);
    const auto keep_pos = sample_without_replacement(c[1], pos, rng);
    keep.insert(keep.end(), keep_pos.begin(), keep_pos.end());
    std::sort(keep.begin(), keep.end());
    for (std::size_t i : keep) out.examples.push_back(source.examples[i]);
  }
  out.balance = BalanceInfo{pos + neg, pos, exact};
  return out;
}

Dataset subsample_stratified(const Dataset& source, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ContractError("subsample_stratified: fraction must lie in (0, 1]");
  if (fraction == 1.0) return source;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> keep;
  for (const auto& c : cells(source)) {
    for (const auto& pool : c) {
      if (pool.empty()) continue;
      const auto k = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool.size()))));
      const auto picked = sample_without_replacement(pool, k, rng);
      keep.insert(keep.end(), picked.begin(), picked.end());
    }
  }
  std::sort(keep.begin(), keep.end());
  Dataset out = source.subset(keep);
  if (source.balance) {
    BalanceInfo b = *source.balance;
    const auto per_group = cells(out);
    b.group_size = per_group[0][0].size() + per_group[0][1].size();
    b.group_positives = per_group[0][1].size();
    out.balance = b;
  }
  return out;
}

std::vector<Fold> kfold_split(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw SplitError("kfold_split: k must be at least 2");
  if (dataset.size() < k)
    throw SplitError("kfold_split: k = " + std::to_string(k) + " exceeds dataset size " +
                     std::to_string(dataset.size()));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::size_t> fold_of(dataset.size());
  const std::size_t n = dataset.size();
  for (std::size_t f = 0; f < k; ++f)
    for (std::size_t p = f * n / k; p < (f + 1) * n / k; ++p) fold_of[order[p]] = f;

  std::vector<Fold> folds;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> tr, va;
    for (std::size_t i = 0; i < n; ++i) (fold_of[i] == f ? va : tr).push_back(i);
    Fold fold{dataset.subset(tr), dataset.subset(va)};
    fold.train.role = Role::train;
    fold.valid.role = Role::valid;
    folds.push_back(std::move(fold));
  }
  return folds;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, std::optional<std::size_t> group_count, Role role) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  const std::string file = path.string();

  std::string line;
  if (!std::getline(in, line)) throw ParseError(file + ": empty file (missing header)");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_fields(line);
  if (header.size() < 3 || header[header.size() - 2] != "y" || header.back() != "a")
    throw ParseError(file + ": header must be x0,...,x{d-1},y,a (missing column)");
  const std::size_t d = header.size() - 2;
  for (std::size_t j = 0; j < d; ++j)
    if (header[j] != "x" + std::to_string(j))
      throw ParseError(file + ": header column " + std::to_string(j) + " is '" + std::string(header[j]) +
                       "', expected x" + std::to_string(j));

  Dataset ds;
  ds.role = role;
  int max_a = 0;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = file + ": row " + std::to_string(row);
    const auto fields = split_fields(line);
    if (fields.size() != d + 2)
      throw ParseError(where + ": expected " + std::to_string(d + 2) + " columns, found " +
                       std::to_string(fields.size()));
    LabeledExample e;
    e.x.resize(d);
    for (std::size_t j = 0; j < d; ++j)
      if (!parse_number(fields[j], e.x[j]) || !std::isfinite(e.x[j]))
        throw ParseError(where + ": bad value in column x" + std::to_string(j));
    if (!parse_number(fields[d], e.y) || (e.y != 0 && e.y != 1))
      throw ParseError(where + ": label y must be 0 or 1");
    if (!parse_number(fields[d + 1], e.a) || e.a < 0)
      throw ParseError(where + ": attribute a must be a non-negative integer");
    if (group_count && static_cast<std::size_t>(e.a) >= *group_count)
      throw ParseError(where + ": attribute a = " + std::to_string(e.a) + " not below group count " +
                       std::to_string(*group_count));
    max_a = std::max(max_a, e.a);
    ds.examples.push_back(std::move(e));
  }
  ds.group_count = group_count ? *group_count : std::max<std::size_t>(2, static_cast<std::size_t>(max_a) + 1);
  if (ds.group_count < 2) throw ParseError(file + ": group count must be at least 2");
  return ds;
}

void save_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::string out;
  const std::size_t d = dataset.dim();
  for (std::size_t j = 0; j < d; ++j) out += "x" + std::to_string(j) + ",";
  out += "y,a\n";
  for (const auto& e : dataset.examples) {
    for (double v : e.x) {
      append_double(out, v);
      out += ',';
    }
    out += std::to_string(e.y);
    out += ',';
    out += std::to_string(e.a);
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open " + path.string() + " for writing");
  f << out;
  if (!f) throw ParseError("failed writing " + path.string());
}

}  // namespace fairft
