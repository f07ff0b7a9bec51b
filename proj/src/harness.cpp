#include "fairft/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "fairft/error.hpp"
#include "fairft/format.hpp"
#include "fairft/kernels/kernels.hpp"
#include "fairft/seed.hpp"

namespace fairft {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Pre-training and evaluation

void PretrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("pretrain.lr must be positive");
  if (batch_size == 0) throw ConfigError("pretrain.batch_size must be positive");
}

PretrainResult pretrain(const ModelSpec& spec, const Dataset& train, const PretrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw ContractError("pretrain: empty training set");
  train.validate();
  if (train.dim() != spec.input_dim)
    throw DimensionError("pretrain: data has " + std::to_string(train.dim()) + " features, model expects " +
                         std::to_string(spec.input_dim));
  PretrainResult out{build_mlp(spec), {}};
  const std::vector<int> labels = train.labels();
  const ClassCounts counts = ClassCounts::of(labels);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  ad::Tensor& theta = out.model.params();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        std::span<const std::size_t> rows(order.data() + start, end - start);
        std::vector<int> y;
        y.reserve(rows.size());
        for (std::size_t r : rows) y.push_back(labels[r]);
        theta.require_grad();
        theta.zero_grad();
        ad::Tape tape;
        ad::Var loss = wbce(out.model.forward(tape, train.features(rows)), y, counts);
        loss_sum += loss.item();
        ++batches;
        tape.backward(loss);
        kernels::axpy(-cfg.lr, theta.grad(), theta.values());
        if (!theta.all_finite()) throw NumericError("parameters diverged");
      }
    } catch (const NumericError& e) {
      throw TrainingError("pretrain: divergence at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    out.loss_trace.push_back(loss_sum / static_cast<double>(batches));
  }
  theta.drop_grad();
  return out;
}

FairnessReport evaluate(const DecomposableModel& model, const Dataset& test, double threshold) {
  const ad::Tensor p = model.predict(test.features());
  return fairness_report(p.values(), test.labels(), test.attributes(), test.group_count, threshold);
}

json report_to_json(const FairnessReport& r) {
  return {{"auc", r.auc},
          {"group_auc", r.group_auc},
          {"spd", r.spd},
          {"eodds", r.eodds},
          {"threshold", r.threshold},
          {"compared_groups", {r.compared_groups.first, r.compared_groups.second}}};
}

// ---------------------------------------------------------------------------
// Strict config parsing

namespace {

class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& raw(const std::string& key) {
    if (!has(key)) throw ConfigError(path(key) + ": required key missing");
    return j_.at(key);
  }

  std::size_t size(const std::string& key) { return unsigned_of(raw(key), path(key)); }
  std::uint64_t u64(const std::string& key) { return unsigned_of(raw(key), path(key)); }
  double number(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(path(key) + ": expected a number");
    return v.get<double>();
  }
  std::string string(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(path(key) + ": expected a string");
    return v.get<std::string>();
  }

  template <typename T, typename F>
  void opt(const std::string& key, T& dst, F getter) {
    if (has(key)) dst = (this->*getter)(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(path(it.key()) + ": unknown key");
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  static std::uint64_t unsigned_of(const json& v, const std::string& where) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw ConfigError(where + ": expected a non-negative integer");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

ModelSpec parse_model_spec(const json& obj) {
  Reader r(obj, "model_spec");
  ModelSpec s;
  s.input_dim = r.size("input_dim");
  const json& h = r.raw("hidden_dims");
  if (!h.is_array()) throw ConfigError("model_spec.hidden_dims: expected an array");
  for (const json& v : h) s.hidden_dims.push_back(Reader::unsigned_of(v, "model_spec.hidden_dims"));
  r.opt("seed", s.seed, &Reader::u64);
  r.finish();
  try {
    s.validate();
  } catch (const SpecError& e) {
    throw ConfigError(e.what());
  }
  return s;
}

PretrainConfig parse_pretrain(const json& obj) {
  Reader r(obj, "pretrain");
  PretrainConfig c;
  r.opt("epochs", c.epochs, &Reader::size);
  r.opt("lr", c.lr, &Reader::number);
  r.opt("batch_size", c.batch_size, &Reader::size);
  r.opt("seed", c.seed, &Reader::u64);
  r.finish();
  c.validate();
  return c;
}

DataPaths parse_data(const json& obj) {
  Reader r(obj, "data");
  DataPaths d;
  d.train = r.string("train");
  d.test = r.string("test");
  r.opt("external", d.external, &Reader::string);
  r.opt("group_count", d.group_count, &Reader::size);
  r.finish();
  if (d.group_count < 2) throw ConfigError("data.group_count must be at least 2");
  return d;
}

std::size_t default_epochs(std::size_t pretrain_epochs) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(pretrain_epochs))));
}

json debias_to_json(const DebiasConfig& d) {
  return {{"epsilon", d.epsilon},
          {"lr", d.lr},
          {"batch_size", d.batch_size},
          {"epochs_step1", d.epochs_step1},
          {"epochs_step2", d.epochs_step2},
          {"mask_strategy", d.mask.str()},
          {"norm_method", std::string(to_string(d.norm_method))},
          {"reinit", std::string(to_string(d.reinit))},
          {"gamma_rule", d.gamma_rule.str()},
          {"threshold", d.threshold},
          {"seed", d.seed},
          {"steps", std::string(to_string(d.steps))},
          {"fim_batch_size", d.fim_batch_size}};
}

const std::vector<std::string> kAxes = {"external_fraction", "epochs", "mask_strategy", "norm_method",
                                        "reinit", "reinit_quantile", "steps", "variant"};

Sweep parse_sweep(const json& obj) {
  Reader r(obj, "sweep");
  Sweep s;
  s.axis = r.string("axis");
  if (std::find(kAxes.begin(), kAxes.end(), s.axis) == kAxes.end())
    throw ConfigError("sweep.axis: unknown axis '" + s.axis + "'");
  const json& v = r.raw("values");
  if (!v.is_array() || v.empty()) throw ConfigError("sweep.values: expected a non-empty array");
  for (const json& x : v) s.values.push_back(x);
  r.finish();
  return s;
}

std::string value_label(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number()) return format_double(v.get<double>());
  return v.dump();
}

}  // namespace

SyntheticSpec SynthConfig::train_spec(std::uint64_t seed) const {
  return {n_train, d_core, d_bias, rho_train, mu, nu, sigma, seed};
}
SyntheticSpec SynthConfig::external_spec(std::uint64_t seed) const {
  return {n_external, d_core, d_bias, rho_train, mu, nu, sigma, seed};
}
SyntheticSpec SynthConfig::test_spec(std::uint64_t seed) const {
  return {n_test, d_core, d_bias, rho_test, mu, nu, sigma, seed};
}

SynthConfig parse_synth_config(const json& obj) {
  Reader r(obj, "synth_spec");
  SynthConfig s;
  r.opt("n_train", s.n_train, &Reader::size);
  r.opt("n_external", s.n_external, &Reader::size);
  r.opt("n_test", s.n_test, &Reader::size);
  r.opt("d_core", s.d_core, &Reader::size);
  r.opt("d_bias", s.d_bias, &Reader::size);
  r.opt("rho_train", s.rho_train, &Reader::number);
  r.opt("rho_test", s.rho_test, &Reader::number);
  r.opt("mu", s.mu, &Reader::number);
  r.opt("nu", s.nu, &Reader::number);
  r.opt("sigma", s.sigma, &Reader::number);
  r.finish();
  try {
    s.train_spec(0).validate();
    s.external_spec(0).validate();
    s.test_spec(0).validate();
  } catch (const SpecError& e) {
    throw ConfigError(std::string("synth_spec: ") + e.what());
  }
  return s;
}

DebiasConfig parse_debias_config(const json& obj, std::size_t pretrain_epochs) {
  Reader r(obj, "debias");
  DebiasConfig d;
  d.epochs_step1 = d.epochs_step2 = default_epochs(pretrain_epochs);
  r.opt("epsilon", d.epsilon, &Reader::number);
  r.opt("lr", d.lr, &Reader::number);
  r.opt("batch_size", d.batch_size, &Reader::size);
  r.opt("epochs_step1", d.epochs_step1, &Reader::size);
  r.opt("epochs_step2", d.epochs_step2, &Reader::size);
  if (r.has("mask_strategy")) d.mask = MaskChoice::parse(r.string("mask_strategy"));
  if (r.has("norm_method")) d.norm_method = parse_norm_method(r.string("norm_method"));
  if (r.has("reinit")) d.reinit = parse_reinit(r.string("reinit"));
  if (r.has("gamma_rule")) d.gamma_rule = GammaRule::parse(r.string("gamma_rule"));
  r.opt("threshold", d.threshold, &Reader::number);
  r.opt("seed", d.seed, &Reader::u64);
  if (r.has("steps")) d.steps = parse_steps(r.string("steps"));
  r.opt("fim_batch_size", d.fim_batch_size, &Reader::size);
  r.finish();
  d.validate();
  return d;
}

ExperimentConfig parse_experiment_config(const json& doc) {
  Reader r(doc, "");
  ExperimentConfig c;
  c.model_spec = parse_model_spec(r.raw("model_spec"));
  if (r.has("synth_spec")) c.synth = parse_synth_config(doc.at("synth_spec"));
  if (r.has("data")) c.data = parse_data(doc.at("data"));
  if (r.has("pretrain")) c.pretrain = parse_pretrain(doc.at("pretrain"));
  c.debias = parse_debias_config(r.has("debias") ? doc.at("debias") : json::object(), c.pretrain.epochs);
  r.opt("folds", c.folds, &Reader::size);
  if (r.has("seeds")) {
    const json& s = doc.at("seeds");
    if (!s.is_array()) throw ConfigError("seeds: expected an array");
    c.seeds.clear();
    for (const json& v : s) c.seeds.push_back(Reader::unsigned_of(v, "seeds"));
  }
  r.opt("external_fraction", c.external_fraction, &Reader::number);
  if (r.has("sweep")) c.sweep = parse_sweep(doc.at("sweep"));
  r.finish();
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (synth && data) throw ConfigError("give either synth_spec or data, not both");
  if (synth && synth->d_core + synth->d_bias != model_spec.input_dim)
    throw ConfigError("model_spec.input_dim " + std::to_string(model_spec.input_dim) +
                      " does not match synth_spec d_core + d_bias = " +
                      std::to_string(synth->d_core + synth->d_bias));
  if (folds == 0) throw ConfigError("folds must be at least 1");
  if (data && folds == 1 && data->external.empty())
    throw ConfigError("data.external is required when folds = 1");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
  if (uniq.size() != seeds.size()) throw ConfigError("seeds must be distinct");
  if (!(external_fraction > 0.0 && external_fraction <= 1.0))
    throw ConfigError("external_fraction must lie in (0, 1]");
  pretrain.validate();
  debias.validate();
  experiment_arms(*this);  // validates sweep values
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  json doc;
  try {
    doc = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_experiment_config(doc);
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["model_spec"] = {{"input_dim", c.model_spec.input_dim},
                     {"hidden_dims", c.model_spec.hidden_dims},
                     {"seed", c.model_spec.seed}};
  if (c.synth)
    j["synth_spec"] = {{"n_train", c.synth->n_train}, {"n_external", c.synth->n_external},
                       {"n_test", c.synth->n_test},   {"d_core", c.synth->d_core},
                       {"d_bias", c.synth->d_bias},   {"rho_train", c.synth->rho_train},
                       {"rho_test", c.synth->rho_test}, {"mu", c.synth->mu},
                       {"nu", c.synth->nu},           {"sigma", c.synth->sigma}};
  if (c.data) {
    j["data"] = {{"train", c.data->train}, {"test", c.data->test}, {"group_count", c.data->group_count}};
    if (!c.data->external.empty()) j["data"]["external"] = c.data->external;
  }
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"lr", c.pretrain.lr},
                   {"batch_size", c.pretrain.batch_size},
                   {"seed", c.pretrain.seed}};
  j["debias"] = debias_to_json(c.debias);
  j["folds"] = c.folds;
  j["seeds"] = c.seeds;
  j["external_fraction"] = c.external_fraction;
  if (c.sweep) j["sweep"] = {{"axis", c.sweep->axis}, {"values", c.sweep->values}};
  return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config_to_json(cfg).dump())));
  return buf;
}

std::vector<Arm> experiment_arms(const ExperimentConfig& cfg) {
  if (!cfg.sweep) return {{"debiased", cfg.debias, cfg.external_fraction}};
  const Sweep& s = *cfg.sweep;
  std::vector<Arm> arms;
  for (const json& v : s.values) {
    Arm arm{s.axis + "=" + value_label(v), cfg.debias, cfg.external_fraction};
    const std::string where = "sweep.values (" + s.axis + ")";
    auto need_string = [&] {
      if (!v.is_string()) throw ConfigError(where + ": expected strings");
      return v.get<std::string>();
    };
    auto need_number = [&] {
      if (!v.is_number()) throw ConfigError(where + ": expected numbers");
      return v.get<double>();
    };
    if (s.axis == "external_fraction") {
      arm.external_fraction = need_number();
      if (!(arm.external_fraction > 0.0 && arm.external_fraction <= 1.0))
        throw ConfigError(where + ": fractions must lie in (0, 1]");
    } else if (s.axis == "epochs") {
      arm.debias.epochs_step1 = arm.debias.epochs_step2 = Reader::unsigned_of(v, where);
    } else if (s.axis == "mask_strategy") {
      arm.debias.mask = MaskChoice::parse(need_string());
    } else if (s.axis == "norm_method") {
      arm.debias.norm_method = parse_norm_method(need_string());
    } else if (s.axis == "reinit") {
      arm.debias.reinit = parse_reinit(need_string());
    } else if (s.axis == "reinit_quantile") {
      arm.debias.gamma_rule = {true, need_number()};
    } else if (s.axis == "steps") {
      arm.debias.steps = parse_steps(need_string());
    } else if (s.axis == "variant") {
      if (!v.is_object()) throw ConfigError(where + ": expected objects");
      if (!v.contains("name") || !v.at("name").is_string()) throw ConfigError(where + ": each variant needs a name");
      arm.name = v.at("name").get<std::string>();
      json merged = debias_to_json(cfg.debias);
      for (auto it = v.begin(); it != v.end(); ++it) {
        if (it.key() == "name") continue;
        if (it.key() == "external_fraction") {
          if (!it->is_number()) throw ConfigError(where + ": external_fraction must be a number");
          arm.external_fraction = it->get<double>();
          if (!(arm.external_fraction > 0.0 && arm.external_fraction <= 1.0))
            throw ConfigError(where + ": fractions must lie in (0, 1]");
          continue;
        }
        if (!merged.contains(it.key())) throw ConfigError(where + "." + arm.name + "." + it.key() + ": unknown key");
        merged[it.key()] = *it;
      }
      arm.debias = parse_debias_config(merged, cfg.pretrain.epochs);
    }
    arm.debias.validate();
    if (arm.name == "baseline") throw ConfigError(where + ": arm name 'baseline' is reserved");
    for (const Arm& a : arms)
      if (a.name == arm.name) throw ConfigError(where + ": duplicate arm '" + arm.name + "'");
    arms.push_back(std::move(arm));
  }
  return arms;
}

// ---------------------------------------------------------------------------
// Rows

std::string ResultRow::key() const { return std::to_string(fold) + "|" + std::to_string(seed) + "|" + arm; }

std::string rows_header() {
  return "fold,seed,arm,kind,status,auc,spd,eodds,group_auc,threshold,n_external,error";
}

namespace {

std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ' ';
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

template <typename T>
bool parse_num(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return !s.empty() && ec == std::errc() && ptr == end;
}

}  // namespace

std::string format_row(const ResultRow& r) {
  std::string s = std::to_string(r.fold) + ',' + std::to_string(r.seed) + ',' + sanitize(r.arm) + ',' + r.kind +
                  ',' + r.status + ',';
  if (r.status == "ok") {
    append_double(s, r.auc);
    s += ',';
    append_double(s, r.spd);
    s += ',';
    append_double(s, r.eodds);
    s += ',';
    for (std::size_t g = 0; g < r.group_auc.size(); ++g) {
      if (g) s += ';';
      append_double(s, r.group_auc[g]);
    }
  } else {
    s += ",,,";
  }
  s += ',';
  append_double(s, r.threshold);
  s += ',' + std::to_string(r.n_external) + ',' + sanitize(r.error);
  return s;
}

ResultRow parse_row(const std::string& line) {
  const auto f = split(line, ',');
  if (f.size() != 12) throw ReportError("row has " + std::to_string(f.size()) + " fields, expected 12");
  ResultRow r;
  if (!parse_num(f[0], r.fold) || !parse_num(f[1], r.seed)) throw ReportError("bad fold/seed");
  r.arm = f[2];
  r.kind = f[3];
  r.status = f[4];
  if (r.arm.empty()) throw ReportError("empty arm");
  if (r.kind != "baseline" && r.kind != "debiased") throw ReportError("bad kind '" + r.kind + "'");
  if (r.status != "ok" && r.status != "error") throw ReportError("bad status '" + r.status + "'");
  if (r.status == "ok") {
    if (!parse_num(f[5], r.auc) || !parse_num(f[6], r.spd) || !parse_num(f[7], r.eodds))
      throw ReportError("bad metric value");
    for (const std::string& g : split(f[8], ';')) {
      double v = 0.0;
      if (!parse_num(g, v)) throw ReportError("bad group_auc");
      r.group_auc.push_back(v);
    }
  }
  if (!parse_num(f[9], r.threshold) || !parse_num(f[10], r.n_external)) throw ReportError("bad threshold/size");
  r.error = f[11];
  return r;
}

MetricSummary summarize(std::vector<double> values) {
  MetricSummary m;
  if (values.empty()) {
    m.mean = m.std = m.median = std::numeric_limits<double>::quiet_NaN();
    return m;
  }
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  m.mean = sum / n;
  double ss = 0.0;
  for (double v : values) ss += (v - m.mean) * (v - m.mean);
  m.std = std::sqrt(ss / n);
  std::sort(values.begin(), values.end());
  const std::size_t k = values.size();
  m.median = k % 2 ? values[k / 2] : (values[k / 2 - 1] + values[k / 2]) / 2.0;
  return m;
}

std::vector<ArmSummary> aggregate(const std::vector<ResultRow>& rows, const std::vector<std::string>& arms) {
  std::vector<std::string> names{"baseline"};
  names.insert(names.end(), arms.begin(), arms.end());
  std::vector<ArmSummary> out;
  for (const std::string& name : names) {
    ArmSummary s;
    s.arm = name;
    std::vector<double> auc, spd, eodds;
    for (const ResultRow& r : rows) {
      if (r.arm != name) continue;
      if (r.status != "ok") {
        ++s.errors;
        continue;
      }
      auc.push_back(r.auc);
      spd.push_back(r.spd);
      eodds.push_back(r.eodds);
    }
    s.n = auc.size();
    s.auc = summarize(auc);
    s.spd = summarize(spd);
    s.eodds = summarize(eodds);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment runner

namespace {

std::uint64_t unit_seed(std::uint64_t seed, std::size_t fold) {
  return derive_seed(splitmix64(seed) ^ static_cast<std::uint64_t>(fold), "unit");
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct UnitData {
  Dataset train, external_source, test;
};

UnitData build_unit_data(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t fold) {
  UnitData d;
  if (cfg.synth) {
    const SynthConfig& s = *cfg.synth;
    d.test = generate_synthetic(s.test_spec(derive_seed(seed, "test")), Role::test);
    if (cfg.folds == 1) {
      d.train = generate_synthetic(s.train_spec(derive_seed(seed, "train")), Role::train);
      d.external_source = generate_synthetic(s.external_spec(derive_seed(seed, "external")), Role::valid);
    } else {
      const Dataset pool = generate_synthetic(s.train_spec(derive_seed(seed, "train")), Role::train);
      auto folds = kfold_split(pool, cfg.folds, derive_seed(seed, "folds"));
      d.train = std::move(folds[fold].train);
      d.external_source = std::move(folds[fold].valid);
    }
  } else {
    const DataPaths& p = *cfg.data;
    d.test = load_csv(p.test, p.group_count, Role::test);
    const Dataset train = load_csv(p.train, p.group_count, Role::train);
    if (cfg.folds == 1) {
      d.train = train;
      d.external_source = load_csv(p.external, p.group_count, Role::valid);
    } else {
      auto folds = kfold_split(train, cfg.folds, derive_seed(seed, "folds"));
      d.train = std::move(folds[fold].train);
      d.external_source = std::move(folds[fold].valid);
    }
  }
  return d;
}

ResultRow row_from_report(std::size_t fold, std::uint64_t seed, const std::string& arm, const std::string& kind,
                          const FairnessReport& rep, std::size_t n_external) {
  ResultRow r;
  r.fold = fold;
  r.seed = seed;
  r.arm = arm;
  r.kind = kind;
  r.auc = rep.auc;
  r.spd = rep.spd;
  r.eodds = rep.eodds;
  r.group_auc = rep.group_auc;
  r.threshold = rep.threshold;
  r.n_external = n_external;
  return r;
}

ResultRow error_row(std::size_t fold, std::uint64_t seed, const std::string& arm, const std::string& kind,
                    double threshold, const std::string& what) {
  ResultRow r;
  r.fold = fold;
  r.seed = seed;
  r.arm = arm;
  r.kind = kind;
  r.status = "error";
  r.threshold = threshold;
  r.error = what;
  return r;
}

std::string trace_header() { return "fold,seed,arm,step,epoch,loss,auc,spd,eodds"; }

std::string trace_line(const ResultRow& key, const TraceRecord& t) {
  std::string s = std::to_string(key.fold) + ',' + std::to_string(key.seed) + ',' + sanitize(key.arm) + ',' +
                  std::to_string(t.step) + ',' + std::to_string(t.epoch) + ',';
  append_double(s, t.loss);
  for (double v : {t.auc, t.spd, t.eodds}) {
    s += ',';
    if (std::isfinite(v)) append_double(s, v);
  }
  return s;
}

struct Emitted {
  ResultRow row;
  std::vector<std::string> trace;
};

using Emit = std::function<void(Emitted)>;

// Computes the rows of one (fold, seed) unit that are not yet in `done`.
void run_unit(const ExperimentConfig& cfg, const std::vector<Arm>& arms, std::size_t fold, std::uint64_t seed,
              const std::set<std::string>& done, const fs::path& out, const Emit& emit) {
  auto is_done = [&](const std::string& arm) {
    ResultRow k;
    k.fold = fold;
    k.seed = seed;
    k.arm = arm;
    return done.count(k.key()) > 0;
  };
  bool all_done = is_done("baseline");
  for (const Arm& a : arms) all_done = all_done && is_done(a.name);
  if (all_done) return;

  const std::uint64_t u = unit_seed(seed, fold);
  const double thr = cfg.debias.threshold;
  UnitData data;
  DecomposableModel baseline;
  Dataset external;
  try {
    data = build_unit_data(cfg, seed, fold);
    const fs::path cache =
        out / "models" / ("baseline_f" + std::to_string(fold) + "_s" + std::to_string(seed) + ".json");
    if (fs::exists(cache)) {
      baseline = load_model(cache);
    } else {
      ModelSpec spec = cfg.model_spec;
      spec.seed = derive_seed(u ^ cfg.model_spec.seed, "init");
      PretrainConfig pc = cfg.pretrain;
      pc.seed = derive_seed(u ^ cfg.pretrain.seed, "pretrain");
      baseline = pretrain(spec, data.train, pc).model;
      fs::create_directories(cache.parent_path());
      const fs::path tmp = cache.string() + ".tmp";
      save_model(baseline, tmp);
      fs::rename(tmp, cache);
    }
    external = build_external(data.external_source, derive_seed(u, "balance"));
  } catch (const std::exception& e) {
    const std::string what = std::string("baseline: ") + e.what();
    if (!is_done("baseline")) emit({error_row(fold, seed, "baseline", "baseline", thr, what), {}});
    for (const Arm& a : arms)
      if (!is_done(a.name)) emit({error_row(fold, seed, a.name, "debiased", thr, what), {}});
    return;
  }

  if (!is_done("baseline")) {
    try {
      emit({row_from_report(fold, seed, "baseline", "baseline", evaluate(baseline, data.test, thr), external.size()),
            {}});
    } catch (const std::exception& e) {
      emit({error_row(fold, seed, "baseline", "baseline", thr, e.what()), {}});
    }
  }

  for (const Arm& arm : arms) {
    if (is_done(arm.name)) continue;
    try {
      Dataset ext = external;
      if (arm.external_fraction < 1.0)
        ext = subsample_stratified(external, arm.external_fraction, derive_seed(u, "fraction"));
      DebiasConfig dc = arm.debias;
      dc.seed = derive_seed(u ^ arm.debias.seed, "debias");
      DebiasResult res = debias(baseline, ext, dc);
      ResultRow row =
          row_from_report(fold, seed, arm.name, "debiased", evaluate(res.model, data.test, dc.threshold), ext.size());
      Emitted e{row, {}};
      for (const TraceRecord& t : res.trace) e.trace.push_back(trace_line(row, t));
      emit(std::move(e));
    } catch (const std::exception& e) {
      emit({error_row(fold, seed, arm.name, "debiased", arm.debias.threshold, e.what()), {}});
    }
  }
}

// Reads completed rows, dropping a torn final line. Returns parsed rows.
std::vector<ResultRow> load_rows_for_resume(const fs::path& rows_path) {
  std::vector<ResultRow> rows;
  if (!fs::exists(rows_path)) return rows;
  std::ifstream in(rows_path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  in.close();
  const std::size_t last_nl = text.rfind('\n');
  const std::size_t keep = last_nl == std::string::npos ? 0 : last_nl + 1;
  if (keep != text.size()) {
    text.resize(keep);
    std::ofstream fix(rows_path, std::ios::binary | std::ios::trunc);
    fix << text;
  }
  std::istringstream lines(text);
  std::string line;
  std::size_t no = 0;
  while (std::getline(lines, line)) {
    ++no;
    if (no == 1) {
      if (line != rows_header()) throw FormatError(rows_path.string() + ": unexpected header");
      continue;
    }
    if (line.empty()) continue;
    try {
      rows.push_back(parse_row(line));
    } catch (const ReportError& e) {
      throw FormatError(rows_path.string() + ": line " + std::to_string(no) + ": " + e.what());
    }
  }
  return rows;
}

void rewrite_trace(const fs::path& trace_path, const std::set<std::string>& done) {
  std::string kept = trace_header() + "\n";
  if (fs::exists(trace_path)) {
    std::ifstream in(trace_path, std::ios::binary);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (first) {
        first = false;
        continue;
      }
      if (in.eof() && !line.empty()) break;  // torn line
      const auto f = split(line, ',');
      if (f.size() != 9) continue;
      if (done.count(f[0] + "|" + f[1] + "|" + f[2])) kept += line + "\n";
    }
  }
  std::ofstream out(trace_path, std::ios::binary | std::ios::trunc);
  out << kept;
}

json summary_json(const std::vector<ArmSummary>& s) {
  json arr = json::array();
  for (const ArmSummary& a : s) {
    auto m = [](const MetricSummary& x) { return json{{"mean", x.mean}, {"std", x.std}, {"median", x.median}}; };
    arr.push_back({{"arm", a.arm}, {"n", a.n}, {"errors", a.errors}, {"auc", m(a.auc)}, {"spd", m(a.spd)},
                   {"eodds", m(a.eodds)}});
  }
  return arr;
}

void write_text(const fs::path& p, const std::string& s) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write " + tmp.string());
    f << s;
  }
  fs::rename(tmp, p);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const fs::path& out, const RunOptions& opts) {
  cfg.validate();
  if (!cfg.synth && !cfg.data) throw ConfigError("experiment needs synth_spec or data");
  const std::vector<Arm> arms = experiment_arms(cfg);
  std::vector<std::string> arm_names;
  for (const Arm& a : arms) arm_names.push_back(a.name);

  fs::create_directories(out);
  const std::string hash = config_hash(cfg);
  const fs::path config_path = out / "config.json";
  const fs::path rows_path = out / "rows.csv";
  const fs::path trace_path = out / "trace.csv";

  if (fs::exists(config_path)) {
    std::ifstream in(config_path, std::ios::binary);
    json prev;
    try {
      prev = json::parse(in);
    } catch (const json::exception& e) {
      throw FormatError(config_path.string() + ": " + e.what());
    }
    if (!prev.contains("config_hash") || prev.at("config_hash") != hash)
      throw ConfigError(out.string() + " holds results for a different config");
  } else {
    write_text(config_path, json{{"config_hash", hash}, {"code_version", kVersion}, {"config", config_to_json(cfg)}}
                                    .dump(2) +
                                "\n");
  }

  ExperimentResult result;
  result.config_hash = hash;
  result.rows = load_rows_for_resume(rows_path);
  std::set<std::string> done;
  for (const ResultRow& r : result.rows) done.insert(r.key());
  rewrite_trace(trace_path, done);
  if (!fs::exists(rows_path)) write_text(rows_path, rows_header() + "\n");

  const std::string started = utc_now();
  std::ofstream rows_out(rows_path, std::ios::binary | std::ios::app);
  std::ofstream trace_out(trace_path, std::ios::binary | std::ios::app);
  auto commit = [&](const Emitted& e) {
    for (const std::string& t : e.trace) trace_out << t << '\n';
    trace_out.flush();
    rows_out << format_row(e.row) << '\n';
    rows_out.flush();
    result.rows.push_back(e.row);
    ++result.computed;
    if (opts.log) {
      *opts.log << "fold " << e.row.fold << " seed " << e.row.seed << " " << e.row.arm << ": ";
      if (e.row.status == "ok")
        *opts.log << "auc " << e.row.auc << " spd " << e.row.spd << " eodds " << e.row.eodds << "\n";
      else
        *opts.log << "error: " << e.row.error << "\n";
    }
  };

  struct Unit {
    std::size_t fold;
    std::uint64_t seed;
  };
  std::vector<Unit> units;
  for (std::size_t f = 0; f < cfg.folds; ++f)
    for (std::uint64_t s : cfg.seeds) units.push_back({f, s});

  if (opts.jobs <= 1) {
    for (const Unit& u : units) run_unit(cfg, arms, u.fold, u.seed, done, out, commit);
  } else {
    std::vector<std::vector<Emitted>> buffers(units.size());
    std::vector<char> finished(units.size(), 0);
    std::mutex mu;
    std::condition_variable cv;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= units.size()) return;
        std::vector<Emitted> local;
        run_unit(cfg, arms, units[i].fold, units[i].seed, done, out,
                 [&](Emitted e) { local.push_back(std::move(e)); });
        std::lock_guard<std::mutex> lock(mu);
        buffers[i] = std::move(local);
        finished[i] = 1;
        cv.notify_all();
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < std::min(opts.jobs, units.size()); ++j) pool.emplace_back(worker);
    for (std::size_t i = 0; i < units.size(); ++i) {
      std::vector<Emitted> batch;
      {
        std::unique_lock<std::mutex> lock(mu);
        cv.wait(lock, [&] { return finished[i] != 0; });
        batch = std::move(buffers[i]);
      }
      for (const Emitted& e : batch) commit(e);
    }
    for (auto& t : pool) t.join();
  }
  rows_out.close();
  trace_out.close();

  result.summary = aggregate(result.rows, arm_names);
  write_text(out / "summary.json", json{{"config_hash", hash},
                                        {"code_version", kVersion},
                                        {"kernel_backend", std::string(kernels::to_string(kernels::active_backend()))},
                                        {"started_at", started},
                                        {"finished_at", utc_now()},
                                        {"rows", result.rows.size()},
                                        {"aggregates", summary_json(result.summary)}}
                                           .dump(2) +
                                       "\n");
  return result;
}

// ---------------------------------------------------------------------------
// Reporting

Report load_report(const fs::path& dir) {
  const fs::path config_path = dir / "config.json";
  const fs::path rows_path = dir / "rows.csv";
  if (!fs::exists(config_path)) throw ReportError(config_path.string() + " not found");
  if (!fs::exists(rows_path)) throw ReportError(rows_path.string() + " not found");
  std::vector<std::string> arm_names;
  try {
    std::ifstream in(config_path, std::ios::binary);
    const json doc = json::parse(in);
    for (const Arm& a : experiment_arms(parse_experiment_config(doc.at("config")))) arm_names.push_back(a.name);
  } catch (const json::exception& e) {
    throw ReportError(config_path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ReportError(config_path.string() + ": " + e.what());
  }

  std::ifstream in(rows_path, std::ios::binary);
  std::string line;
  std::vector<ResultRow> rows;
  std::vector<std::string> bad;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (no == 1) {
      if (line != rows_header()) throw ReportError(rows_path.string() + ": unexpected header");
      continue;
    }
    if (line.empty()) continue;
    try {
      rows.push_back(parse_row(line));
    } catch (const ReportError& e) {
      const auto f = split(line, ',');
      const std::string key = f.size() >= 3 ? f[0] + "|" + f[1] + "|" + f[2] : "?";
      bad.push_back("line " + std::to_string(no) + " (" + key + "): " + e.what());
    }
  }
  if (!bad.empty()) {
    std::string msg = "malformed rows in " + rows_path.string() + ":";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ReportError(msg);
  }
  std::set<std::string> present;
  for (const ResultRow& r : rows) present.insert(r.arm);
  std::vector<std::string> all{"baseline"};
  all.insert(all.end(), arm_names.begin(), arm_names.end());
  for (const std::string& a : all)
    if (!present.count(a)) throw ReportError("missing arm '" + a + "' in " + rows_path.string());
  return {aggregate(rows, arm_names)};
}

std::string percent_change(double baseline, double value) {
  if (baseline == 0.0 || !std::isfinite(baseline) || !std::isfinite(value)) return "n/a vs baseline";
  const double pct = (value - baseline) / std::abs(baseline) * 100.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", std::abs(pct));
  const std::string mag = buf;
  if (mag == "0.0") return "+0.0% vs baseline";
  return (pct < 0 ? "−" : "+") + mag + "% vs baseline";
}

namespace {

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

}  // namespace

std::string render_text(const Report& r) {
  std::size_t w = 8;
  for (const ArmSummary& a : r.arms) w = std::max(w, a.arm.size());
  std::string out = pad("arm", w + 2) + pad("n", 5) + pad("auc mean±std (median)", 30) +
                    pad("spd mean±std (median)", 30) + "eodds mean±std (median)\n";
  auto cell = [](const MetricSummary& m) {
    return fmt4(m.mean) + " ± " + fmt4(m.std) + " (" + fmt4(m.median) + ")";
  };
  for (const ArmSummary& a : r.arms) {
    std::string n = std::to_string(a.n);
    if (a.errors) n += "+" + std::to_string(a.errors) + "e";
    // ± is two bytes in UTF-8; widen the pad by one so columns line up.
    out += pad(a.arm, w + 2) + pad(n, 5) + pad(cell(a.auc), 31) + pad(cell(a.spd), 31) + cell(a.eodds) + "\n";
  }
  if (r.arms.size() > 1) {
    out += "\n";
    const ArmSummary& b = r.arms.front();
    for (std::size_t i = 1; i < r.arms.size(); ++i) {
      const ArmSummary& a = r.arms[i];
      out += a.arm + ": auc " + percent_change(b.auc.mean, a.auc.mean) + ", spd " +
             percent_change(b.spd.mean, a.spd.mean) + ", eodds " + percent_change(b.eodds.mean, a.eodds.mean) + "\n";
    }
  }
  return out;
}

std::string render_csv(const Report& r) {
  std::string out = "arm,n,errors,metric,mean,std,median,pct_vs_baseline\n";
  const ArmSummary& b = r.arms.front();
  for (const ArmSummary& a : r.arms) {
    const std::pair<const char*, const MetricSummary*> metrics[] = {{"auc", &a.auc}, {"spd", &a.spd}, {"eodds", &a.eodds}};
    const MetricSummary* base[] = {&b.auc, &b.spd, &b.eodds};
    for (std::size_t k = 0; k < 3; ++k) {
      const MetricSummary& m = *metrics[k].second;
      out += sanitize(a.arm) + ',' + std::to_string(a.n) + ',' + std::to_string(a.errors) + ',' + metrics[k].first + ',';
      append_double(out, m.mean);
      out += ',';
      append_double(out, m.std);
      out += ',';
      append_double(out, m.median);
      out += ',';
      if (&a != &b && base[k]->mean != 0.0) append_double(out, (m.mean - base[k]->mean) / std::abs(base[k]->mean) * 100.0);
      out += '\n';
    }
  }
  return out;
}

}  // namespace fairft
