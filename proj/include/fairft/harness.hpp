#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairft/data.hpp"
#include "fairft/finetune.hpp"
#include "fairft/model.hpp"
#include "fairft/objectives.hpp"

namespace fairft {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Pre-training and evaluation

struct PretrainConfig {
  std::size_t epochs = 200;
  double lr = 0.01;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

struct PretrainResult {
  DecomposableModel model;
  std::vector<double> loss_trace;  // mean batch loss per epoch
};

// Class-weighted cross-entropy ERM with plain SGD; weights from train-set counts.
PretrainResult pretrain(const ModelSpec& spec, const Dataset& train, const PretrainConfig& cfg);

FairnessReport evaluate(const DecomposableModel& model, const Dataset& test, double threshold);

nlohmann::json report_to_json(const FairnessReport& r);

// ---------------------------------------------------------------------------
// Experiment configuration (strict JSON: unknown keys are errors)

struct SynthConfig {
  std::size_t n_train = 4000;
  std::size_t n_external = 2000;
  std::size_t n_test = 4000;
  std::size_t d_core = 4;
  std::size_t d_bias = 4;
  double rho_train = 0.95;
  double rho_test = 0.5;
  double mu = 1.0;
  double nu = 1.5;
  double sigma = 1.0;

  SyntheticSpec train_spec(std::uint64_t seed) const;
  SyntheticSpec external_spec(std::uint64_t seed) const;
  SyntheticSpec test_spec(std::uint64_t seed) const;
};

struct DataPaths {
  std::string train;
  std::string test;
  std::string external;  // optional when folds >= 2
  std::size_t group_count = 2;
};

struct Sweep {
  // external_fraction | epochs | mask_strategy | norm_method | reinit |
  // reinit_quantile | steps | variant
  std::string axis;
  std::vector<nlohmann::json> values;
};

struct ExperimentConfig {
  ModelSpec model_spec;
  std::optional<SynthConfig> synth;
  std::optional<DataPaths> data;
  PretrainConfig pretrain;
  DebiasConfig debias;
  std::size_t folds = 1;
  std::vector<std::uint64_t> seeds{0};
  double external_fraction = 1.0;
  std::optional<Sweep> sweep;

  void validate() const;  // throws ConfigError
};

ExperimentConfig parse_experiment_config(const nlohmann::json& doc);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
// Canonical form with every default filled in.
nlohmann::json config_to_json(const ExperimentConfig& cfg);
// FNV-1a over the canonical form.
std::string config_hash(const ExperimentConfig& cfg);

// Parsing of the stand-alone blocks used by the CLI.
DebiasConfig parse_debias_config(const nlohmann::json& obj, std::size_t pretrain_epochs);
SynthConfig parse_synth_config(const nlohmann::json& obj);

struct Arm {
  std::string name;
  DebiasConfig debias;
  double external_fraction = 1.0;
};

// Debiasing arms in sweep order; a single "debiased" arm without a sweep.
std::vector<Arm> experiment_arms(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Results

struct ResultRow {
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  std::string arm;   // "baseline" or an arm name
  std::string kind;  // baseline | debiased
  std::string status = "ok";
  double auc = 0.0;
  double spd = 0.0;
  double eodds = 0.0;
  std::vector<double> group_auc;
  double threshold = 0.5;
  std::size_t n_external = 0;
  std::string error;

  std::string key() const;
};

std::string rows_header();
std::string format_row(const ResultRow& r);
ResultRow parse_row(const std::string& line);  // throws ReportError

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population
  double median = 0.0;
};

struct ArmSummary {
  std::string arm;
  std::size_t n = 0;
  std::size_t errors = 0;
  MetricSummary auc, spd, eodds;
};

MetricSummary summarize(std::vector<double> values);
// One summary per arm, baseline first, in the given order.
std::vector<ArmSummary> aggregate(const std::vector<ResultRow>& rows, const std::vector<std::string>& arms);

struct ExperimentResult {
  std::vector<ResultRow> rows;
  std::vector<ArmSummary> summary;
  std::string config_hash;
  std::size_t computed = 0;  // rows computed in this call (the rest were resumed)
};

struct RunOptions {
  std::size_t jobs = 1;
  std::ostream* log = nullptr;
};

// Runs every (fold, seed) unit: data, pre-training, baseline evaluation, then
// each arm. Rows are appended to out/rows.csv in a fixed order; completed keys
// found there are skipped. Aggregates go to out/summary.json.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out,
                                const RunOptions& opts = {});

// ---------------------------------------------------------------------------
// Reporting

struct Report {
  std::vector<ArmSummary> arms;  // baseline first
};

Report load_report(const std::filesystem::path& results_dir);  // throws ReportError
std::string render_text(const Report& r);
std::string render_csv(const Report& r);
// "-40.0% vs baseline" style; U+2212 for negative changes.
std::string percent_change(double baseline, double value);

}  // namespace fairft
