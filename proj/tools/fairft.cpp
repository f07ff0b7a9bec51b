// fairft command-line front end.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "fairft/data.hpp"
#include "fairft/error.hpp"
#include "fairft/finetune.hpp"
#include "fairft/format.hpp"
#include "fairft/harness.hpp"
#include "fairft/mask.hpp"
#include "fairft/model.hpp"
#include "fairft/seed.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fairft;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw FormatError("failed writing " + path);
}

int cmd_synth(const std::string& spec_path, const std::string& out_train, const std::string& out_test) {
  json doc = read_json(spec_path);
  if (!doc.is_object()) throw ConfigError(spec_path + ": expected an object");
  std::uint64_t seed = 0;
  if (doc.contains("seed")) {
    if (!doc.at("seed").is_number_unsigned()) throw ConfigError("seed: expected a non-negative integer");
    seed = doc.at("seed").get<std::uint64_t>();
    doc.erase("seed");
  }
  const SynthConfig s = parse_synth_config(doc);
  const Dataset train = generate_synthetic(s.train_spec(derive_seed(seed, "train")), Role::train);
  const Dataset test = generate_synthetic(s.test_spec(derive_seed(seed, "test")), Role::test);
  save_csv(train, out_train);
  save_csv(test, out_test);
  std::cout << "wrote " << train.size() << " train rows to " << out_train << ", " << test.size()
            << " test rows to " << out_test << "\n";
  return 0;
}

int cmd_pretrain(const std::string& config, const std::string& train_path, const std::string& out) {
  const ExperimentConfig cfg = load_experiment_config(config);
  const Dataset train = load_csv(train_path, std::nullopt, Role::train);
  const PretrainResult r = pretrain(cfg.model_spec, train, cfg.pretrain);
  save_model(r.model, out);
  std::cout << "epochs " << r.loss_trace.size();
  if (!r.loss_trace.empty()) std::cout << ", final loss " << format_double(r.loss_trace.back());
  std::cout << "\nwrote " << out << "\n";
  return 0;
}

int cmd_debias(const std::string& config, const std::string& model_path, const std::string& external_path,
               const std::string& out, const std::string& mask_dump) {
  const ExperimentConfig cfg = load_experiment_config(config);
  const DecomposableModel model = load_model(model_path);
  const Dataset external = load_csv(external_path, std::nullopt, Role::external);
  const DebiasResult r = debias(model, external, cfg.debias);
  for (const std::string& w : r.warnings) std::cerr << "warning: " << w << "\n";
  save_model(r.model, out);
  if (!mask_dump.empty())
    write_mask_dump(mask_dump, r.mask, r.pred_importance, r.bias_importance, cfg.debias.norm_method);
  std::cout << "step,epoch,loss,auc,spd,eodds\n";
  for (const TraceRecord& t : r.trace) {
    std::cout << t.step << ',' << t.epoch << ',' << format_double(t.loss);
    for (double v : {t.auc, t.spd, t.eodds}) std::cout << ',' << (std::isfinite(v) ? format_double(v) : "");
    std::cout << "\n";
  }
  std::cerr << "groups " << r.groups.first << "," << r.groups.second << "; gamma " << format_double(r.reinit.gamma)
            << "; zeroed " << r.reinit.zeroed.size() << " head parameters; wrote " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path, double threshold,
             const std::string& report) {
  const DecomposableModel model = load_model(model_path);
  const Dataset data = load_csv(data_path, std::nullopt, Role::test);
  const FairnessReport r = evaluate(model, data, threshold);
  const json doc = report_to_json(r);
  write_file(report, doc.dump(2) + "\n");
  std::cout << "auc " << format_double(r.auc) << " spd " << format_double(r.spd) << " eodds "
            << format_double(r.eodds) << "\n";
  return 0;
}

int cmd_balance(const std::string& in, const std::string& out, std::uint64_t seed) {
  const Dataset source = load_csv(in, std::nullopt, Role::valid);
  const Dataset ext = build_external(source, seed);
  save_csv(ext, out);
  if (ext.balance && !ext.balance->exact_ratio)
    std::cerr << "warning: smallest group's label counts not available in every group; used the common minimum\n";
  std::cout << "wrote " << ext.size() << " rows (" << ext.balance->group_size << " per group, "
            << ext.balance->group_positives << " positive) to " << out << "\n";
  return 0;
}

int cmd_experiment(const std::string& config, const std::string& out, std::size_t jobs) {
  const ExperimentConfig cfg = load_experiment_config(config);
  RunOptions opts;
  opts.jobs = jobs;
  opts.log = &std::cerr;
  const ExperimentResult r = run_experiment(cfg, out, opts);
  std::cout << render_text(Report{r.summary});
  std::cout << "config " << r.config_hash << ", " << r.rows.size() << " rows (" << r.computed << " computed)\n";
  return 0;
}

int cmd_report(const std::string& in, const std::string& format) {
  const Report r = load_report(in);
  std::cout << (format == "csv" ? render_csv(r) : render_text(r));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fairness fine-tuning toolkit: importance masks and two-step debiasing"};
  app.require_subcommand(1);

  std::string spec, out_train, out_test;
  auto* synth = app.add_subcommand("synth", "Generate synthetic train/test CSVs");
  synth->add_option("--spec", spec, "Synthetic data spec (JSON)")->required();
  synth->add_option("--out-train", out_train)->required();
  synth->add_option("--out-test", out_test)->required();

  std::string config, train, out;
  auto* pre = app.add_subcommand("pretrain", "Baseline training");
  pre->add_option("--config", config)->required();
  pre->add_option("--train", train)->required();
  pre->add_option("--out", out)->required();

  std::string model, external, mask_dump;
  auto* deb = app.add_subcommand("debias", "Two-step debiasing of a trained model");
  deb->add_option("--config", config)->required();
  deb->add_option("--model", model)->required();
  deb->add_option("--external", external)->required();
  deb->add_option("--out", out)->required();
  deb->add_option("--mask-dump", mask_dump);

  std::string data, report_path;
  double threshold = 0.5;
  auto* ev = app.add_subcommand("eval", "Fairness report for a model on a dataset");
  ev->add_option("--model", model)->required();
  ev->add_option("--data", data)->required();
  ev->add_option("--threshold", threshold)->check(CLI::Range(0.0, 1.0));
  ev->add_option("--report", report_path)->required();

  std::string in;
  std::uint64_t seed = 0;
  auto* bal = app.add_subcommand("balance", "Group-balanced external set");
  bal->add_option("--in", in)->required();
  bal->add_option("--out", out)->required();
  bal->add_option("--seed", seed)->required();

  std::size_t jobs = 1;
  auto* exp = app.add_subcommand("experiment", "Folds x seeds x sweep arms, persisted to a results directory");
  exp->add_option("--config", config)->required();
  exp->add_option("--out", out)->required();
  exp->add_option("--jobs", jobs, "Parallel (fold, seed) units")->check(CLI::PositiveNumber);

  std::string format = "text";
  auto* rep = app.add_subcommand("report", "Summarise a results directory");
  rep->add_option("--in", in)->required();
  rep->add_option("--format", format)->check(CLI::IsMember({"text", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(spec, out_train, out_test);
    if (*pre) return cmd_pretrain(config, train, out);
    if (*deb) return cmd_debias(config, model, external, out, mask_dump);
    if (*ev) return cmd_eval(model, data, threshold, report_path);
    if (*bal) return cmd_balance(in, out, seed);
    if (*exp) return cmd_experiment(config, out, jobs);
    if (*rep) return cmd_report(in, format);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.error_class());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
