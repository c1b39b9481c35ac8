// Command-line front end: pws <extract|train-eval|prune|baseline|report> --config FILE

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pws/pws.hpp"

namespace {

constexpr int kExitStageError = 1;
constexpr int kExitUsageError = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompted weak supervision for meme classification"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> language, only_batch, output_dir, method;
  std::optional<std::uint64_t> seed;
  std::string mode = "direct";

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--language", language, "Language scope: en, hi, zh or all");
    sub->add_option("--seed", seed, "Seed for the split and the forest");
    sub->add_option("--output-dir", output_dir, "Override output_dir from the config");
  };
  auto* extract = app.add_subcommand("extract", "Query the VLM for every (meme, LF) cell");
  add_common(extract);
  extract->add_option("--only-batch", only_batch, "Restrict to LFs of one batch: base or added");
  auto* train_eval = app.add_subcommand("train-eval", "Fit the forest and score validation/test");
  add_common(train_eval);
  auto* prune = app.add_subcommand("prune", "Run F1Prune and/or ImpPrune");
  add_common(prune);
  prune->add_option("--method", method, "f1prune or impprune (default: both)");
  auto* baseline = app.add_subcommand("baseline", "Direct VLM classification baseline");
  add_common(baseline);
  baseline->add_option("--mode", mode, "direct or reasoning")->check(CLI::IsMember({"direct", "reasoning"}));
  auto* report = app.add_subcommand("report", "Error report, importances and Jaccard tables");
  add_common(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsageError;
  }

  pws::RunConfig config;
  std::optional<pws::PruneMethod> prune_method;
  try {
    pws::ConfigOverrides ov;
    ov.seed = seed;
    ov.output_dir = output_dir;
    if (language) {
      ov.language = pws::parse_language_scope(*language);
      if (!ov.language) throw pws::Error(pws::ErrorCode::ConfigError, "--language must be en, hi, zh or all");
    }
    if (only_batch) {
      ov.only_batch = pws::parse_batch(*only_batch);
      if (!ov.only_batch) throw pws::Error(pws::ErrorCode::ConfigError, "--only-batch must be base or added");
    }
    if (method) {
      prune_method = pws::parse_prune_method(*method);
      if (!prune_method) throw pws::Error(pws::ErrorCode::ConfigError, "--method must be f1prune or impprune");
    }
    config = pws::load_run_config(config_path, ov);
  } catch (const pws::Error& e) {
    std::cerr << "pws: " << pws::to_string(e.code()) << ": " << e.what() << '\n';
    return kExitUsageError;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    nlohmann::json summary;
    if (name == "extract") {
      summary = pws::run_extract(config);
    } else if (name == "train-eval") {
      summary = pws::run_train_eval(config);
    } else if (name == "prune") {
      summary = pws::run_prune(config, prune_method);
    } else if (name == "baseline") {
      summary = pws::run_baseline(config, mode == "direct" ? pws::BaselineMode::Direct : pws::BaselineMode::Reasoning);
    } else {
      summary = pws::run_report(config);
    }
    pws::write_file(config.out(name + "_summary.json"), summary.dump(2) + "\n");
    std::cout << summary.dump() << '\n';
  } catch (const pws::Error& e) {
    std::cerr << "pws " << name << ": " << pws::to_string(e.code()) << ": " << e.what() << '\n';
    return e.code() == pws::ErrorCode::ConfigError ? kExitUsageError : kExitStageError;
  } catch (const std::exception& e) {
    std::cerr << "pws " << name << ": " << e.what() << '\n';
    return kExitStageError;
  }
  return 0;
}
