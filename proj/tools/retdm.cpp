#include <string>
#include <vector>

#include "CLI11.hpp"

#include "retdm/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"retdm: two-way deep metric learning for multi-label classification"};
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> overrides;
  auto* train = app.add_subcommand("train", "run the three-stage fit described by a JSON config");
  train->add_option("config", config, "run config (JSON)")->required();
  train->add_option("--set", overrides, "override a config field, e.g. --set train.seed=3");

  std::string checkpoint, dataset, rule = "threshold:0.5";
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a labeled dataset");
  eval->add_option("checkpoint", checkpoint)->required();
  eval->add_option("dataset", dataset, "CSV, or a .json PPM manifest")->required();
  eval->add_option("--rule", rule, "threshold:t or top_k:j");

  std::string input, output;
  auto* predict = app.add_subcommand("predict", "write per-label scores and predictions for feature rows");
  predict->add_option("checkpoint", checkpoint)->required();
  predict->add_option("input", input, "CSV with id,f0,... columns")->required();
  predict->add_option("-o,--out", output, "output CSV")->required();
  predict->add_option("--rule", rule, "threshold:t or top_k:j");

  std::string spec;
  auto* synth = app.add_subcommand("synth", "generate a correlated-label synthetic dataset");
  synth->add_option("spec", spec, "SynthSpec (JSON)")->required();
  synth->add_option("-o,--out", output, "output CSV; a .json sidecar is written next to it")->required();

  std::string suite = "all";
  std::uint64_t seed = 0;
  auto* verify = app.add_subcommand("verify", "run property suites: gradcheck, metrics_oracle, loss_properties, all");
  verify->add_option("suite", suite)->check(CLI::IsMember({"gradcheck", "metrics_oracle", "loss_properties", "all"}));
  verify->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : retdm::cli::kConfig;
  }

  using namespace retdm::cli;
  if (*train) return cmd_train(config, overrides);
  if (*eval) return cmd_eval(checkpoint, dataset, rule);
  if (*predict) return cmd_predict(checkpoint, input, output, rule);
  if (*synth) return cmd_synth(spec, output);
  return cmd_verify(suite, seed);
}
