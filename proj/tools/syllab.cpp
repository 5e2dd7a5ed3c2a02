// Command-line front end for the syllabification engines and the benchmark
// harness.

#include <CLI11.hpp>

#include <iostream>

#include "syllab/bench.hpp"

using namespace syllab;
using namespace syllab::bench;

namespace {

// "key=value" pairs into a hyperparameter map.
Hyper parse_hyper(const std::vector<std::string>& items) {
  Hyper h;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorKind::InvalidArgument, "expected key=value, got '" + item + "'");
    }
    h[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return h;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Syllabification engines and benchmark harness"};
  app.require_subcommand(1);

  std::string in_path, out_path, data_path, engine_name, model, json_out, curves_path, levels, plan_path;
  std::vector<std::string> hyper_items, words;
  std::uint64_t seed = 1;
  double val_fraction = 0.1;
  bool tune = false;

  auto* prepare = app.add_subcommand("prepare", "Filter ambiguous forms and de-duplicate a word list");
  prepare->add_option("input", in_path, "Word list (TSV or one syllabified word per line)")->required();
  prepare->add_option("-o,--output", out_path, "Filtered TSV")->required();

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("engine", engine_name, "liang, crf, nn, nn_phon or fusion")->required();
  train->add_option("data", data_path, "Training TSV")->required();
  train->add_option("-o,--output", out_path, "Model file")->required();
  train->add_option("--seed", seed, "Random seed")->capture_default_str();
  train->add_option("--val-fraction", val_fraction, "Share held out for validation")->capture_default_str();
  train->add_option("--set", hyper_items, "Hyperparameter key=value (repeatable)");
  train->add_option("--curves", curves_path, "Per-epoch validation CSV for neural engines");

  auto* eval = app.add_subcommand("eval", "Score a model or the rule engine on a dataset");
  eval->add_option("model", model, "Model file or 'bc'")->required();
  eval->add_option("data", data_path, "Gold TSV")->required();
  eval->add_option("--json", json_out, "Write the JSON report here instead of stdout");

  auto* syllabify = app.add_subcommand("syllabify", "Hyphenate words from arguments or standard input");
  syllabify->add_option("model", model, "Model file or 'bc'")->required();
  syllabify->add_option("words", words, "Words; fusion takes orth<TAB>phon");

  auto* patgen = app.add_subcommand("patgen", "Generate Liang patterns as a TeX pattern file");
  patgen->add_option("data", data_path, "Training TSV")->required();
  patgen->add_option("-o,--output", out_path, "Pattern file")->required();
  patgen->add_option("--levels", levels, "Levels, e.g. \"1-3:1,1,2; 2-4:2,1,2\"");
  patgen->add_flag("--tune", tune, "Pick the levels on a validation slice");
  patgen->add_option("--seed", seed, "Seed for the validation slice")->capture_default_str();

  auto* bench = app.add_subcommand("bench", "Run an experiment plan");
  bench->add_option("plan", plan_path, "Plan file")->required();
  bench->add_option("-o,--output", out_path, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*prepare) return cmd_prepare(in_path, out_path, std::cerr);
    if (*train) {
      return cmd_train(engine_from_string(engine_name), data_path, seed, parse_hyper(hyper_items), val_fraction,
                       out_path, curves_path, std::cerr);
    }
    if (*eval) return cmd_eval(model, data_path, json_out, std::cout, std::cerr);
    if (*syllabify) return cmd_syllabify(model, words, std::cin, std::cout, std::cerr);
    if (*patgen) return cmd_patgen(data_path, levels, tune, seed, out_path, std::cerr);
    if (*bench) return cmd_bench(plan_path, out_path, std::cerr);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  }
  return kExitUsage;
}
