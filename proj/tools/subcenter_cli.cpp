// Copyright 2026  Sub-center Embeddings Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Experiment CLI: corpus generation, training, evaluation, and the
// variant-comparison experiment, all config-driven and seeded.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "subcenter/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  f << content;
}

int cmd_generate(const std::string& config_path) {
  auto cfg = subcenter::load_experiment_config(config_path);
  fs::create_directories(cfg.output_dir);

  subcenter::SyntheticCorpus corpus = subcenter::generate_corpus(cfg.corpus);
  auto [train_split, eval_split] = subcenter::make_split(cfg, corpus);

  fs::path out(cfg.output_dir);
  subcenter::save_corpus_csv(corpus, (out / "corpus.csv").string());
  subcenter::save_corpus_csv(train_split, (out / "corpus_train.csv").string());
  subcenter::save_corpus_csv(eval_split, (out / "corpus_eval.csv").string());
  write_text(out / "config_echo.json",
             subcenter::corpus_config_to_json(cfg.corpus).dump(2) + "\n");

  std::cout << "wrote " << corpus.utterances.size() << " utterances to " << out.string() << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& variant_name) {
  auto cfg = subcenter::load_experiment_config(config_path);

  const subcenter::LossVariant* variant = nullptr;
  for (const auto& v : cfg.variants)
    if (v.name == variant_name) variant = &v;
  if (variant == nullptr) {
    std::string names;
    for (const auto& v : cfg.variants) names += (names.empty() ? "" : ", ") + v.name;
    throw subcenter::ConfigError("unknown variant `" + variant_name + "`; available: " + names);
  }

  fs::path out(cfg.output_dir);
  fs::path corpus_path = out / "corpus.csv";
  if (!fs::exists(corpus_path))
    throw std::runtime_error("corpus not found (run `generate` first): " + corpus_path.string());

  subcenter::SyntheticCorpus corpus = subcenter::load_corpus_csv(corpus_path.string());
  auto [train_split, eval_split] = subcenter::make_split(cfg, corpus);

  subcenter::TrainedModel model =
      subcenter::train_variant(cfg, train_split, *variant, cfg.seeds.front());

  fs::path ckpt = out / ("checkpoint_" + variant_name + ".json");
  subcenter::save_checkpoint(model, ckpt.string());

  std::string log = "epoch,loss\n";
  char buf[48];
  for (std::size_t e = 0; e < model.loss_history.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e, model.loss_history[e]);
    log += buf;
  }
  write_text(out / ("loss_" + variant_name + ".csv"), log);

  std::cout << "wrote " << ckpt.string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& corpus_path,
                 std::size_t trials, std::uint64_t seed) {
  subcenter::TrainedModel model = subcenter::load_checkpoint(checkpoint_path);
  subcenter::SyntheticCorpus corpus = subcenter::load_corpus_csv(corpus_path);
  if (corpus.speaker_ids().size() < 2)
    throw std::runtime_error("evaluation corpus needs at least 2 speakers");

  subcenter::EmbeddingSet set = subcenter::extract_all(model, corpus);
  subcenter::TrialSet trial_set = subcenter::build_trials(set, trials, seed);

  subcenter::MetricsReport rep;
  rep.eer = subcenter::eer_of(trial_set);
  rep.intra_var = subcenter::intra_class_variance(set);
  rep.inter_var = subcenter::inter_class_variance(set);
  rep.var_ratio = rep.intra_var / rep.inter_var;
  auto util = subcenter::subcenter_utilization(model, corpus);
  rep.utilization_mean = util.mean;
  rep.utilization_per_class = util.per_class;

  std::cout << subcenter::metrics_report_to_json(rep).dump(2) << "\n";
  return kExitOk;
}

int cmd_experiment(const std::string& config_path) {
  auto cfg = subcenter::load_experiment_config(config_path);
  fs::create_directories(cfg.output_dir);

  subcenter::ExperimentResult result = subcenter::run_experiment(cfg);

  fs::path out(cfg.output_dir);
  write_text(out / "experiment.json", subcenter::experiment_result_to_json(result).dump(2) + "\n");
  std::string table = subcenter::experiment_result_to_table(result);
  write_text(out / "experiment.txt", table);
  std::cout << table;
  return result.any_failed ? kExitRuntime : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sub-center speaker embedding experiments"};
  app.require_subcommand(1);

  std::string config_path, variant_name, checkpoint_path, corpus_path;
  std::size_t trials = 0;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("generate", "generate the synthetic corpus and splits");
  gen->add_option("--config", config_path, "experiment config JSON")->required();

  auto* train = app.add_subcommand("train", "train one loss variant");
  train->add_option("--config", config_path, "experiment config JSON")->required();
  train->add_option("--variant", variant_name, "variant name from the config")->required();

  auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on a corpus CSV");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint JSON")->required();
  eval->add_option("--corpus", corpus_path, "corpus CSV")->required();
  eval->add_option("--trials", trials, "number of verification trials")->required();
  eval->add_option("--seed", seed, "trial sampling seed")->required();

  auto* exp = app.add_subcommand("experiment", "run the full variant comparison");
  exp->add_option("--config", config_path, "experiment config JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (gen->parsed()) return cmd_generate(config_path);
    if (train->parsed()) return cmd_train(config_path, variant_name);
    if (eval->parsed()) return cmd_evaluate(checkpoint_path, corpus_path, trials, seed);
    if (exp->parsed()) return cmd_experiment(config_path);
  } catch (const subcenter::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}
