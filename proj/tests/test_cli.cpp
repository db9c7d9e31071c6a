#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = SUBCENTER_CLI_PATH;

int run(const std::string& args, const fs::path& stdout_file = {},
        const fs::path& stderr_file = {}) {
  std::string cmd = kCli + " " + args;
  if (!stdout_file.empty()) cmd += " > " + stdout_file.string();
  if (!stderr_file.empty()) cmd += " 2> " + stderr_file.string();
  int rc = std::system(cmd.c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json base_config(const fs::path& out_dir) {
  return {
      {"corpus",
       {{"num_speakers", 6},
        {"subclusters_per_speaker", 2},
        {"utterances_per_speaker", 10},
        {"feature_dim", 8},
        {"speaker_spread", 3.0},
        {"subcluster_spread", 1.0},
        {"noise_sigma", 0.2},
        {"seed", 12}}},
      {"encoder",
       {{"hidden_dims", {16}}, {"embedding_dim", 4}, {"activation", "relu"}, {"seed", 5}}},
      {"train",
       {{"epochs", 3}, {"batch_size", 8}, {"learning_rate", 0.01}, {"optimizer", "adam"}}},
      {"variants",
       {{{"name", "baseline"},
         {"loss", {{"margin", 0.2}, {"scale", 10.0}, {"temperature", 1.0}, {"subcenters", 1}}}}}},
      {"trials", 20},
      {"seeds", {1}},
      {"train_fraction", 0.67},
      {"output_dir", out_dir.string()}};
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("subcenter_cli_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static inline int counter = 0;
};

fs::path write_config(const TempDir& dir, const json& cfg) {
  fs::path p = dir.path / "config.json";
  std::ofstream f(p);
  f << cfg.dump(2);
  return p;
}

}  // namespace

TEST_CASE("generate writes the corpus files deterministically") {
  TempDir dir;
  json cfg = base_config(dir.path / "out");
  fs::path cfg_path = write_config(dir, cfg);

  REQUIRE(run("generate --config " + cfg_path.string(), dir.path / "g1.log") == 0);
  fs::path corpus = dir.path / "out" / "corpus.csv";
  REQUIRE(fs::exists(corpus));
  REQUIRE(fs::exists(dir.path / "out" / "corpus_train.csv"));
  REQUIRE(fs::exists(dir.path / "out" / "corpus_eval.csv"));
  REQUIRE(fs::exists(dir.path / "out" / "config_echo.json"));

  std::string first = slurp(corpus);
  // header + speakers * utterances rows
  CHECK(std::count(first.begin(), first.end(), '\n') == 1 + 6 * 10);

  REQUIRE(run("generate --config " + cfg_path.string(), dir.path / "g2.log") == 0);
  CHECK(slurp(corpus) == first);
}

TEST_CASE("generate rejects a config with a missing field") {
  TempDir dir;
  json cfg = base_config(dir.path / "out");
  cfg["corpus"].erase("seed");
  fs::path cfg_path = write_config(dir, cfg);
  fs::path err = dir.path / "err.log";
  CHECK(run("generate --config " + cfg_path.string(), dir.path / "out.log", err) == 1);
  CHECK(slurp(err).find("seed") != std::string::npos);
}

TEST_CASE("generate rejects a config with an unknown key") {
  TempDir dir;
  json cfg = base_config(dir.path / "out");
  cfg["corpus"]["nois_sigma"] = 0.1;
  fs::path cfg_path = write_config(dir, cfg);
  fs::path err = dir.path / "err.log";
  CHECK(run("generate --config " + cfg_path.string(), dir.path / "out.log", err) == 1);
  CHECK(slurp(err).find("nois_sigma") != std::string::npos);
}

TEST_CASE("train produces a checkpoint and loss log") {
  TempDir dir;
  json cfg = base_config(dir.path / "out");
  fs::path cfg_path = write_config(dir, cfg);
  REQUIRE(run("generate --config " + cfg_path.string(), dir.path / "g.log") == 0);
  REQUIRE(run("train --config " + cfg_path.string() + " --variant baseline",
              dir.path / "t1.log") == 0);

  fs::path ckpt = dir.path / "out" / "checkpoint_baseline.json";
  fs::path log = dir.path / "out" / "loss_baseline.csv";
  REQUIRE(fs::exists(ckpt));
  REQUIRE(fs::exists(log));

  std::string log_text = slurp(log);
  CHECK(log_text.rfind("epoch,loss\n", 0) == 0);
  CHECK(std::count(log_text.begin(), log_text.end(), '\n') == 1 + 3);  // header + epochs

  std::string first_ckpt = slurp(ckpt);
  REQUIRE(run("train --config " + cfg_path.string() + " --variant baseline",
              dir.path / "t2.log") == 0);
  CHECK(slurp(ckpt) == first_ckpt);
}

TEST_CASE("train rejects an unknown variant") {
  TempDir dir;
  json cfg = base_config(dir.path / "out");
  fs::path cfg_path = write_config(dir, cfg);
  REQUIRE(run("generate --config " + cfg_path.string(), dir.path / "g.log") == 0);
  fs::path err = dir.path / "err.log";
  CHECK(run("train --config " + cfg_path.string() + " --variant nope", dir.path / "t.log",
            err) == 1);
  CHECK(slurp(err).find("baseline") != std::string::npos);
}

TEST_CASE("train without a corpus is a runtime failure") {
  TempDir dir;
  json cfg = base_config(dir.path / "out");
  fs::path cfg_path = write_config(dir, cfg);
  CHECK(run("train --config " + cfg_path.string() + " --variant baseline", dir.path / "t.log",
            dir.path / "err.log") == 2);
}

TEST_CASE("evaluate emits a full metrics report deterministically") {
  TempDir dir;
  json cfg = base_config(dir.path / "out");
  fs::path cfg_path = write_config(dir, cfg);
  REQUIRE(run("generate --config " + cfg_path.string(), dir.path / "g.log") == 0);
  REQUIRE(run("train --config " + cfg_path.string() + " --variant baseline",
              dir.path / "t.log") == 0);

  std::string eval_args = "evaluate --checkpoint " +
                          (dir.path / "out" / "checkpoint_baseline.json").string() + " --corpus " +
                          (dir.path / "out" / "corpus_eval.csv").string() + " --trials 10 --seed 3";
  fs::path out1 = dir.path / "e1.json";
  REQUIRE(run(eval_args, out1) == 0);
  json rep = json::parse(slurp(out1));
  for (const char* key : {"eer", "intra_var", "inter_var", "var_ratio", "utilization_mean",
                          "utilization_per_class"})
    CHECK(rep.contains(key));
  CHECK(rep["eer"].get<double>() >= 0.0);
  CHECK(rep["eer"].get<double>() <= 1.0);

  fs::path out2 = dir.path / "e2.json";
  REQUIRE(run(eval_args, out2) == 0);
  CHECK(slurp(out2) == slurp(out1));
}

TEST_CASE("evaluate with an infeasible trial count fails") {
  TempDir dir;
  json cfg = base_config(dir.path / "out");
  fs::path cfg_path = write_config(dir, cfg);
  REQUIRE(run("generate --config " + cfg_path.string(), dir.path / "g.log") == 0);
  REQUIRE(run("train --config " + cfg_path.string() + " --variant baseline",
              dir.path / "t.log") == 0);
  int rc = run("evaluate --checkpoint " +
                   (dir.path / "out" / "checkpoint_baseline.json").string() + " --corpus " +
                   (dir.path / "out" / "corpus_eval.csv").string() + " --trials 999999 --seed 3",
               dir.path / "e.log", dir.path / "err.log");
  CHECK(rc != 0);
}

TEST_CASE("experiment emits one row per variant") {
  TempDir dir;
  json cfg = base_config(dir.path / "out");
  fs::path cfg_path = write_config(dir, cfg);
  REQUIRE(run("experiment --config " + cfg_path.string(), dir.path / "x.log") == 0);

  json result = json::parse(slurp(dir.path / "out" / "experiment.json"));
  REQUIRE(result["rows"].size() == 1);
  CHECK(result["rows"][0]["variant"] == "baseline");
  CHECK(result["rows"][0]["status"] == "ok");
  CHECK(result["rows"][0].contains("median_eer"));
  CHECK(result["rows"][0].contains("median_var_ratio"));

  std::string table = slurp(dir.path / "out" / "experiment.txt");
  CHECK(std::count(table.begin(), table.end(), '\n') == 2);  // header + one row

  // rerun is byte-identical
  std::string first_json = slurp(dir.path / "out" / "experiment.json");
  REQUIRE(run("experiment --config " + cfg_path.string(), dir.path / "x2.log") == 0);
  CHECK(slurp(dir.path / "out" / "experiment.json") == first_json);
}
