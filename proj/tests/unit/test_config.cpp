#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "physiofuse/config.hpp"

using namespace physiofuse;
namespace fs = std::filesystem;

TEST_CASE("defaults") {
  const RunConfig c;
  CHECK(c.eval.folds == 10);
  CHECK(c.pretrain.epochs == 500);
  CHECK(c.finetune.dropout == 0.6);
  CHECK(c.fuse.epochs == 52);
  CHECK(c.ecg.in_channels() == 1);
  CHECK(c.eeg.in_channels() == 10);
  CHECK(c.precision == 32);
}

TEST_CASE("unknown keys are rejected with their full path") {
  for (const char* text : {R"({"evl": {}})", R"({"eval": {"fold": 3}})", R"({"model": {"ecg": {"layers": 2}}})",
                           R"({"pretrain": {"schedule": {"peek": 1}}})"}) {
    INFO(text);
    CHECK_THROWS_AS(run_config_from_json(Json::parse(text)), ConfigError);
  }
  try {
    run_config_from_json(Json::parse(R"({"eval": {"fold": 3}})"));
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("eval.fold") != std::string::npos);
  }
}

TEST_CASE("invalid values") {
  CHECK_THROWS_AS(run_config_from_json(Json::parse(R"({"precision": 16})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(Json::parse(R"({"eval": {"label_fraction": 0}})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(Json::parse(R"({"preprocess": {"eeg_filter": "x"}})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(Json::parse(R"({"eval": {"targets": ["joy"]}})")), ConfigError);
}

TEST_CASE("effective config echo round trips") {
  const auto dir = fs::temp_directory_path() / "physiofuse_test_config";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "run.json");
    out << R"({"dataset": {"manifest": "data/manifest.json"},
               "model": {"eeg": {"hidden_size": 32, "num_layers": 1}},
               "finetune": {"epochs": 7, "schedule": {"initial": 0.01}},
               "eval": {"folds": 5, "targets": ["valence"]},
               "output": {"dir": "out"}, "precision": 64})";
  }
  const RunConfig c = load_run_config(dir / "run.json");
  CHECK(c.manifest == dir / "data/manifest.json");
  CHECK(c.output_dir == dir / "out");
  CHECK(c.eeg.hidden_size == 32);
  CHECK(c.eeg.kernels == std::vector<std::size_t>{65, 33, 17});
  CHECK(c.finetune.epochs == 7);
  CHECK(std::get<StepDecay>(c.finetune.schedule).initial == 0.01);
  CHECK(std::get<StepDecay>(c.finetune.schedule).factor == 0.65);
  CHECK(c.eval.targets == std::vector<Target>{Target::kValence});

  echo_run_config(c, dir / "echo");
  const RunConfig back = load_run_config(dir / "echo" / "config.json");
  CHECK(to_json(back) == to_json(c));
}

TEST_CASE("synthetic spec json") {
  SyntheticSpec s;
  s.subjects = 3;
  s.ecg_only_fraction = 0.25;
  const auto back = synthetic_spec_from_json(to_json(s));
  CHECK(to_json(back) == to_json(s));
  CHECK_THROWS_AS(synthetic_spec_from_json(Json::parse(R"({"subject": 3})")), ConfigError);
}
