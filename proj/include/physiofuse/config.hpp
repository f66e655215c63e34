#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "physiofuse/training.hpp"

namespace physiofuse {

struct EvalConfig {
  std::size_t folds = 10;
  std::uint64_t seed = 0;
  /// Run masked-value pre-training before fine-tuning.
  bool pretrain = true;
  /// Fraction of each fold's train/validation segments whose labels are used.
  double label_fraction = 1.0;
  /// Empty runs every fold.
  std::vector<std::size_t> folds_to_run;
  std::vector<Target> targets = {Target::kArousal, Target::kValence};
};

/// Complete description of a run. Every field has a default, so an empty
/// object is a valid config apart from the manifest path.
struct RunConfig {
  std::filesystem::path manifest;
  PreprocessConfig preprocess;
  ModelConfig ecg = ModelConfig::defaults(Modality::kEcg);
  ModelConfig eeg = ModelConfig::defaults(Modality::kEeg);
  FusionConfig fusion;
  TrainConfig pretrain = TrainConfig::defaults(Phase::kPretrain);
  TrainConfig finetune = TrainConfig::defaults(Phase::kFinetune);
  TrainConfig fuse = TrainConfig::defaults(Phase::kFuse);
  EvalConfig eval;
  std::filesystem::path output_dir = "runs/default";
  int precision = 32;

  const ModelConfig& model(Modality m) const { return m == Modality::kEcg ? ecg : eeg; }
};

Json to_json(const RunConfig& c);
/// Unknown keys are rejected with the full key path. Relative paths resolve
/// against `base_dir`.
RunConfig run_config_from_json(const Json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
/// Writes the effective config to `<dir>/config.json`.
void echo_run_config(const RunConfig& c, const std::filesystem::path& dir);

Json to_json(const SyntheticSpec& s);
SyntheticSpec synthetic_spec_from_json(const Json& j);

}  // namespace physiofuse
