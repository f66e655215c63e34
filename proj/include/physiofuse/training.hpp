#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "physiofuse/model.hpp"
#include "physiofuse/optim.hpp"

namespace physiofuse {

enum class Phase { kPretrain, kFinetune, kFuse };
std::string_view phase_name(Phase p);
Phase parse_phase(std::string_view name);

struct TrainConfig {
  Phase phase = Phase::kFinetune;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  LrSchedule schedule = StepDecay{};
  AdamConfig adam{};
  /// Pretrain: transformer dropout. Finetune: emotion-head dropout. Fuse: fusion-head dropout.
  double dropout = 0.6;
  std::uint64_t seed = 0;
  std::optional<Target> target;
  double clip_norm = 0.0;
  std::size_t mask_span = 10;
  double mask_ratio = 0.15;

  static TrainConfig defaults(Phase phase);
};

Json to_json(const TrainConfig& c);
/// Rejects unknown keys; `where` names the config section in error messages.
TrainConfig train_config_from_json(const Json& j, const TrainConfig& base, const std::string& where);

/// One single-modality training or evaluation example; `label` is −1 when unlabeled.
template <typename T>
struct Sample {
  std::size_t id = 0;
  Tensor<T> signal;  // [C × T]
  int label = -1;
};

template <typename T>
struct PairSample {
  std::size_t id = 0;
  Tensor<T> ecg;
  Tensor<T> eeg;
  int label = -1;
};

struct EpochRecord {
  std::string phase;
  std::string modality;
  std::string target;
  int fold = -1;
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;
  double lr = 0.0;
  double wall_ms = 0.0;
};

/// Per-epoch records of one or more training runs; written as line-delimited JSON.
class RunLog {
 public:
  void append(const EpochRecord& r);
  const std::vector<EpochRecord>& entries() const { return entries_; }
  void set_checkpoint(std::filesystem::path p) { checkpoint_ = std::move(p); }
  const std::filesystem::path& checkpoint() const { return checkpoint_; }

  /// Appends to `path`, creating it if needed. With `include_wall` false the
  /// wall-clock field is omitted so the bytes depend only on the computation.
  void write_jsonl(const std::filesystem::path& path, bool include_wall = true) const;
  static std::vector<EpochRecord> read_jsonl(const std::filesystem::path& path);

 private:
  std::vector<EpochRecord> entries_;
  std::filesystem::path checkpoint_;
};

/// Runtime check that no test segment of a fold reaches a training batch.
class LeakageGuard {
 public:
  LeakageGuard() = default;
  LeakageGuard(int fold, std::vector<std::size_t> test_ids);
  void check(std::span<const std::size_t> batch_ids, std::string_view context) const;
  std::size_t checks() const { return checks_; }

 private:
  int fold_ = -1;
  std::set<std::size_t> test_;
  mutable std::size_t checks_ = 0;
};

/// Identifies the run in log records.
struct RunTag {
  int fold = -1;
  std::string modality;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::optional<double> best_val_accuracy;
};

/// Masked-value pre-training on unlabeled segments. Throws NumericError on a NaN loss.
template <typename T>
TrainResult pretrain_mvp(SingleModalityModel<T>& model, const std::vector<Sample<T>>& corpus, const TrainConfig& cfg,
                         const RunTag& tag = {}, const LeakageGuard* guard = nullptr);

/// Supervised fine-tuning of the CLS head and every backbone parameter; keeps the
/// weights of the epoch with the best validation accuracy (final weights when
/// there is no validation data).
template <typename T>
TrainResult finetune_emotion(SingleModalityModel<T>& model, const std::vector<Sample<T>>& train,
                             const std::vector<Sample<T>>& validation, const TrainConfig& cfg,
                             const RunTag& tag = {}, const LeakageGuard* guard = nullptr);

/// Trains only the fusion head; backbones stay frozen and are hash-checked.
template <typename T>
TrainResult train_fused(FusedModel<T>& model, const std::vector<PairSample<T>>& train,
                        const std::vector<PairSample<T>>& validation, const TrainConfig& cfg,
                        const RunTag& tag = {}, const LeakageGuard* guard = nullptr);

/// Hard predictions: logit > 0 → 1.
template <typename T>
std::vector<int> predict(const SingleModalityModel<T>& model, const std::vector<Sample<T>>& samples);
template <typename T>
std::vector<int> predict(const FusedModel<T>& model, const std::vector<PairSample<T>>& samples);

/// Mean masked-value loss with masks drawn from `seed`; used as a held-out check.
template <typename T>
double mvp_loss(const SingleModalityModel<T>& model, const std::vector<Sample<T>>& samples, const TrainConfig& cfg,
                std::uint64_t seed);

/// Loss of the "copy the visible input" baseline: the masked positions are
/// zero in the model input, so predicting the input there costs the mean
/// squared signal value over masked positions.
template <typename T>
double mvp_copy_baseline(const std::vector<Sample<T>>& samples, const TrainConfig& cfg, std::uint64_t seed);

}  // namespace physiofuse
