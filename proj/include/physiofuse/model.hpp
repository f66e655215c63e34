#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "physiofuse/dataset.hpp"
#include "physiofuse/layers.hpp"

namespace physiofuse {

using Json = nlohmann::ordered_json;

/// Architecture of one single-modality recognizer. Defaults are the EEG
/// configuration; the ECG model mirrors it with one input channel.
struct ModelConfig {
  Modality modality = Modality::kEeg;
  std::vector<std::size_t> kernels = {65, 33, 17};
  std::vector<std::size_t> conv_channels = {64, 128, 256};
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  std::size_t hidden_size = 256;
  std::size_t ffn_multiplier = 4;
  double transformer_dropout = 0.1;
  std::size_t mvp_hidden = 128;
  std::size_t emotion_hidden = 64;
  double emotion_dropout = 0.6;
  double cls_init_std = 0.02;

  std::size_t in_channels() const { return modality_channels(modality); }
  static ModelConfig defaults(Modality m);
};

Json to_json(const ModelConfig& c);
/// Rejects unknown keys; missing keys keep the defaults for `base.modality`.
ModelConfig model_config_from_json(const Json& j, const ModelConfig& base);

enum class ModelMode { kPretrain, kFinetune };

template <typename T>
struct ClassifyOutput {
  Tensor<T> logit;        // [1 × 1]
  Tensor<T> penultimate;  // [1 × emotion_hidden]
};

/// 1D-CNN encoder → width-1 projection → [CLS] prepended → Transformer, with a
/// masked-value head (pre-training) and an emotion head on CLS_e (fine-tuning).
template <typename T>
class SingleModalityModel {
 public:
  SingleModalityModel(const ModelConfig& config, std::uint64_t seed);
  SingleModalityModel(SingleModalityModel&&) noexcept = default;
  SingleModalityModel& operator=(SingleModalityModel&&) noexcept = default;
  SingleModalityModel(const SingleModalityModel&) = delete;
  SingleModalityModel& operator=(const SingleModalityModel&) = delete;

  /// Deep copy with independent parameter storage.
  SingleModalityModel clone() const;

  const ModelConfig& config() const { return config_; }
  ModelMode mode() const { return mode_; }
  void set_mode(ModelMode mode) { mode_ = mode; }
  std::optional<Target> target() const { return target_; }
  void set_target(std::optional<Target> t) { target_ = t; }

  /// Transformer output [(T+1) × hidden] for a [C × T] segment; row 0 is CLS_e.
  Tensor<T> encode(const Tensor<T>& segment, const ForwardContext& ctx,
                   std::vector<Tensor<T>>* attention = nullptr) const;

  /// Per-position predictions [T × C] for a masked segment. Requires pretrain mode.
  Tensor<T> forward_pretrain(const Tensor<T>& masked_segment, const ForwardContext& ctx) const;
  /// Emotion logit from CLS_e. Requires finetune mode.
  ClassifyOutput<T> forward_classify(const Tensor<T>& segment, const ForwardContext& ctx) const;
  /// Emotion head applied to an already-computed transformer output.
  ClassifyOutput<T> classify_encoded(const Tensor<T>& encoded, const ForwardContext& ctx) const;

  NamedParameters<T> parameters() const;
  /// Encoder, projection, CLS embedding and transformer.
  NamedParameters<T> backbone_parameters() const;
  NamedParameters<T> mvp_head_parameters() const;
  NamedParameters<T> emotion_head_parameters() const;
  /// Parameters a phase updates: backbone plus the head of the current mode.
  NamedParameters<T> trainable_parameters() const;

  /// Copies backbone values bit-for-bit from `other` (same architecture).
  void copy_backbone_from(const SingleModalityModel& other);
  void set_requires_grad(bool on);
  void set_emotion_dropout(double rate) { emotion_head_.set_dropout(rate); }
  void set_transformer_dropout(double rate) { transformer_.set_dropout(rate); }

  std::vector<std::vector<T>> snapshot() const;
  void restore(const std::vector<std::vector<T>>& values);

  const Conv1dStack<T>& encoder() const { return encoder_; }
  const TransformerEncoder<T>& transformer() const { return transformer_; }

 private:
  ModelConfig config_;
  std::uint64_t seed_ = 0;
  ModelMode mode_ = ModelMode::kPretrain;
  std::optional<Target> target_;
  Conv1dStack<T> encoder_;
  Tensor<T> projection_weight_;  // [hidden × features × 1]
  Tensor<T> projection_bias_;
  Tensor<T> cls_;  // [1 × hidden]
  TransformerEncoder<T> transformer_;
  Fcn<T> mvp_head_;
  Fcn<T> emotion_head_;
};

struct FusionConfig {
  std::vector<std::size_t> hidden = {64, 32};
  double dropout = 0.1;
};

Json to_json(const FusionConfig& c);
FusionConfig fusion_config_from_json(const Json& j, const FusionConfig& base);

/// Input segment plus the identity needed to check modality alignment.
template <typename T>
struct SegmentInput {
  Tensor<T> signal;
  std::string trial;  // "subject/trial"
  std::size_t window = 0;
};

/// Two frozen fine-tuned recognizers whose penultimate activations are
/// concatenated and classified by a trainable FCN.
template <typename T>
class FusedModel {
 public:
  FusedModel(SingleModalityModel<T> ecg, SingleModalityModel<T> eeg, const FusionConfig& config, std::uint64_t seed);

  /// Concatenated penultimate features [1 × (w_ecg + w_eeg)], computed in eval
  /// mode with recording disabled, so no gradient reaches the backbones.
  Tensor<T> features(const Tensor<T>& ecg_segment, const Tensor<T>& eeg_segment) const;
  Tensor<T> head_forward(const Tensor<T>& features, const ForwardContext& ctx) const;
  Tensor<T> forward(const Tensor<T>& ecg_segment, const Tensor<T>& eeg_segment, const ForwardContext& ctx) const;

  std::size_t fusion_width() const;
  const FusionConfig& config() const { return config_; }
  void set_head_dropout(double rate) { head_.set_dropout(rate); }
  std::optional<Target> target() const { return ecg_.target(); }
  const SingleModalityModel<T>& ecg() const { return ecg_; }
  const SingleModalityModel<T>& eeg() const { return eeg_; }
  SingleModalityModel<T>& ecg() { return ecg_; }
  SingleModalityModel<T>& eeg() { return eeg_; }

  NamedParameters<T> head_parameters() const;
  NamedParameters<T> backbone_parameters() const;
  NamedParameters<T> parameters() const;
  std::vector<std::vector<T>> snapshot_head() const;
  void restore_head(const std::vector<std::vector<T>>& values);

 private:
  SingleModalityModel<T> ecg_;
  SingleModalityModel<T> eeg_;
  FusionConfig config_;
  Fcn<T> head_;
};

/// Logit of the fused model; throws ContractError when the two segments do not
/// come from the same window of the same trial.
template <typename T>
Tensor<T> fused_forward(const FusedModel<T>& model, const SegmentInput<T>& ecg, const SegmentInput<T>& eeg,
                        const ForwardContext& ctx);

// ---------------------------------------------------------------------------
// Checkpoints
//
// Little-endian binary:
//   "PHFU" | u32 version | u32 config length | config JSON bytes |
//   u32 tensor count | per tensor: u32 name length | name | u8 dtype (1 = f32,
//   2 = f64) | u32 rank | u64 dims[rank] | values
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  std::uint8_t dtype = 1;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;  // widened; f32 values round-trip exactly
};

struct CheckpointData {
  Json config;
  std::vector<CheckpointTensor> tensors;
};

template <typename T>
void write_checkpoint(const std::filesystem::path& path, const Json& config, const NamedParameters<T>& params);
CheckpointData read_checkpoint(const std::filesystem::path& path);

template <typename T>
void save_checkpoint(const SingleModalityModel<T>& model, const std::filesystem::path& path);
/// Loads a single-modality checkpoint. When `expected` is given, every
/// architecture field of the stored config must match it.
template <typename T>
SingleModalityModel<T> load_checkpoint(const std::filesystem::path& path,
                                       const std::optional<ModelConfig>& expected = std::nullopt);

template <typename T>
void save_checkpoint(const FusedModel<T>& model, const std::filesystem::path& path);
template <typename T>
FusedModel<T> load_fused_checkpoint(const std::filesystem::path& path);

/// FNV-1a hash over names and value bytes; used to verify frozen parameters.
template <typename T>
std::uint64_t parameter_hash(const NamedParameters<T>& params);

}  // namespace physiofuse
