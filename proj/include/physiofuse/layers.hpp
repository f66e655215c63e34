#pragma once

#include <string>
#include <utility>
#include <vector>

#include "physiofuse/ops.hpp"
#include "physiofuse/rng.hpp"
#include "physiofuse/tensor.hpp"

namespace physiofuse {

template <typename T>
using NamedParameters = std::vector<std::pair<std::string, Tensor<T>>>;

/// Train/eval switch and the random stream consumed by dropout.
struct ForwardContext {
  bool train = false;
  Rng* rng = nullptr;
};

/// Number of input samples that influence one output position of a conv stack:
/// 1 + Σ (k_i − 1) · Π_{j<i} s_j.
std::size_t receptive_field(const std::vector<std::size_t>& kernels, const std::vector<std::size_t>& strides);

/// Fixed sinusoidal table [length × width]; even columns sin, odd columns cos.
template <typename T>
Tensor<T> sinusoidal_positions(std::size_t length, std::size_t width);

template <typename T>
class Linear {
 public:
  Linear() = default;
  /// Weights and bias drawn from U(−1/√in, 1/√in).
  Linear(std::size_t in, std::size_t out, Rng& rng);

  /// x[rows × in] → [rows × out]
  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, NamedParameters<T>& out) const;

  std::size_t in_features() const { return weight_.dim(0); }
  std::size_t out_features() const { return weight_.dim(1); }

 private:
  Tensor<T> weight_;  // [in × out]
  Tensor<T> bias_;    // [out]
};

struct ConvLayerSpec {
  std::size_t kernel_size = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t stride = 1;
};

/// Stack of 1-D convolutions, each followed by ReLU, with (k−1)/2 zeros of
/// padding per side so the temporal extent is preserved.
template <typename T>
class Conv1dStack {
 public:
  Conv1dStack() = default;
  /// Kernels must be odd and strides 1; consecutive layers must chain channels.
  Conv1dStack(std::vector<ConvLayerSpec> layers, Rng& rng);

  /// signal[channels × time] → [features × time]
  Tensor<T> forward(const Tensor<T>& signal) const;
  void collect(const std::string& prefix, NamedParameters<T>& out) const;

  const std::vector<ConvLayerSpec>& layers() const { return specs_; }
  std::size_t receptive_field() const;
  std::size_t in_channels() const { return specs_.front().in_channels; }
  std::size_t out_channels() const { return specs_.back().out_channels; }

 private:
  std::vector<ConvLayerSpec> specs_;
  std::vector<Tensor<T>> weights_;  // [out × in × k]
  std::vector<Tensor<T>> biases_;
};

template <typename T>
Tensor<T> conv1d_apply(const Conv1dStack<T>& stack, const Tensor<T>& signal) {
  return stack.forward(signal);
}

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t width);
  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, NamedParameters<T>& out) const;

 private:
  Tensor<T> gamma_;
  Tensor<T> beta_;
};

template <typename T>
class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(std::size_t width, std::size_t heads, Rng& rng);

  /// x[L × d] → [L × d]. When `weights` is given, each head's [L × L] attention
  /// matrix is appended to it.
  Tensor<T> forward(const Tensor<T>& x, std::vector<Tensor<T>>* weights = nullptr) const;
  void collect(const std::string& prefix, NamedParameters<T>& out) const;

  std::size_t heads() const { return heads_; }

 private:
  std::size_t width_ = 0;
  std::size_t heads_ = 1;
  Linear<T> query_, key_, value_, output_;
};

/// Post-norm encoder block: LN(x + Drop(MHA(x))), then LN(h + Drop(FFN(h))).
template <typename T>
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(std::size_t width, std::size_t heads, std::size_t ffn_width, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, double dropout_rate, const ForwardContext& ctx,
                    std::vector<Tensor<T>>* attention = nullptr) const;
  void collect(const std::string& prefix, NamedParameters<T>& out) const;

  const MultiHeadSelfAttention<T>& attention() const { return attention_; }

 private:
  MultiHeadSelfAttention<T> attention_;
  LayerNorm<T> norm1_, norm2_;
  Linear<T> ffn_in_, ffn_out_;
};

struct TransformerSpec {
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  std::size_t hidden_size = 256;
  std::size_t ffn_multiplier = 4;
  double dropout_rate = 0.1;
};

template <typename T>
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(const TransformerSpec& spec, Rng& rng);

  /// seq[(L+1) × d] → [(L+1) × d]; the sinusoidal table is added to the input first.
  Tensor<T> forward(const Tensor<T>& seq, const ForwardContext& ctx,
                    std::vector<Tensor<T>>* attention = nullptr) const;
  void collect(const std::string& prefix, NamedParameters<T>& out) const;

  const TransformerSpec& spec() const { return spec_; }
  void set_dropout(double rate) { spec_.dropout_rate = rate; }
  const std::vector<EncoderLayer<T>>& layers() const { return layers_; }

 private:
  TransformerSpec spec_;
  std::vector<EncoderLayer<T>> layers_;
};

template <typename T>
Tensor<T> transformer_encode(const TransformerEncoder<T>& enc, const Tensor<T>& seq, const ForwardContext& ctx) {
  return enc.forward(seq, ctx);
}

template <typename T>
struct FcnOutput {
  Tensor<T> output;
  /// Activation of the last hidden layer (the input itself when there is none).
  Tensor<T> penultimate;
};

/// Fully connected network: ReLU hidden layers with dropout, then a linear output layer.
template <typename T>
class Fcn {
 public:
  Fcn() = default;
  Fcn(std::size_t in, std::vector<std::size_t> hidden_sizes, std::size_t output_size, double dropout_rate,
      Rng& rng);

  FcnOutput<T> forward(const Tensor<T>& x, const ForwardContext& ctx) const;
  void collect(const std::string& prefix, NamedParameters<T>& out) const;

  std::size_t layer_count() const { return layers_.size(); }
  const std::vector<std::size_t>& hidden_sizes() const { return hidden_; }
  double dropout_rate() const { return dropout_; }
  void set_dropout(double rate) { dropout_ = rate; }

 private:
  std::vector<std::size_t> hidden_;
  double dropout_ = 0.0;
  std::vector<Linear<T>> layers_;
};

}  // namespace physiofuse
