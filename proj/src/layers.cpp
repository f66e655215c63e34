#include "physiofuse/layers.hpp"

#include <cmath>
#include <map>

namespace physiofuse {

std::size_t receptive_field(const std::vector<std::size_t>& kernels, const std::vector<std::size_t>& strides) {
  if (kernels.empty() || kernels.size() != strides.size()) {
    throw ContractError("receptive_field: need equal-length, non-empty kernel and stride lists");
  }
  std::size_t rf = 1;
  std::size_t jump = 1;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    if (kernels[i] < 1 || strides[i] < 1) throw ContractError("receptive_field: entries must be >= 1");
    rf += (kernels[i] - 1) * jump;
    jump *= strides[i];
  }
  return rf;
}

template <typename T>
Tensor<T> sinusoidal_positions(std::size_t length, std::size_t width) {
  thread_local std::map<std::pair<std::size_t, std::size_t>, Tensor<T>> cache;
  if (auto it = cache.find({length, width}); it != cache.end()) return it->second;
  std::vector<T> table(length * width);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(width));
      const double angle = static_cast<double>(pos) * freq;
      table[pos * width + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  auto tensor = Tensor<T>::from({length, width}, std::move(table));
  cache.emplace(std::make_pair(length, width), tensor);
  return tensor;
}

namespace {

template <typename T>
Tensor<T> uniform_param(Shape shape, double bound, Rng& rng) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}

}  // namespace

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = uniform_param<T>({in, out}, bound, rng);
  bias_ = uniform_param<T>({out}, bound, rng);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) const {
  return add_row_bias(matmul(x, weight_), bias_);
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, NamedParameters<T>& out) const {
  out.emplace_back(prefix + ".weight", weight_);
  out.emplace_back(prefix + ".bias", bias_);
}

template <typename T>
Conv1dStack<T>::Conv1dStack(std::vector<ConvLayerSpec> layers, Rng& rng) : specs_(std::move(layers)) {
  if (specs_.empty()) throw ContractError("Conv1dStack: at least one layer is required");
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto& s = specs_[i];
    if (s.kernel_size % 2 == 0) {
      throw ContractError("Conv1dStack: layer " + std::to_string(i) + " kernel " + std::to_string(s.kernel_size) +
                          " is even; symmetric padding needs an odd kernel");
    }
    if (s.stride != 1) throw ContractError("Conv1dStack: only stride 1 preserves sample alignment");
    if (i > 0 && s.in_channels != specs_[i - 1].out_channels) {
      throw DimensionError("Conv1dStack: layer " + std::to_string(i) + " input channels do not chain");
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.in_channels * s.kernel_size));
    weights_.push_back(uniform_param<T>({s.out_channels, s.in_channels, s.kernel_size}, bound, rng));
    biases_.push_back(uniform_param<T>({s.out_channels}, bound, rng));
  }
}

template <typename T>
Tensor<T> Conv1dStack<T>::forward(const Tensor<T>& signal) const {
  if (signal.rank() != 2 || signal.dim(0) != in_channels()) {
    throw DimensionError("conv1d_apply: signal " + shape_str(signal.shape()) + " does not have " +
                         std::to_string(in_channels()) + " channels");
  }
  Tensor<T> h = signal;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    h = relu(conv1d(h, weights_[i], biases_[i], (specs_[i].kernel_size - 1) / 2));
  }
  return h;
}

template <typename T>
void Conv1dStack<T>::collect(const std::string& prefix, NamedParameters<T>& out) const {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    out.emplace_back(prefix + "." + std::to_string(i) + ".weight", weights_[i]);
    out.emplace_back(prefix + "." + std::to_string(i) + ".bias", biases_[i]);
  }
}

template <typename T>
std::size_t Conv1dStack<T>::receptive_field() const {
  std::vector<std::size_t> k, s;
  for (const auto& spec : specs_) {
    k.push_back(spec.kernel_size);
    s.push_back(spec.stride);
  }
  return physiofuse::receptive_field(k, s);
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t width)
    : gamma_(Tensor<T>::full({width}, T(1), true)), beta_(Tensor<T>::zeros({width}, true)) {}

template <typename T>
Tensor<T> LayerNorm<T>::forward(const Tensor<T>& x) const {
  return layer_norm_rows(x, gamma_, beta_);
}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, NamedParameters<T>& out) const {
  out.emplace_back(prefix + ".gamma", gamma_);
  out.emplace_back(prefix + ".beta", beta_);
}

template <typename T>
MultiHeadSelfAttention<T>::MultiHeadSelfAttention(std::size_t width, std::size_t heads, Rng& rng)
    : width_(width), heads_(heads) {
  if (heads == 0 || width % heads != 0) {
    throw ContractError("attention: hidden size " + std::to_string(width) + " is not divisible by " +
                        std::to_string(heads) + " heads");
  }
  query_ = Linear<T>(width, width, rng);
  key_ = Linear<T>(width, width, rng);
  value_ = Linear<T>(width, width, rng);
  output_ = Linear<T>(width, width, rng);
}

template <typename T>
Tensor<T> MultiHeadSelfAttention<T>::forward(const Tensor<T>& x, std::vector<Tensor<T>>* weights) const {
  if (x.rank() != 2 || x.dim(1) != width_) {
    throw DimensionError("attention: input " + shape_str(x.shape()) + " does not have width " +
                         std::to_string(width_));
  }
  const std::size_t head_width = width_ / heads_;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_width)));
  const Tensor<T> q = query_.forward(x);
  const Tensor<T> k = key_.forward(x);
  const Tensor<T> v = value_.forward(x);
  std::vector<Tensor<T>> outputs;
  outputs.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const std::size_t begin = h * head_width;
    const Tensor<T> qh = heads_ == 1 ? q : slice_cols(q, begin, head_width);
    const Tensor<T> kh = heads_ == 1 ? k : slice_cols(k, begin, head_width);
    const Tensor<T> vh = heads_ == 1 ? v : slice_cols(v, begin, head_width);
    const Tensor<T> probs = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
    if (weights) weights->push_back(probs);
    outputs.push_back(matmul(probs, vh));
  }
  const Tensor<T> merged = heads_ == 1 ? outputs.front() : concat_cols(outputs);
  return output_.forward(merged);
}

template <typename T>
void MultiHeadSelfAttention<T>::collect(const std::string& prefix, NamedParameters<T>& out) const {
  query_.collect(prefix + ".query", out);
  key_.collect(prefix + ".key", out);
  value_.collect(prefix + ".value", out);
  output_.collect(prefix + ".output", out);
}

template <typename T>
EncoderLayer<T>::EncoderLayer(std::size_t width, std::size_t heads, std::size_t ffn_width, Rng& rng)
    : attention_(width, heads, rng),
      norm1_(width),
      norm2_(width),
      ffn_in_(width, ffn_width, rng),
      ffn_out_(ffn_width, width, rng) {}

template <typename T>
Tensor<T> EncoderLayer<T>::forward(const Tensor<T>& x, double dropout_rate, const ForwardContext& ctx,
                                   std::vector<Tensor<T>>* attention) const {
  Rng scratch(0);
  Rng& rng = ctx.rng ? *ctx.rng : scratch;
  if (ctx.train && dropout_rate > 0.0 && !ctx.rng) throw ContractError("encoder: training forward needs an rng");
  Tensor<T> attended = dropout(attention_.forward(x, attention), dropout_rate, rng, ctx.train);
  Tensor<T> h = norm1_.forward(add(x, attended));
  Tensor<T> ff = ffn_out_.forward(relu(ffn_in_.forward(h)));
  ff = dropout(ff, dropout_rate, rng, ctx.train);
  return norm2_.forward(add(h, ff));
}

template <typename T>
void EncoderLayer<T>::collect(const std::string& prefix, NamedParameters<T>& out) const {
  attention_.collect(prefix + ".attention", out);
  norm1_.collect(prefix + ".norm1", out);
  ffn_in_.collect(prefix + ".ffn_in", out);
  ffn_out_.collect(prefix + ".ffn_out", out);
  norm2_.collect(prefix + ".norm2", out);
}

template <typename T>
TransformerEncoder<T>::TransformerEncoder(const TransformerSpec& spec, Rng& rng) : spec_(spec) {
  if (spec.num_heads == 0 || spec.hidden_size % spec.num_heads != 0) {
    throw ContractError("transformer: hidden size " + std::to_string(spec.hidden_size) +
                        " is not divisible by " + std::to_string(spec.num_heads) + " heads");
  }
  for (std::size_t i = 0; i < spec.num_layers; ++i) {
    layers_.emplace_back(spec.hidden_size, spec.num_heads, spec.hidden_size * spec.ffn_multiplier, rng);
  }
}

template <typename T>
Tensor<T> TransformerEncoder<T>::forward(const Tensor<T>& seq, const ForwardContext& ctx,
                                         std::vector<Tensor<T>>* attention) const {
  if (seq.rank() != 2 || seq.dim(1) != spec_.hidden_size) {
    throw DimensionError("transformer_encode: sequence " + shape_str(seq.shape()) + " does not have width " +
                         std::to_string(spec_.hidden_size));
  }
  Tensor<T> h = add(seq, sinusoidal_positions<T>(seq.dim(0), spec_.hidden_size));
  for (const auto& layer : layers_) h = layer.forward(h, spec_.dropout_rate, ctx, attention);
  return h;
}

template <typename T>
void TransformerEncoder<T>::collect(const std::string& prefix, NamedParameters<T>& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + "." + std::to_string(i), out);
}

template <typename T>
Fcn<T>::Fcn(std::size_t in, std::vector<std::size_t> hidden_sizes, std::size_t output_size, double dropout_rate,
            Rng& rng)
    : hidden_(std::move(hidden_sizes)), dropout_(dropout_rate) {
  std::size_t width = in;
  for (auto h : hidden_) {
    layers_.emplace_back(width, h, rng);
    width = h;
  }
  layers_.emplace_back(width, output_size, rng);
}

template <typename T>
FcnOutput<T> Fcn<T>::forward(const Tensor<T>& x, const ForwardContext& ctx) const {
  if (ctx.train && dropout_ > 0.0 && !ctx.rng) throw ContractError("fcn: training forward needs an rng");
  Rng scratch(0);
  Rng& rng = ctx.rng ? *ctx.rng : scratch;
  Tensor<T> h = x;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    h = relu(layers_[i].forward(h));
    // The penultimate activation is reported before dropout.
    if (i + 2 == layers_.size()) {
      FcnOutput<T> result;
      result.penultimate = h;
      result.output = layers_.back().forward(dropout(h, dropout_, rng, ctx.train));
      return result;
    }
    h = dropout(h, dropout_, rng, ctx.train);
  }
  return {layers_.back().forward(h), x};
}

template <typename T>
void Fcn<T>::collect(const std::string& prefix, NamedParameters<T>& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + "." + std::to_string(i), out);
}

template Tensor<float> sinusoidal_positions(std::size_t, std::size_t);
template Tensor<double> sinusoidal_positions(std::size_t, std::size_t);
template class Linear<float>;
template class Linear<double>;
template class Conv1dStack<float>;
template class Conv1dStack<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class MultiHeadSelfAttention<float>;
template class MultiHeadSelfAttention<double>;
template class EncoderLayer<float>;
template class EncoderLayer<double>;
template class TransformerEncoder<float>;
template class TransformerEncoder<double>;
template class Fcn<float>;
template class Fcn<double>;

}  // namespace physiofuse
