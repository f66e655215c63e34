#include "physiofuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace physiofuse {

using D = double;
using TensorD = Tensor<double>;

double GradcheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

GradcheckEntry check_gradient(const std::string& name, const std::function<TensorD()>& loss,
                              const std::vector<TensorD>& inputs, const GradcheckOptions& options) {
  std::vector<TensorD> leaves = inputs;
  for (auto& t : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(loss());
  std::vector<std::vector<double>> analytic;
  for (const auto& t : leaves) {
    if (t.has_grad()) analytic.emplace_back(t.grad().begin(), t.grad().end());
    else analytic.emplace_back(t.numel(), 0.0);
  }

  GradcheckEntry entry{name, 0.0, 0};
  Rng pick(derive_seed(options.seed, name));
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto values = leaves[i].mutable_data();
    std::vector<std::size_t> coords(values.size());
    for (std::size_t j = 0; j < coords.size(); ++j) coords[j] = j;
    if (coords.size() > options.max_coordinates) {
      pick.shuffle(coords.begin(), coords.end());
      coords.resize(options.max_coordinates);
    }
    for (std::size_t j : coords) {
      const double original = values[j];
      values[j] = original + options.step;
      const double up = loss().item();
      values[j] = original - options.step;
      const double down = loss().item();
      values[j] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic[i][j], numeric));
      ++entry.coordinates;
    }
  }
  for (auto& t : leaves) t.zero_grad();
  return entry;
}

ModelConfig tiny_model_config(Modality m) {
  ModelConfig c = ModelConfig::defaults(m);
  c.kernels = {5, 3};
  c.conv_channels = {4, 6};
  c.num_layers = 2;
  c.num_heads = 2;
  c.hidden_size = 8;
  c.ffn_multiplier = 2;
  c.mvp_hidden = 6;
  c.emotion_hidden = 4;
  return c;
}

namespace {

TensorD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TensorD::from(std::move(shape), std::move(v));
}

/// Projects an arbitrary output to a scalar with fixed random weights. Small
/// weights keep |loss| low, so rounding noise in the differences stays small.
struct Projector {
  std::vector<TensorD> weights;
  Rng rng;
  explicit Projector(std::uint64_t seed) : rng(seed) {}
  TensorD operator()(const TensorD& out, std::size_t slot = 0) {
    if (weights.size() <= slot) weights.resize(slot + 1);
    if (!weights[slot].defined() || weights[slot].shape() != out.shape()) weights[slot] = random_tensor(out.shape(), rng, -0.1, 0.1);
    return sum(mul(out, weights[slot]));
  }
};

}  // namespace

GradcheckReport run_gradcheck_suite(const ModelConfig& ecg, const ModelConfig& eeg, std::size_t length,
                                    const GradcheckOptions& options) {
  GradcheckReport report;
  Rng rng(derive_seed(options.seed, "inputs"));
  Projector proj(derive_seed(options.seed, "projection"));
  auto run = [&](const std::string& name, const std::function<TensorD()>& f, const std::vector<TensorD>& inputs) {
    report.entries.push_back(check_gradient(name, f, inputs, options));
  };

  // Ops
  {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng), c = random_tensor({3, 4}, rng);
    auto s = random_tensor({1}, rng), pos = random_tensor({3, 4}, rng, 0.5, 2.0);
    run("matmul", [&] { return proj(matmul(a, b)); }, {a, b});
    run("transpose", [&] { return proj(transpose(a)); }, {a});
    run("add", [&] { return proj(add(a, c)); }, {a, c});
    run("add_scalar", [&] { return proj(add(a, s)); }, {a, s});
    run("sub", [&] { return proj(sub(a, c)); }, {a, c});
    run("mul", [&] { return proj(mul(a, c)); }, {a, c});
    run("mul_scalar", [&] { return proj(mul(s, c)); }, {s, c});
    run("scale", [&] { return proj(scale(a, 2.5)); }, {a});
    run("relu", [&] { return proj(relu(a)); }, {a});
    run("sigmoid", [&] { return proj(sigmoid(a)); }, {a});
    run("exp", [&] { return proj(exp(a)); }, {a});
    run("log", [&] { return proj(log(pos)); }, {pos});
    run("sum", [&] { return proj(sum(a)); }, {a});
    run("sum_axis0", [&] { return proj(sum(a, 0)); }, {a});
    run("sum_axis1", [&] { return proj(sum(a, 1)); }, {a});
    run("mean", [&] { return proj(mean(a)); }, {a});
    run("mean_axis1", [&] { return proj(mean(a, 1)); }, {a});
    run("max", [&] { return proj(max(a)); }, {a});
    run("max_axis0", [&] { return proj(max(a, 0)); }, {a});
    run("reshape", [&] { return proj(reshape(a, {2, 6})); }, {a});
    auto bias = random_tensor({4}, rng);
    run("add_row_bias", [&] { return proj(add_row_bias(a, bias)); }, {a, bias});
    run("softmax_rows", [&] { return proj(softmax_rows(a)); }, {a});
    auto gamma = random_tensor({4}, rng, 0.5, 1.5), beta = random_tensor({4}, rng);
    run("layer_norm_rows", [&] { return proj(layer_norm_rows(a, gamma, beta)); }, {a, gamma, beta});
    auto x = random_tensor({2, 9}, rng), w = random_tensor({3, 2, 3}, rng), cb = random_tensor({3}, rng);
    run("conv1d", [&] { return proj(conv1d(x, w, cb, 1)); }, {x, w, cb});
    run("conv1d_valid", [&] { return proj(conv1d(x, w, cb, 0)); }, {x, w, cb});
    run("dropout",
        [&] {
          Rng r(11);
          return proj(dropout(a, 0.3, r, true));
        },
        {a});
    run("concat_rows", [&] { return proj(concat_rows<D>({a, c})); }, {a, c});
    run("concat_cols", [&] { return proj(concat_cols<D>({a, c})); }, {a, c});
    run("slice_rows", [&] { return proj(slice_rows(a, 1, 2)); }, {a});
    run("slice_cols", [&] { return proj(slice_cols(a, 1, 2)); }, {a});
    auto z = random_tensor({4, 1}, rng, -3.0, 3.0);
    auto y = TensorD::from({4, 1}, {1.0, 0.0, 1.0, 0.0});
    run("bce_with_logits", [&] { return bce_with_logits(z, y); }, {z});
    auto pred = random_tensor({6, 2}, rng), target = random_tensor({6, 2}, rng);
    const std::vector<bool> mask = {true, false, true, true, false, false};
    run("mse_masked", [&] { return mse_masked(pred, target, mask); }, {pred, target});
  }

  // Layers
  {
    Rng init(derive_seed(options.seed, "layers"));
    auto params = [](auto& layer) {
      NamedParameters<D> p;
      layer.collect("", p);
      std::vector<TensorD> out;
      for (auto& [n, t] : p) out.push_back(t);
      return out;
    };
    auto with = [](std::vector<TensorD> v, const TensorD& x) {
      v.push_back(x);
      return v;
    };
    auto x = random_tensor({5, 6}, rng);
    Linear<D> linear(6, 3, init);
    run("Linear", [&] { return proj(linear.forward(x)); }, with(params(linear), x));
    auto sig = random_tensor({2, 12}, rng);
    Conv1dStack<D> stack({{5, 2, 3, 1}, {3, 3, 4, 1}}, init);
    run("Conv1dStack", [&] { return proj(stack.forward(sig)); }, with(params(stack), sig));
    LayerNorm<D> ln(6);
    run("LayerNorm", [&] { return proj(ln.forward(x)); }, with(params(ln), x));
    MultiHeadSelfAttention<D> mha(6, 2, init);
    run("MultiHeadSelfAttention", [&] { return proj(mha.forward(x)); }, with(params(mha), x));
    EncoderLayer<D> layer(6, 2, 12, init);
    run("EncoderLayer", [&] { return proj(layer.forward(x, 0.0, {})); }, with(params(layer), x));
    TransformerEncoder<D> enc(TransformerSpec{2, 2, 6, 2, 0.1}, init);
    run("TransformerEncoder", [&] { return proj(enc.forward(x, {})); }, with(params(enc), x));
    Fcn<D> fcn(6, {5, 4}, 2, 0.5, init);
    run("Fcn",
        [&] {
          Rng r(3);
          return proj(fcn.forward(x, {true, &r}).output);
        },
        with(params(fcn), x));
  }

  // Full single-modality forwards
  for (const ModelConfig* cfg : {&ecg, &eeg}) {
    const std::string m(modality_name(cfg->modality));
    SingleModalityModel<D> model(*cfg, derive_seed(options.seed, "model", static_cast<std::uint64_t>(cfg->modality)));
    auto segment = random_tensor({cfg->in_channels(), length}, rng);
    std::vector<TensorD> inputs;
    for (auto& [n, t] : model.backbone_parameters()) inputs.push_back(t);
    for (auto& [n, t] : model.mvp_head_parameters()) inputs.push_back(t);
    inputs.push_back(segment);
    std::vector<bool> mask(length, false);
    for (std::size_t t = 0; t < length; t += 3) mask[t] = true;
    model.set_mode(ModelMode::kPretrain);
    run(m + "_forward_pretrain",
        [&] { return mse_masked(model.forward_pretrain(segment, {}), transpose(segment), mask); },
        inputs);
    model.set_mode(ModelMode::kFinetune);
    std::vector<TensorD> ft;
    for (auto& [n, t] : model.trainable_parameters()) ft.push_back(t);
    ft.push_back(segment);
    const auto label = TensorD::from({1, 1}, {1.0});
    run(m + "_forward_classify", [&] { return bce_with_logits(model.forward_classify(segment, {}).logit, label); }, ft);
  }

  // Fusion head on fixed features
  {
    FusedModel<D> fused(SingleModalityModel<D>(ecg, 1), SingleModalityModel<D>(eeg, 2), FusionConfig{{5, 3}, 0.1},
                        options.seed);
    auto features = random_tensor({1, fused.fusion_width()}, rng);
    std::vector<TensorD> inputs;
    for (auto& [n, t] : fused.head_parameters()) inputs.push_back(t);
    inputs.push_back(features);
    const auto label = TensorD::from({1, 1}, {0.0});
    run("fusion_head", [&] { return bce_with_logits(fused.head_forward(features, {}), label); }, inputs);
  }
  return report;
}

}  // namespace physiofuse
