#include "physiofuse/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace physiofuse {

namespace fs = std::filesystem;

ModelConfig ModelConfig::defaults(Modality m) {
  ModelConfig c;
  c.modality = m;
  return c;
}

Json to_json(const ModelConfig& c) {
  Json j;
  j["modality"] = std::string(modality_name(c.modality));
  j["in_channels"] = c.in_channels();
  j["kernels"] = c.kernels;
  j["conv_channels"] = c.conv_channels;
  j["num_layers"] = c.num_layers;
  j["num_heads"] = c.num_heads;
  j["hidden_size"] = c.hidden_size;
  j["ffn_multiplier"] = c.ffn_multiplier;
  j["transformer_dropout"] = c.transformer_dropout;
  j["mvp_hidden"] = c.mvp_hidden;
  j["emotion_hidden"] = c.emotion_hidden;
  j["emotion_dropout"] = c.emotion_dropout;
  j["cls_init_std"] = c.cls_init_std;
  return j;
}

namespace {

template <typename V>
void read_field(const Json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const Json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

}  // namespace

ModelConfig model_config_from_json(const Json& j, const ModelConfig& base) {
  const std::string where = "model." + std::string(modality_name(base.modality));
  reject_unknown(j,
                 {"modality", "in_channels", "kernels", "conv_channels", "num_layers", "num_heads", "hidden_size",
                  "ffn_multiplier", "transformer_dropout", "mvp_hidden", "emotion_hidden", "emotion_dropout",
                  "cls_init_std"},
                 where);
  ModelConfig c = base;
  if (j.contains("modality")) c.modality = parse_modality(j["modality"].get<std::string>());
  read_field(j, "kernels", c.kernels, where);
  read_field(j, "conv_channels", c.conv_channels, where);
  read_field(j, "num_layers", c.num_layers, where);
  read_field(j, "num_heads", c.num_heads, where);
  read_field(j, "hidden_size", c.hidden_size, where);
  read_field(j, "ffn_multiplier", c.ffn_multiplier, where);
  read_field(j, "transformer_dropout", c.transformer_dropout, where);
  read_field(j, "mvp_hidden", c.mvp_hidden, where);
  read_field(j, "emotion_hidden", c.emotion_hidden, where);
  read_field(j, "emotion_dropout", c.emotion_dropout, where);
  read_field(j, "cls_init_std", c.cls_init_std, where);
  if (j.contains("in_channels") && j["in_channels"].get<std::size_t>() != c.in_channels()) {
    throw ConfigError(where + ".in_channels: " + std::string(modality_name(c.modality)) + " has " +
                      std::to_string(c.in_channels()) + " channels");
  }
  if (c.kernels.size() != c.conv_channels.size() || c.kernels.empty()) {
    throw ConfigError(where + ": kernels and conv_channels must be non-empty and of equal length");
  }
  return c;
}

Json to_json(const FusionConfig& c) {
  Json j;
  j["hidden"] = c.hidden;
  j["dropout"] = c.dropout;
  return j;
}

FusionConfig fusion_config_from_json(const Json& j, const FusionConfig& base) {
  reject_unknown(j, {"hidden", "dropout"}, "fusion");
  FusionConfig c = base;
  read_field(j, "hidden", c.hidden, "fusion");
  read_field(j, "dropout", c.dropout, "fusion");
  return c;
}

// ---------------------------------------------------------------------------

template <typename T>
SingleModalityModel<T>::SingleModalityModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed) {
  std::vector<ConvLayerSpec> layers;
  std::size_t in = config.in_channels();
  for (std::size_t i = 0; i < config.kernels.size(); ++i) {
    layers.push_back({config.kernels[i], in, config.conv_channels[i], 1});
    in = config.conv_channels[i];
  }
  Rng encoder_rng(derive_seed(seed, "encoder"));
  encoder_ = Conv1dStack<T>(layers, encoder_rng);

  Rng projection_rng(derive_seed(seed, "projection"));
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<T> w(config.hidden_size * in), b(config.hidden_size);
  for (auto& x : w) x = static_cast<T>(projection_rng.uniform(-bound, bound));
  for (auto& x : b) x = static_cast<T>(projection_rng.uniform(-bound, bound));
  projection_weight_ = Tensor<T>::from({config.hidden_size, in, 1}, std::move(w), true);
  projection_bias_ = Tensor<T>::from({config.hidden_size}, std::move(b), true);

  Rng cls_rng(derive_seed(seed, "cls"));
  std::vector<T> cls(config.hidden_size);
  for (auto& x : cls) x = static_cast<T>(cls_rng.normal(0.0, config.cls_init_std));
  cls_ = Tensor<T>::from({1, config.hidden_size}, std::move(cls), true);

  Rng transformer_rng(derive_seed(seed, "transformer"));
  transformer_ = TransformerEncoder<T>(TransformerSpec{config.num_layers, config.num_heads, config.hidden_size,
                                                       config.ffn_multiplier, config.transformer_dropout},
                                       transformer_rng);
  Rng mvp_rng(derive_seed(seed, "mvp_head"));
  mvp_head_ = Fcn<T>(config.hidden_size, {config.mvp_hidden}, config.in_channels(), 0.0, mvp_rng);
  Rng emotion_rng(derive_seed(seed, "emotion_head"));
  emotion_head_ = Fcn<T>(config.hidden_size, {config.emotion_hidden}, 1, config.emotion_dropout, emotion_rng);
}

template <typename T>
SingleModalityModel<T> SingleModalityModel<T>::clone() const {
  SingleModalityModel copy(config_, seed_);
  copy.mode_ = mode_;
  copy.target_ = target_;
  copy.set_emotion_dropout(emotion_head_.dropout_rate());
  copy.set_transformer_dropout(transformer_.spec().dropout_rate);
  copy.restore(snapshot());
  return copy;
}

template <typename T>
Tensor<T> SingleModalityModel<T>::encode(const Tensor<T>& segment, const ForwardContext& ctx,
                                         std::vector<Tensor<T>>* attention) const {
  if (segment.rank() != 2 || segment.dim(0) != config_.in_channels()) {
    throw DimensionError(std::string(modality_name(config_.modality)) + " model expects " +
                         std::to_string(config_.in_channels()) + " channels, got segment " +
                         shape_str(segment.shape()));
  }
  const Tensor<T> features = encoder_.forward(segment);                            // [F × T]
  const Tensor<T> projected = conv1d(features, projection_weight_, projection_bias_, 0);  // [d × T]
  const Tensor<T> sequence = concat_rows<T>({cls_, transpose(projected)});        // [(T+1) × d]
  return transformer_.forward(sequence, ctx, attention);
}

template <typename T>
Tensor<T> SingleModalityModel<T>::forward_pretrain(const Tensor<T>& masked_segment, const ForwardContext& ctx) const {
  if (mode_ != ModelMode::kPretrain) throw ContractError("forward_pretrain: model is not in pretrain mode");
  const Tensor<T> encoded = encode(masked_segment, ctx);
  const Tensor<T> tokens = slice_rows(encoded, 1, encoded.dim(0) - 1);
  return mvp_head_.forward(tokens, ctx).output;
}

template <typename T>
ClassifyOutput<T> SingleModalityModel<T>::classify_encoded(const Tensor<T>& encoded, const ForwardContext& ctx) const {
  const FcnOutput<T> out = emotion_head_.forward(slice_rows(encoded, 0, 1), ctx);
  return {out.output, out.penultimate};
}

template <typename T>
ClassifyOutput<T> SingleModalityModel<T>::forward_classify(const Tensor<T>& segment, const ForwardContext& ctx) const {
  if (mode_ != ModelMode::kFinetune) throw ContractError("forward_classify: model is not in finetune mode");
  return classify_encoded(encode(segment, ctx), ctx);
}

template <typename T>
NamedParameters<T> SingleModalityModel<T>::backbone_parameters() const {
  NamedParameters<T> out;
  encoder_.collect("encoder", out);
  out.emplace_back("projection.weight", projection_weight_);
  out.emplace_back("projection.bias", projection_bias_);
  out.emplace_back("cls", cls_);
  transformer_.collect("transformer", out);
  return out;
}

template <typename T>
NamedParameters<T> SingleModalityModel<T>::mvp_head_parameters() const {
  NamedParameters<T> out;
  mvp_head_.collect("mvp_head", out);
  return out;
}

template <typename T>
NamedParameters<T> SingleModalityModel<T>::emotion_head_parameters() const {
  NamedParameters<T> out;
  emotion_head_.collect("emotion_head", out);
  return out;
}

template <typename T>
NamedParameters<T> SingleModalityModel<T>::parameters() const {
  NamedParameters<T> out = backbone_parameters();
  for (auto& p : mvp_head_parameters()) out.push_back(std::move(p));
  for (auto& p : emotion_head_parameters()) out.push_back(std::move(p));
  return out;
}

template <typename T>
NamedParameters<T> SingleModalityModel<T>::trainable_parameters() const {
  NamedParameters<T> out = backbone_parameters();
  for (auto& p : mode_ == ModelMode::kPretrain ? mvp_head_parameters() : emotion_head_parameters()) {
    out.push_back(std::move(p));
  }
  return out;
}

template <typename T>
void SingleModalityModel<T>::copy_backbone_from(const SingleModalityModel& other) {
  auto dst = backbone_parameters();
  const auto src = other.backbone_parameters();
  if (dst.size() != src.size()) throw DimensionError("copy_backbone_from: architectures differ");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].first != src[i].first || dst[i].second.shape() != src[i].second.shape()) {
      throw DimensionError("copy_backbone_from: parameter " + dst[i].first + " differs in shape");
    }
    std::copy(src[i].second.data().begin(), src[i].second.data().end(), dst[i].second.mutable_data().begin());
  }
}

template <typename T>
void SingleModalityModel<T>::set_requires_grad(bool on) {
  for (auto& [name, p] : parameters()) p.set_requires_grad(on);
}

template <typename T>
std::vector<std::vector<T>> SingleModalityModel<T>::snapshot() const {
  std::vector<std::vector<T>> out;
  for (const auto& [name, p] : parameters()) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

template <typename T>
void SingleModalityModel<T>::restore(const std::vector<std::vector<T>>& values) {
  auto params = parameters();
  if (values.size() != params.size()) throw DimensionError("restore: parameter count differs");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].size() != params[i].second.numel()) throw DimensionError("restore: " + params[i].first);
    std::copy(values[i].begin(), values[i].end(), params[i].second.mutable_data().begin());
  }
}

// ---------------------------------------------------------------------------

template <typename T>
FusedModel<T>::FusedModel(SingleModalityModel<T> ecg, SingleModalityModel<T> eeg, const FusionConfig& config,
                          std::uint64_t seed)
    : ecg_(std::move(ecg)), eeg_(std::move(eeg)), config_(config) {
  if (ecg_.config().modality != Modality::kEcg || eeg_.config().modality != Modality::kEeg) {
    throw ContractError("FusedModel: expects an ECG and an EEG recognizer");
  }
  ecg_.set_mode(ModelMode::kFinetune);
  eeg_.set_mode(ModelMode::kFinetune);
  ecg_.set_requires_grad(false);
  eeg_.set_requires_grad(false);
  Rng rng(derive_seed(seed, "fusion_head"));
  head_ = Fcn<T>(fusion_width(), config.hidden, 1, config.dropout, rng);
}

template <typename T>
std::size_t FusedModel<T>::fusion_width() const {
  return ecg_.config().emotion_hidden + eeg_.config().emotion_hidden;
}

template <typename T>
Tensor<T> FusedModel<T>::features(const Tensor<T>& ecg_segment, const Tensor<T>& eeg_segment) const {
  NoGradGuard no_grad;
  const ForwardContext eval{};
  const auto e = ecg_.forward_classify(ecg_segment, eval).penultimate;
  const auto g = eeg_.forward_classify(eeg_segment, eval).penultimate;
  return concat_cols<T>({e, g}).detach();
}

template <typename T>
Tensor<T> FusedModel<T>::head_forward(const Tensor<T>& features, const ForwardContext& ctx) const {
  if (features.rank() != 2 || features.dim(1) != fusion_width()) {
    throw DimensionError("fusion head expects width " + std::to_string(fusion_width()) + ", got " +
                         shape_str(features.shape()));
  }
  return head_.forward(features, ctx).output;
}

template <typename T>
Tensor<T> FusedModel<T>::forward(const Tensor<T>& ecg_segment, const Tensor<T>& eeg_segment,
                                 const ForwardContext& ctx) const {
  return head_forward(features(ecg_segment, eeg_segment), ctx);
}

template <typename T>
NamedParameters<T> FusedModel<T>::head_parameters() const {
  NamedParameters<T> out;
  head_.collect("fusion_head", out);
  return out;
}

template <typename T>
NamedParameters<T> FusedModel<T>::backbone_parameters() const {
  NamedParameters<T> out;
  for (auto& [n, p] : ecg_.parameters()) out.emplace_back("ecg." + n, p);
  for (auto& [n, p] : eeg_.parameters()) out.emplace_back("eeg." + n, p);
  return out;
}

template <typename T>
NamedParameters<T> FusedModel<T>::parameters() const {
  NamedParameters<T> out = backbone_parameters();
  for (auto& p : head_parameters()) out.push_back(std::move(p));
  return out;
}

template <typename T>
std::vector<std::vector<T>> FusedModel<T>::snapshot_head() const {
  std::vector<std::vector<T>> out;
  for (const auto& [n, p] : head_parameters()) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

template <typename T>
void FusedModel<T>::restore_head(const std::vector<std::vector<T>>& values) {
  auto params = head_parameters();
  if (values.size() != params.size()) throw DimensionError("restore_head: parameter count differs");
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(values[i].begin(), values[i].end(), params[i].second.mutable_data().begin());
  }
}

template <typename T>
Tensor<T> fused_forward(const FusedModel<T>& model, const SegmentInput<T>& ecg, const SegmentInput<T>& eeg,
                        const ForwardContext& ctx) {
  if (ecg.trial != eeg.trial || ecg.window != eeg.window) {
    throw ContractError("fused_forward: ECG segment " + ecg.trial + "#" + std::to_string(ecg.window) +
                        " and EEG segment " + eeg.trial + "#" + std::to_string(eeg.window) + " are not aligned");
  }
  return model.forward(ecg.signal, eeg.signal, ctx);
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'P', 'H', 'F', 'U'};

template <typename U>
void put(std::ostream& out, U v) {
  static_assert(std::is_integral_v<U>);
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get(std::istream& in, const std::string& what) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw LoadError("checkpoint truncated while reading " + what);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<U>(v);
}

template <typename T>
constexpr std::uint8_t dtype_tag() {
  return sizeof(T) == 4 ? 1 : 2;
}

Json model_echo(const Json& model, const char* kind, ModelMode mode, std::optional<Target> target) {
  Json j;
  j["kind"] = kind;
  j["mode"] = mode == ModelMode::kPretrain ? "pretrain" : "finetune";
  j["target"] = target ? Json(std::string(target_name(*target))) : Json(nullptr);
  j["model"] = model;
  return j;
}

template <typename T>
void load_values(NamedParameters<T>& params, const CheckpointData& data, const std::string& prefix,
                 const fs::path& path) {
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : data.tensors) by_name[t.name] = &t;
  for (auto& [name, p] : params) {
    auto it = by_name.find(prefix + name);
    if (it == by_name.end()) throw LoadError("checkpoint " + path.string() + " lacks parameter " + prefix + name);
    const auto& t = *it->second;
    Shape shape(t.dims.begin(), t.dims.end());
    if (shape != p.shape()) {
      throw LoadError("checkpoint " + path.string() + ": parameter " + prefix + name + " has shape " +
                      shape_str(shape) + ", model expects " + shape_str(p.shape()));
    }
    auto dst = p.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(t.values[i]);
  }
}

ModelConfig config_from_echo(const Json& model) {
  const Modality m = parse_modality(model.at("modality").get<std::string>());
  return model_config_from_json(model, ModelConfig::defaults(m));
}

void check_config(const ModelConfig& stored, const ModelConfig& expected, const fs::path& path) {
  const Json a = to_json(stored);
  const Json b = to_json(expected);
  for (const auto& [key, value] : b.items()) {
    // Dropout rates are training settings, not architecture.
    if (key == "transformer_dropout" || key == "emotion_dropout" || key == "cls_init_std") continue;
    if (a.at(key) != value) {
      throw LoadError("checkpoint " + path.string() + ": config mismatch in field '" + key + "' (stored " +
                      a.at(key).dump() + ", expected " + value.dump() + ")");
    }
  }
}

}  // namespace

template <typename T>
void write_checkpoint(const fs::path& path, const Json& config, const NamedParameters<T>& params) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = config.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, p] : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(out, dtype_tag<T>());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.rank()));
    for (auto d : p.shape()) put<std::uint64_t>(out, d);
    for (T v : p.data()) {
      if constexpr (sizeof(T) == 4) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
      else put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  if (!out) throw IoError("short write to checkpoint " + path.string());
}

CheckpointData read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("checkpoint not found: " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw LoadError("checkpoint " + path.string() + ": bad magic (expected PHFU)");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
  }
  const auto cfg_len = get<std::uint32_t>(in, "config length");
  std::string cfg(cfg_len, '\0');
  if (!in.read(cfg.data(), cfg_len)) throw LoadError("checkpoint truncated while reading config");
  CheckpointData data;
  try {
    data.config = Json::parse(cfg);
  } catch (const Json::exception& e) {
    throw LoadError("checkpoint " + path.string() + ": config echo is not JSON");
  }
  const auto count = get<std::uint32_t>(in, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const auto name_len = get<std::uint32_t>(in, "name length");
    if (name_len > 4096) throw LoadError("checkpoint " + path.string() + ": corrupt tensor name");
    t.name.resize(name_len);
    if (!in.read(t.name.data(), name_len)) throw LoadError("checkpoint truncated while reading tensor name");
    t.dtype = get<std::uint8_t>(in, "dtype");
    if (t.dtype != 1 && t.dtype != 2) throw LoadError("checkpoint " + path.string() + ": unknown dtype tag");
    const auto rank = get<std::uint32_t>(in, "rank");
    if (rank > 8) throw LoadError("checkpoint " + path.string() + ": corrupt rank");
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.dims.push_back(get<std::uint64_t>(in, "dims"));
      n *= t.dims.back();
    }
    if (n > (std::uint64_t{1} << 32)) throw LoadError("checkpoint " + path.string() + ": corrupt extents");
    t.values.resize(n);
    for (std::uint64_t k = 0; k < n; ++k) {
      if (t.dtype == 1) t.values[k] = std::bit_cast<float>(get<std::uint32_t>(in, t.name));
      else t.values[k] = std::bit_cast<double>(get<std::uint64_t>(in, t.name));
    }
    data.tensors.push_back(std::move(t));
  }
  return data;
}

template <typename T>
void save_checkpoint(const SingleModalityModel<T>& model, const fs::path& path) {
  write_checkpoint(path, model_echo(to_json(model.config()), "single", model.mode(), model.target()),
                   model.parameters());
}

template <typename T>
SingleModalityModel<T> load_checkpoint(const fs::path& path, const std::optional<ModelConfig>& expected) {
  const CheckpointData data = read_checkpoint(path);
  if (data.config.value("kind", std::string()) != "single") {
    throw LoadError("checkpoint " + path.string() + " is not a single-modality model");
  }
  ModelConfig stored;
  try {
    stored = config_from_echo(data.config.at("model"));
  } catch (const std::exception& e) {
    throw LoadError("checkpoint " + path.string() + ": unreadable config echo: " + e.what());
  }
  if (expected) check_config(stored, *expected, path);
  SingleModalityModel<T> model(stored, 0);
  model.set_mode(data.config.value("mode", std::string()) == "finetune" ? ModelMode::kFinetune : ModelMode::kPretrain);
  if (data.config.contains("target") && data.config["target"].is_string()) {
    model.set_target(parse_target(data.config["target"].get<std::string>()));
  }
  auto params = model.parameters();
  load_values(params, data, "", path);
  return model;
}

template <typename T>
void save_checkpoint(const FusedModel<T>& model, const fs::path& path) {
  Json j;
  j["kind"] = "fused";
  j["target"] = model.target() ? Json(std::string(target_name(*model.target()))) : Json(nullptr);
  j["ecg"] = to_json(model.ecg().config());
  j["eeg"] = to_json(model.eeg().config());
  j["fusion"] = to_json(model.config());
  write_checkpoint(path, j, model.parameters());
}

template <typename T>
FusedModel<T> load_fused_checkpoint(const fs::path& path) {
  const CheckpointData data = read_checkpoint(path);
  if (data.config.value("kind", std::string()) != "fused") {
    throw LoadError("checkpoint " + path.string() + " is not a fused model");
  }
  SingleModalityModel<T> ecg(config_from_echo(data.config.at("ecg")), 0);
  SingleModalityModel<T> eeg(config_from_echo(data.config.at("eeg")), 0);
  std::optional<Target> target;
  if (data.config["target"].is_string()) target = parse_target(data.config["target"].get<std::string>());
  ecg.set_target(target);
  eeg.set_target(target);
  FusedModel<T> fused(std::move(ecg), std::move(eeg), fusion_config_from_json(data.config.at("fusion"), {}), 0);
  auto params = fused.parameters();
  load_values(params, data, "", path);
  return fused;
}

template <typename T>
std::uint64_t parameter_hash(const NamedParameters<T>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, p] : params) {
    feed(name.data(), name.size());
    feed(p.data().data(), p.numel() * sizeof(T));
  }
  return h;
}

#define PHYSIOFUSE_INSTANTIATE_MODEL(T)                                                              \
  template class SingleModalityModel<T>;                                                             \
  template class FusedModel<T>;                                                                      \
  template Tensor<T> fused_forward(const FusedModel<T>&, const SegmentInput<T>&, const SegmentInput<T>&, \
                                   const ForwardContext&);                                           \
  template void write_checkpoint(const fs::path&, const Json&, const NamedParameters<T>&);           \
  template void save_checkpoint(const SingleModalityModel<T>&, const fs::path&);                     \
  template SingleModalityModel<T> load_checkpoint(const fs::path&, const std::optional<ModelConfig>&); \
  template void save_checkpoint(const FusedModel<T>&, const fs::path&);                              \
  template FusedModel<T> load_fused_checkpoint(const fs::path&);                                     \
  template std::uint64_t parameter_hash(const NamedParameters<T>&);

PHYSIOFUSE_INSTANTIATE_MODEL(float)
PHYSIOFUSE_INSTANTIATE_MODEL(double)

#undef PHYSIOFUSE_INSTANTIATE_MODEL

}  // namespace physiofuse
