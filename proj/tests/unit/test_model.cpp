#include <filesystem>

#include "doctest.h"
#include "physiofuse/gradcheck.hpp"

using namespace physiofuse;
using TD = Tensor<double>;
namespace fs = std::filesystem;

namespace {

TD random_segment(std::size_t channels, std::size_t length, Rng& rng) {
  std::vector<double> v(channels * length);
  for (auto& x : v) x = rng.normal();
  return TD::from({channels, length}, std::move(v));
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("physiofuse_test_model_" + name); }

}  // namespace

TEST_CASE("config json round trip and unknown keys") {
  ModelConfig c = tiny_model_config(Modality::kEcg);
  const ModelConfig back = model_config_from_json(to_json(c), ModelConfig::defaults(Modality::kEcg));
  CHECK(to_json(back) == to_json(c));
  Json bad = to_json(c);
  bad["hiden_size"] = 3;
  CHECK_THROWS_AS(model_config_from_json(bad, c), ConfigError);
  CHECK(ModelConfig::defaults(Modality::kEeg).kernels == std::vector<std::size_t>{65, 33, 17});
}

TEST_CASE("forward shapes and mode contract") {
  SingleModalityModel<double> m(tiny_model_config(Modality::kEeg), 1);
  Rng rng(2);
  const auto seg = random_segment(10, 20, rng);
  CHECK(m.encode(seg, {}).shape() == Shape{21, 8});
  CHECK(m.forward_pretrain(seg, {}).shape() == Shape{20, 10});
  CHECK_THROWS_AS(m.forward_classify(seg, {}), ContractError);
  m.set_mode(ModelMode::kFinetune);
  const auto out = m.forward_classify(seg, {});
  CHECK(out.logit.shape() == Shape{1, 1});
  CHECK(out.penultimate.shape() == Shape{1, 4});
  CHECK_THROWS_AS(m.forward_classify(random_segment(1, 20, rng), {}), DimensionError);
}

TEST_CASE("only CLS_e feeds the emotion head") {
  SingleModalityModel<double> m(tiny_model_config(Modality::kEcg), 3);
  m.set_mode(ModelMode::kFinetune);
  Rng rng(4);
  const auto encoded = m.encode(random_segment(1, 16, rng), {});
  std::vector<double> v(encoded.data().begin(), encoded.data().end());
  const std::size_t d = encoded.dim(1);
  // Reverse rows 1..T, keep row 0.
  for (std::size_t i = 1, j = encoded.dim(0) - 1; i < j; ++i, --j)
    for (std::size_t c = 0; c < d; ++c) std::swap(v[i * d + c], v[j * d + c]);
  const auto permuted = TD::from(encoded.shape(), v);
  CHECK(m.classify_encoded(encoded, {}).logit.item() == m.classify_encoded(permuted, {}).logit.item());
}

TEST_CASE("same seed, same parameters; clone is independent") {
  SingleModalityModel<double> a(tiny_model_config(Modality::kEeg), 9), b(tiny_model_config(Modality::kEeg), 9);
  CHECK(parameter_hash(a.parameters()) == parameter_hash(b.parameters()));
  auto c = a.clone();
  c.parameters().front().second.mutable_data()[0] += 1.0;
  CHECK(parameter_hash(a.parameters()) == parameter_hash(b.parameters()));
  CHECK(parameter_hash(c.parameters()) != parameter_hash(a.parameters()));
}

TEST_CASE("scratch and pretrained arms differ only in the backbone") {
  const auto cfg = tiny_model_config(Modality::kEcg);
  SingleModalityModel<double> pretrained(cfg, 100);
  SingleModalityModel<double> scratch(cfg, 5), warm(cfg, 5);
  warm.copy_backbone_from(pretrained);
  CHECK(parameter_hash(warm.backbone_parameters()) == parameter_hash(pretrained.backbone_parameters()));
  CHECK(parameter_hash(warm.backbone_parameters()) != parameter_hash(scratch.backbone_parameters()));
  CHECK(parameter_hash(warm.emotion_head_parameters()) == parameter_hash(scratch.emotion_head_parameters()));
  CHECK(parameter_hash(warm.mvp_head_parameters()) == parameter_hash(scratch.mvp_head_parameters()));
}

TEST_CASE("checkpoint round trip is bit exact in both precisions") {
  Rng rng(5);
  const auto seg = random_segment(1, 24, rng);
  {
    SingleModalityModel<double> m(tiny_model_config(Modality::kEcg), 11);
    m.set_mode(ModelMode::kFinetune);
    m.set_target(Target::kValence);
    save_checkpoint(m, temp_file("d.ckpt"));
    auto back = load_checkpoint<double>(temp_file("d.ckpt"), tiny_model_config(Modality::kEcg));
    back.set_mode(ModelMode::kFinetune);
    CHECK(back.target() == Target::kValence);
    CHECK(back.forward_classify(seg, {}).logit.item() == m.forward_classify(seg, {}).logit.item());
    CHECK(parameter_hash(back.parameters()) == parameter_hash(m.parameters()));
  }
  {
    SingleModalityModel<float> m(tiny_model_config(Modality::kEcg), 12);
    save_checkpoint(m, temp_file("f.ckpt"));
    const auto back = load_checkpoint<float>(temp_file("f.ckpt"));
    CHECK(parameter_hash(back.parameters()) == parameter_hash(m.parameters()));
  }
}

TEST_CASE("bad checkpoints fail loudly") {
  SingleModalityModel<double> m(tiny_model_config(Modality::kEcg), 13);
  const auto p = temp_file("bad.ckpt");
  save_checkpoint(m, p);
  auto other = tiny_model_config(Modality::kEcg);
  other.hidden_size = 12;
  CHECK_THROWS_AS(load_checkpoint<double>(p, other), LoadError);
  fs::resize_file(p, fs::file_size(p) - 3);
  CHECK_THROWS_AS(load_checkpoint<double>(p), LoadError);
  CHECK_THROWS_AS(load_checkpoint<double>(temp_file("missing.ckpt")), LoadError);
}

TEST_CASE("fused model: frozen features and alignment") {
  SingleModalityModel<double> ecg(tiny_model_config(Modality::kEcg), 1), eeg(tiny_model_config(Modality::kEeg), 2);
  ecg.set_mode(ModelMode::kFinetune);
  eeg.set_mode(ModelMode::kFinetune);
  ecg.set_target(Target::kArousal);
  eeg.set_target(Target::kArousal);
  FusedModel<double> fused(std::move(ecg), std::move(eeg), FusionConfig{{6, 3}, 0.1}, 7);
  CHECK(fused.fusion_width() == 8);
  Rng rng(3);
  const auto e = random_segment(1, 16, rng), g = random_segment(10, 16, rng);
  const auto f = fused.features(e, g);
  CHECK(f.shape() == Shape{1, 8});
  CHECK_FALSE(f.requires_grad());
  const auto logit = fused_forward<double>(fused, {e, "s1/t1", 3}, {g, "s1/t1", 3}, {});
  CHECK(logit.shape() == Shape{1, 1});
  CHECK_THROWS_AS(fused_forward<double>(fused, {e, "s1/t1", 3}, {g, "s1/t1", 4}, {}), ContractError);
  CHECK_THROWS_AS(fused_forward<double>(fused, {e, "s1/t1", 3}, {g, "s1/t2", 3}, {}), ContractError);

  save_checkpoint(fused, temp_file("fused.ckpt"));
  const auto back = load_fused_checkpoint<double>(temp_file("fused.ckpt"));
  CHECK(back.forward(e, g, {}).item() == fused.forward(e, g, {}).item());
}
