#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "physiofuse/gradcheck.hpp"
#include "physiofuse/training.hpp"

using namespace physiofuse;
using TD = Tensor<double>;
namespace fs = std::filesystem;

namespace {

/// Slow sinusoids with random frequency, phase and amplitude: smooth enough that
/// context predicts a masked span.
std::vector<Sample<double>> sine_corpus(std::size_t n, std::size_t channels, std::size_t length, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample<double>> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(channels * length);
    for (std::size_t c = 0; c < channels; ++c) {
      const double f = rng.uniform(0.02, 0.05), p = rng.uniform(0, 2 * std::numbers::pi), a = rng.uniform(0.8, 1.6);
      for (std::size_t t = 0; t < length; ++t) v[c * length + t] = a * std::sin(2 * std::numbers::pi * f * t + p);
    }
    out.push_back({i, TD::from({channels, length}, std::move(v)), -1});
  }
  return out;
}

/// Label 1 segments carry a faster rhythm than label 0 segments.
std::vector<Sample<double>> separable(std::size_t n, std::size_t length, std::uint64_t seed, bool shuffle_labels) {
  Rng rng(seed);
  std::vector<Sample<double>> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const double f = label ? 0.2 : 0.05;
    const double p = rng.uniform(0, 2 * std::numbers::pi);
    std::vector<double> v(length);
    for (std::size_t t = 0; t < length; ++t) v[t] = std::sin(2 * std::numbers::pi * f * t + p) + 0.1 * rng.normal();
    out.push_back({i, TD::from({1, length}, std::move(v)), shuffle_labels ? static_cast<int>(rng.next_u64() % 2) : label});
  }
  return out;
}

TrainConfig pretrain_cfg(std::size_t epochs) {
  TrainConfig c = TrainConfig::defaults(Phase::kPretrain);
  c.epochs = epochs;
  c.batch_size = 8;
  c.schedule = WarmupLinearDecay{3e-3, 2, epochs + 1};
  c.dropout = 0.0;
  c.mask_span = 4;
  c.seed = 21;
  return c;
}

TrainConfig finetune_cfg(std::size_t epochs) {
  TrainConfig c = TrainConfig::defaults(Phase::kFinetune);
  c.epochs = epochs;
  c.batch_size = 8;
  c.schedule = StepDecay{3e-3, 0.65, 50};
  c.dropout = 0.0;
  c.target = Target::kArousal;
  c.seed = 22;
  return c;
}

double accuracy_on(const SingleModalityModel<double>& m, const std::vector<Sample<double>>& s) {
  const auto p = predict(m, s);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < s.size(); ++i) ok += p[i] == s[i].label;
  return static_cast<double>(ok) / static_cast<double>(s.size());
}

}  // namespace

TEST_CASE("pre-training lowers the loss, beats the copy baseline and is reproducible") {
  auto make = [] { return SingleModalityModel<double>(tiny_model_config(Modality::kEcg), 3); };
  const auto mono = sine_corpus(48, 1, 32, 1);
  auto a = make();
  const auto cfg = pretrain_cfg(50);
  const auto result = pretrain_mvp(a, mono, cfg);
  REQUIRE(result.epochs.size() == 50);
  CHECK(result.epochs.front().train_loss > result.epochs.back().train_loss);
  const double baseline = mvp_copy_baseline(mono, cfg, 99);
  const double trained = mvp_loss(a, mono, cfg, 99);
  CHECK(trained <= 0.8 * baseline);

  auto b = make();
  pretrain_mvp(b, mono, cfg);
  CHECK(parameter_hash(a.parameters()) == parameter_hash(b.parameters()));
  const auto pa = fs::temp_directory_path() / "physiofuse_test_training_a.ckpt";
  const auto pb = fs::temp_directory_path() / "physiofuse_test_training_b.ckpt";
  save_checkpoint(a, pa);
  save_checkpoint(b, pb);
  std::ifstream fa(pa, std::ios::binary), fb(pb, std::ios::binary);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  CHECK(sa.str() == sb.str());
}

TEST_CASE("fine-tuning fits separable labels") {
  SingleModalityModel<double> m(tiny_model_config(Modality::kEcg), 4);
  const auto train = separable(40, 32, 5, false);
  const auto result = finetune_emotion(m, train, {}, finetune_cfg(100));
  CHECK(result.best_epoch == 100);
  CHECK(accuracy_on(m, train) >= 0.95);
}

TEST_CASE("shuffled labels give chance accuracy on held-out data") {
  SingleModalityModel<double> m(tiny_model_config(Modality::kEcg), 6);
  const auto train = separable(60, 32, 7, true);
  const auto val = separable(20, 32, 8, true);
  const auto held_out = separable(400, 32, 9, true);
  finetune_emotion(m, train, val, finetune_cfg(30));
  CHECK(std::abs(accuracy_on(m, held_out) - 0.5) <= 0.1);
}

TEST_CASE("fine-tuning keeps the best validation epoch") {
  SingleModalityModel<double> m(tiny_model_config(Modality::kEcg), 10);
  const auto train = separable(24, 32, 11, false);
  const auto val = separable(24, 32, 12, false);
  const auto result = finetune_emotion(m, train, val, finetune_cfg(20));
  REQUIRE(result.best_val_accuracy.has_value());
  double best = 0;
  for (const auto& e : result.epochs) best = std::max(best, *e.val_accuracy);
  CHECK(*result.best_val_accuracy == best);
  CHECK(accuracy_on(m, val) == doctest::Approx(best));
}

TEST_CASE("fusion trains only the head") {
  SingleModalityModel<double> ecg(tiny_model_config(Modality::kEcg), 1), eeg(tiny_model_config(Modality::kEeg), 2);
  for (auto* m : {&ecg, &eeg}) {
    m->set_mode(ModelMode::kFinetune);
    m->set_target(Target::kValence);
  }
  FusedModel<double> fused(std::move(ecg), std::move(eeg), FusionConfig{{6, 3}, 0.1}, 3);
  Rng rng(4);
  std::vector<PairSample<double>> pairs;
  for (std::size_t i = 0; i < 12; ++i) {
    std::vector<double> e(16), g(160);
    for (auto& x : e) x = rng.normal();
    for (auto& x : g) x = rng.normal();
    pairs.push_back({i, TD::from({1, 16}, e), TD::from({10, 16}, g), static_cast<int>(i % 2)});
  }
  const auto before = parameter_hash(fused.backbone_parameters());

  // Gradients of the fusion loss never reach a backbone parameter.
  for (auto& [n, p] : fused.backbone_parameters()) p.zero_grad();
  backward(bce_with_logits(fused.forward(pairs[0].ecg, pairs[0].eeg, {}), TD::from({1, 1}, {1.0})));
  for (const auto& [n, p] : fused.backbone_parameters()) {
    INFO(n);
    if (p.has_grad())
      for (double g : p.grad()) CHECK(g == 0.0);
  }
  for (const auto& [n, p] : fused.head_parameters()) CHECK(p.has_grad());

  TrainConfig cfg = TrainConfig::defaults(Phase::kFuse);
  cfg.epochs = 5;
  cfg.batch_size = 4;
  cfg.target = Target::kValence;
  train_fused(fused, pairs, {}, cfg);
  CHECK(parameter_hash(fused.backbone_parameters()) == before);

  Adam<double> opt(cfg.adam, fused.head_parameters());
  for (const auto& name : opt.state_names()) CHECK(name.rfind("fusion", 0) == 0);

  cfg.target = Target::kArousal;
  CHECK_THROWS_AS(train_fused(fused, pairs, {}, cfg), ContractError);
}

TEST_CASE("leakage guard") {
  const LeakageGuard guard(2, {5, 9});
  const std::vector<std::size_t> clean = {1, 2, 3}, dirty = {4, 9};
  CHECK_NOTHROW(guard.check(clean, "training"));
  CHECK_THROWS_AS(guard.check(dirty, "training"), LeakageError);
  CHECK(guard.checks() == 2);

  SingleModalityModel<double> m(tiny_model_config(Modality::kEcg), 1);
  auto train = separable(8, 16, 1, false);
  train[3].id = 5;
  CHECK_THROWS_AS(finetune_emotion(m, train, {}, finetune_cfg(1), {}, &guard), LeakageError);
}

TEST_CASE("non-finite loss aborts") {
  SingleModalityModel<double> m(tiny_model_config(Modality::kEcg), 1);
  auto train = separable(4, 16, 1, false);
  std::vector<double> v(16, std::nan(""));
  train[0].signal = TD::from({1, 16}, v);
  CHECK_THROWS_AS(finetune_emotion(m, train, {}, finetune_cfg(1)), NumericError);
}

TEST_CASE("run log round trip and epoch ordering") {
  RunLog log;
  EpochRecord r{"finetune", "ecg", "arousal", 0, 1, 0.5, 0.6, 0.75, 1e-3, 12.0};
  log.append(r);
  r.epoch = 2;
  r.val_loss.reset();
  log.append(r);
  CHECK_THROWS_AS(log.append(r), ContractError);
  r.modality = "eeg";
  CHECK_NOTHROW(log.append(r));
  log.set_checkpoint("model.ckpt");
  const auto p = fs::temp_directory_path() / "physiofuse_test_runlog.jsonl";
  fs::remove(p);
  log.write_jsonl(p, false);
  const auto back = RunLog::read_jsonl(p);
  REQUIRE(back.size() == 3);
  CHECK(back[0].val_accuracy == 0.75);
  CHECK_FALSE(back[1].val_loss.has_value());
  CHECK(back[2].modality == "eeg");
  CHECK(back[0].wall_ms == 0.0);
}

TEST_CASE("train config json") {
  const auto c = TrainConfig::defaults(Phase::kPretrain);
  const auto back = train_config_from_json(to_json(c), TrainConfig::defaults(Phase::kPretrain), "pretrain");
  CHECK(to_json(back) == to_json(c));
  Json bad = to_json(c);
  bad["epoch"] = 3;
  CHECK_THROWS_AS(train_config_from_json(bad, c, "pretrain"), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(to_json(c), TrainConfig::defaults(Phase::kFuse), "fuse"), ConfigError);
  CHECK(std::get<WarmupLinearDecay>(c.schedule).peak == 5e-4);
  CHECK(std::get<StepDecay>(TrainConfig::defaults(Phase::kFinetune).schedule).period_epochs == 45);
}
