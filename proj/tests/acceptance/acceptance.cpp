// Acceptance gate: one PASS/FAIL line per criterion. Usage: acceptance [--work DIR] [--only N,...]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "physiofuse/gradcheck.hpp"
#include "physiofuse/protocol.hpp"

using namespace physiofuse;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const fs::path& p) {
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ModelConfig small_model(Modality m) {
  ModelConfig c = ModelConfig::defaults(m);
  c.kernels = {9, 5, 3};
  c.conv_channels = {8, 8, 16};
  c.hidden_size = 16;
  c.num_layers = 1;
  c.mvp_hidden = 16;
  c.emotion_hidden = 8;
  return c;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double test_accuracy(const RunReport& report, const std::string& model) {
  std::vector<double> v;
  for (const auto& r : report.rows)
    if (r.model == model && r.metric == "accuracy") v.push_back(r.value);
  return mean_of(v);
}

// 1 -------------------------------------------------------------------------
Outcome gradcheck() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = run_gradcheck_suite(tiny_model_config(Modality::kEcg), tiny_model_config(Modality::kEeg), 16);
  const double secs = seconds_since(t0);
  const double err = report.max_rel_error();
  return {err < 1e-4 && secs < 60.0, fmt("max rel error %.3g over %zu checks (< 1e-4), %.1f s (< 60 s)", err,
                                         report.entries.size(), secs)};
}

// 2 -------------------------------------------------------------------------
Outcome receptive() {
  const auto rf = receptive_field({65, 33, 17}, {1, 1, 1});
  return {rf == 113, fmt("receptive field %zu (== 113)", rf)};
}

// 3 -------------------------------------------------------------------------
Outcome filters() {
  std::vector<FilterSpec> designs;
  for (const auto& name : filter_preset_names())
    if (auto spec = filter_preset(name)) designs.push_back(*spec);
  designs.push_back({FilterKind::kLowpass, 0, 57.6, 8});  // decimation guard at 128 Hz output
  double worst_pole = 0, worst_cut = 0;
  std::size_t checked = 0;
  for (double fs : {256.0, 512.0}) {
    for (const auto& spec : designs) {
      if (spec.high_hz >= fs / 2) continue;
      const auto f = design_butterworth(spec, fs);
      worst_pole = std::max(worst_pole, f.max_pole_magnitude());
      worst_cut = std::max(worst_cut, std::abs(std::abs(f.response(spec.high_hz)) - M_SQRT1_2));
      if (spec.kind == FilterKind::kBandpass)
        worst_cut = std::max(worst_cut, std::abs(std::abs(f.response(spec.low_hz)) - M_SQRT1_2));
      ++checked;
    }
  }
  const FilterSpec band{FilterKind::kBandpass, 0.8, 50.0, 8};
  const auto f = design_butterworth(band, 256.0);
  const std::size_t n = 8192;
  SignalRecord tone;
  tone.sample_rate = 256.0;
  tone.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) tone.samples[i] = std::sin(2 * M_PI * 100.0 * i / 256.0);
  const auto out = apply_filter(f, tone);
  double in_e = 0, out_e = 0;
  for (std::size_t i = n / 2; i < n; ++i) {
    in_e += tone.samples[i] * tone.samples[i];
    out_e += out.samples[i] * out.samples[i];
  }
  const double db = 10 * std::log10(out_e / in_e);
  const bool pass = worst_pole < 1.0 && worst_cut < 1e-6 && db <= -40.0;
  return {pass, fmt("%zu designs, max |pole| %.6f (< 1), max cutoff error %.2e (< 1e-6), 100 Hz tone %.1f dB (<= -40)",
                    checked, worst_pole, worst_cut, db)};
}

// 4 -------------------------------------------------------------------------
Outcome metrics() {
  Rng rng(2024);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.next_u64() % 80;
    const double skew = rng.uniform(), agree = rng.uniform();
    std::vector<int> y(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.bernoulli(skew);
      p[i] = rng.bernoulli(agree) ? y[i] : 1 - y[i];
    }
    const auto c = confusion(y, p);
    std::size_t correct = 0;
    double f1_sum = 0;
    for (int cls : {0, 1}) {
      std::set<std::size_t> predicted, actual, both;
      for (std::size_t i = 0; i < n; ++i) {
        if (p[i] == cls) predicted.insert(i);
        if (y[i] == cls) actual.insert(i);
        if (p[i] == cls && y[i] == cls) both.insert(i);
      }
      correct += both.size();
      const double denom = static_cast<double>(predicted.size() + actual.size());
      f1_sum += denom == 0 ? 0.0 : 2.0 * static_cast<double>(both.size()) / denom;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(n);
    if (accuracy(c) != acc || macro_f1(c) != f1_sum / 2.0) ++mismatches;
  }
  const double t = student_t_quantile(0.975, 9);
  const double terr = std::abs(t - 2.262157);
  return {mismatches == 0 && terr < 1e-4,
          fmt("%zu/1000 fuzzed mismatches (== 0), t(0.975, 9) = %.7f, error %.1e (< 1e-4)", mismatches, t, terr)};
}

// 5 -------------------------------------------------------------------------
Outcome masks() {
  Rng rng(77);
  std::size_t bad_count = 0, overlaps = 0, eeg_mismatch = 0;
  const std::size_t T = 1280, channels = 10;
  std::vector<double> eeg(channels * T);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto plan = sample_mask(T, 10, 0.15, rng);
    if (plan.masked_count() != 190) ++bad_count;
    std::vector<int> cover(T, 0);
    for (auto s : plan.span_starts)
      for (std::size_t i = 0; i < 10; ++i) ++cover[(s + i) % T];
    if (std::any_of(cover.begin(), cover.end(), [](int c) { return c > 1; })) ++overlaps;
    std::fill(eeg.begin(), eeg.end(), 1.0);
    apply_mask(plan, eeg, channels);
    for (std::size_t t = 0; t < T; ++t) {
      const bool first = eeg[t] == 0.0;
      for (std::size_t c = 1; c < channels; ++c) {
        if ((eeg[c * T + t] == 0.0) != first) {
          ++eeg_mismatch;
          break;
        }
      }
    }
  }
  return {bad_count == 0 && overlaps == 0 && eeg_mismatch == 0,
          fmt("10^4 plans: %zu with count != 190, %zu overlapping, %zu channel-inconsistent positions", bad_count,
              overlaps, eeg_mismatch)};
}

// 6 -------------------------------------------------------------------------
Outcome frozen_backbones() {
  using TF = Tensor<float>;
  SingleModalityModel<float> ecg(small_model(Modality::kEcg), 1), eeg(small_model(Modality::kEeg), 2);
  for (auto* m : {&ecg, &eeg}) {
    m->set_mode(ModelMode::kFinetune);
    m->set_target(Target::kArousal);
  }
  FusedModel<float> fused(std::move(ecg), std::move(eeg), FusionConfig{{8, 4}, 0.1}, 3);
  Rng rng(4);
  std::vector<PairSample<float>> pairs;
  for (std::size_t i = 0; i < 32; ++i) {
    std::vector<float> e(64), g(640);
    for (auto& x : e) x = static_cast<float>(rng.normal());
    for (auto& x : g) x = static_cast<float>(rng.normal());
    pairs.push_back({i, TF::from({1, 64}, e), TF::from({10, 64}, g), static_cast<int>(i % 2)});
  }
  const auto before = parameter_hash(fused.backbone_parameters());
  for (auto& [n, p] : fused.backbone_parameters()) p.zero_grad();
  backward(bce_with_logits(fused.forward(pairs[0].ecg, pairs[0].eeg, {}), TF::from({1, 1}, {1.0f})));
  std::size_t nonzero = 0;
  for (const auto& [n, p] : fused.backbone_parameters())
    if (p.has_grad())
      for (float g : p.grad()) nonzero += g != 0.0f;

  TrainConfig cfg = TrainConfig::defaults(Phase::kFuse);
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.target = Target::kArousal;
  train_fused(fused, pairs, {}, cfg);
  const auto after = parameter_hash(fused.backbone_parameters());
  return {before == after && nonzero == 0,
          fmt("backbone hash %s, %zu non-zero backbone gradient entries (== 0)", before == after ? "unchanged" : "CHANGED",
              nonzero)};
}

// 7 -------------------------------------------------------------------------
Outcome fusion_gain(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> margins;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    SyntheticSpec spec;
    spec.subjects = 8;
    spec.trials_per_subject = 10;
    spec.trial_seconds = 20;
    const auto manifest = generate_synthetic(spec, seed, fresh_dir(work / fmt("c7_data_%llu", (unsigned long long)seed)));
    RunConfig c;
    c.preprocess.target_rate = 64;
    c.preprocess.segment_seconds = 2;
    c.ecg = small_model(Modality::kEcg);
    c.eeg = small_model(Modality::kEeg);
    c.fusion.hidden = {8, 4};
    c.finetune.epochs = 20;
    c.finetune.batch_size = 32;
    c.finetune.dropout = 0.2;
    c.finetune.schedule = StepDecay{3e-3, 0.65, 10};
    c.fuse.epochs = 20;
    c.fuse.batch_size = 32;
    c.fuse.schedule = StepDecay{3e-3, 0.65, 10};
    c.eval.seed = seed;
    c.eval.pretrain = false;
    c.eval.folds_to_run = {0};
    c.eval.targets = {Target::kArousal};
    c.precision = 32;
    const auto result = run_cross_validation(manifest, c);
    const double e = test_accuracy(result.report, "ecg"), g = test_accuracy(result.report, "eeg"),
                 f = test_accuracy(result.report, "fused");
    margins.push_back(f - std::max(e, g));
    per_seed += fmt(" [seed %llu: ecg %.3f eeg %.3f fused %.3f]", (unsigned long long)seed, e, g, f);
  }
  const double secs = seconds_since(t0), margin = mean_of(margins);
  return {margin >= 0.02 && secs < 900,
          fmt("mean fused - best single %.4f (>= 0.02), %.0f s (< 900 s);", margin, secs) + per_seed};
}

// 8 -------------------------------------------------------------------------
Outcome pretraining_gain(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> gains;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    SyntheticSpec spec;
    spec.subjects = 8;
    spec.trials_per_subject = 10;
    spec.trial_seconds = 20;
    spec.ecg_bpm_delta = 8;
    spec.ecg_noise = 0.1;
    spec.ecg_only_fraction = 0;
    spec.eeg_only_fraction = 0;
    const auto manifest = generate_synthetic(spec, seed, fresh_dir(work / fmt("c8_data_%llu", (unsigned long long)seed)));
    RunConfig c;
    c.preprocess.target_rate = 64;
    c.preprocess.segment_seconds = 2;
    c.ecg = small_model(Modality::kEcg);
    c.pretrain.epochs = 60;
    c.pretrain.batch_size = 8;
    c.pretrain.dropout = 0.0;
    c.pretrain.mask_span = 5;  // the same duration as 10 samples at 128 Hz
    c.pretrain.schedule = WarmupLinearDecay{5e-4, 3, 61};
    c.finetune.epochs = 60;
    c.finetune.batch_size = 8;
    c.finetune.dropout = 0.2;
    c.finetune.schedule = StepDecay{1e-3, 0.65, 30};
    c.eval.seed = seed;
    c.eval.label_fraction = 0.1;

    const auto data = prepare_dataset(manifest, c.preprocess);
    const auto plan = make_folds(data.segments.size(), c.eval.folds, c.eval.seed);
    const Modality m = Modality::kEcg;
    const Target t = Target::kArousal;
    for (std::size_t k : {0, 1}) {
      const Fold& fold = plan.folds[k];
      std::vector<std::size_t> reference = fold.train;
      reference.insert(reference.end(), fold.validation.begin(), fold.validation.end());
      std::sort(reference.begin(), reference.end());
      const auto segments = normalize_segments(data, reference);

      SingleModalityModel<float> pretrained(c.ecg, init_seed(c, k, m));
      TrainConfig pcfg = c.pretrain;
      pcfg.seed = phase_seed(c, Phase::kPretrain, k, m, std::nullopt);
      pretrain_mvp(pretrained, make_samples<float>(segments, reference, m, std::nullopt), pcfg);

      const auto label_seed = derive_seed(c.eval.seed, "labels", k, static_cast<std::uint64_t>(t));
      const auto train = make_samples<float>(
          segments, labeled_subset(segments, fold.train, t, c.eval.label_fraction, label_seed), m, t);
      const auto val = make_samples<float>(
          segments, labeled_subset(segments, fold.validation, t, c.eval.label_fraction, label_seed + 1), m, t);
      const auto test = make_samples<float>(segments, fold.test, m, t);
      std::vector<int> labels;
      for (const auto& s : test) labels.push_back(s.label);

      double acc[2];
      for (int arm = 0; arm < 2; ++arm) {
        SingleModalityModel<float> model(c.ecg, init_seed(c, k, m));
        if (arm == 1) model.copy_backbone_from(pretrained);
        TrainConfig fcfg = c.finetune;
        fcfg.target = t;
        fcfg.seed = phase_seed(c, Phase::kFinetune, k, m, t);
        finetune_emotion(model, train, val, fcfg);
        acc[arm] = accuracy(confusion(labels, predict(model, test)));
      }
      gains.push_back(acc[1] - acc[0]);
      per_seed += fmt(" [seed %llu fold %zu: scratch %.3f pretrained %.3f]", (unsigned long long)seed, k, acc[0], acc[1]);
    }
  }
  const double secs = seconds_since(t0), gain = mean_of(gains);
  return {gain >= 0.02 && secs < 1200,
          fmt("mean pretrained - scratch %.4f (>= 0.02), %.0f s (< 1200 s);", gain, secs) + per_seed};
}

// 9 and 11 share the two tiny evaluate runs ---------------------------------
struct TinyRuns {
  bool identical = false;
  std::string diff;
  std::size_t segments = 0;
  ProtocolResult result;
  std::optional<std::string> error;
};

TinyRuns tiny_runs(const fs::path& work, const fs::path& source_dir) {
  TinyRuns out;
  SyntheticSpec spec = synthetic_spec_from_json(Json::parse(slurp(source_dir / "configs" / "tiny_synth.json")));
  const auto manifest = generate_synthetic(spec, 1, fresh_dir(work / "tiny_data"));
  RunConfig c = load_run_config(source_dir / "configs" / "tiny.json");
  c.precision = 64;
  out.segments = prepare_dataset(manifest, c.preprocess).segments.size();
  std::vector<std::string> files[2];
  try {
    for (int run = 0; run < 2; ++run) {
      const auto dir = fresh_dir(work / fmt("tiny_run_%d", run));
      auto result = run_cross_validation(manifest, c);
      emit_report(result.report, dir);
      for (const char* f : {"report.csv", "summary.json", "folds.json"}) files[run].push_back(slurp(dir / f));
      if (run == 0) out.result = std::move(result);
    }
  } catch (const std::exception& e) {
    out.error = e.what();
    return out;
  }
  out.identical = files[0] == files[1];
  return out;
}

Outcome reproducible(const TinyRuns& runs) {
  if (runs.error) return {false, "evaluate failed: " + *runs.error};
  return {runs.identical && runs.result.report.rows.size() == 120,
          fmt("two 64-bit runs %s, %zu rows", runs.identical ? "byte-identical" : "DIFFER",
              runs.result.report.rows.size())};
}

// 10 ------------------------------------------------------------------------
template <typename T>
std::size_t round_trip_mismatches(const fs::path& path, std::uint64_t seed) {
  SingleModalityModel<T> model(small_model(Modality::kEeg), seed);
  model.set_mode(ModelMode::kFinetune);
  model.set_target(Target::kValence);
  Rng rng(seed + 1);
  std::vector<Sample<T>> segs;
  for (std::size_t i = 0; i < 100; ++i) {
    std::vector<T> v(10 * 128);
    for (auto& x : v) x = static_cast<T>(rng.normal());
    segs.push_back({i, Tensor<T>::from({10, 128}, std::move(v)), static_cast<int>(rng.bernoulli(0.5))});
  }
  TrainConfig cfg = TrainConfig::defaults(Phase::kFinetune);
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.target = Target::kValence;
  finetune_emotion(model, segs, {}, cfg);
  save_checkpoint(model, path);
  auto back = load_checkpoint<T>(path);
  back.set_mode(ModelMode::kFinetune);
  std::size_t mismatches = 0;
  NoGradGuard no_grad;
  for (const auto& s : segs) {
    const T a = model.forward_classify(s.signal, {}).logit.item();
    const T b = back.forward_classify(s.signal, {}).logit.item();
    mismatches += std::memcmp(&a, &b, sizeof(T)) != 0;
  }
  return mismatches;
}

Outcome checkpoints(const fs::path& work) {
  const auto f32 = round_trip_mismatches<float>(work / "c10_f32.ckpt", 10);
  const auto f64 = round_trip_mismatches<double>(work / "c10_f64.ckpt", 11);
  return {f32 == 0 && f64 == 0,
          fmt("100 segments: %zu differing logits at 32-bit, %zu at 64-bit (== 0)", f32, f64)};
}

// 11 ------------------------------------------------------------------------
Outcome leakage(const TinyRuns& runs) {
  if (runs.error) return {false, "protocol raised: " + *runs.error};
  const auto& sets = runs.result.report.test_sets;
  std::vector<int> seen(runs.segments, 0);
  bool in_range = true;
  for (const auto& s : sets)
    for (auto id : s) {
      if (id >= seen.size()) in_range = false;
      else ++seen[id];
    }
  const bool partition = in_range && std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
  return {partition && runs.result.leakage_checks > 0,
          fmt("guard silent over %zu batch checks, %zu test folds %s %zu segments", runs.result.leakage_checks,
              sets.size(), partition ? "partition" : "DO NOT partition", runs.segments)};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "physiofuse_acceptance";
  fs::path source_dir = PHYSIOFUSE_SOURCE_DIR;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream s(argv[++i]);
      for (std::string tok; std::getline(s, tok, ',');) only.insert(std::stoi(tok));
    } else {
      std::fprintf(stderr, "usage: acceptance [--work DIR] [--only N,...]\n");
      return 1;
    }
  }
  fs::create_directories(work);

  std::optional<TinyRuns> tiny;
  auto tiny_once = [&]() -> const TinyRuns& {
    if (!tiny) tiny = tiny_runs(work, source_dir);
    return *tiny;
  };
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, gradcheck},
      {2, receptive},
      {3, filters},
      {4, metrics},
      {5, masks},
      {6, frozen_backbones},
      {7, [&] { return fusion_gain(work); }},
      {8, [&] { return pretraining_gain(work); }},
      {9, [&] { return reproducible(tiny_once()); }},
      {10, [&] { return checkpoints(work); }},
      {11, [&] { return leakage(tiny_once()); }},
  };
  int failed = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
