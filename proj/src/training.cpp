#include "physiofuse/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace physiofuse {

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::kPretrain: return "pretrain";
    case Phase::kFinetune: return "finetune";
    case Phase::kFuse: return "fuse";
  }
  return "?";
}

Phase parse_phase(std::string_view name) {
  if (name == "pretrain") return Phase::kPretrain;
  if (name == "finetune") return Phase::kFinetune;
  if (name == "fuse") return Phase::kFuse;
  throw ConfigError("unknown phase '" + std::string(name) + "'");
}

TrainConfig TrainConfig::defaults(Phase phase) {
  TrainConfig c;
  c.phase = phase;
  switch (phase) {
    case Phase::kPretrain:
      c.epochs = 500;
      c.schedule = WarmupLinearDecay{5e-4, 30, 500};
      c.adam.l2_decay = 5e-3;
      c.dropout = 0.1;
      break;
    case Phase::kFinetune:
      c.epochs = 100;
      c.schedule = StepDecay{1e-4, 0.65, 45};
      c.adam.l2_decay = 1e-5;
      c.dropout = 0.6;
      break;
    case Phase::kFuse:
      c.epochs = 52;
      c.schedule = StepDecay{1e-5, 0.65, 20};
      c.adam.l2_decay = 1e-5;
      c.dropout = 0.1;
      break;
  }
  return c;
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["phase"] = std::string(phase_name(c.phase));
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  Json s;
  if (const auto* w = std::get_if<WarmupLinearDecay>(&c.schedule)) {
    s["kind"] = "warmup_linear_decay";
    s["peak"] = w->peak;
    s["warmup_epochs"] = w->warmup_epochs;
    s["total_epochs"] = w->total_epochs;
  } else {
    const auto& d = std::get<StepDecay>(c.schedule);
    s["kind"] = "step_decay";
    s["initial"] = d.initial;
    s["factor"] = d.factor;
    s["period_epochs"] = d.period_epochs;
  }
  j["schedule"] = s;
  j["adam"] = {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon},
               {"l2_decay", c.adam.l2_decay}};
  j["dropout"] = c.dropout;
  j["seed"] = c.seed;
  j["target"] = c.target ? Json(std::string(target_name(*c.target))) : Json(nullptr);
  j["clip_norm"] = c.clip_norm;
  j["mask_span"] = c.mask_span;
  j["mask_ratio"] = c.mask_ratio;
  return j;
}

namespace {

void require_keys(const Json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) == known.end()) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

template <typename V>
void read_field(const Json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const Json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

TrainConfig train_config_from_json(const Json& j, const TrainConfig& base, const std::string& where) {
  require_keys(j,
               {"phase", "epochs", "batch_size", "schedule", "adam", "dropout", "seed", "target", "clip_norm",
                "mask_span", "mask_ratio"},
               where);
  TrainConfig c = base;
  if (j.contains("phase") && parse_phase(j["phase"].get<std::string>()) != base.phase) {
    throw ConfigError(where + ".phase: section is for phase " + std::string(phase_name(base.phase)));
  }
  read_field(j, "epochs", c.epochs, where);
  read_field(j, "batch_size", c.batch_size, where);
  read_field(j, "dropout", c.dropout, where);
  read_field(j, "seed", c.seed, where);
  read_field(j, "clip_norm", c.clip_norm, where);
  read_field(j, "mask_span", c.mask_span, where);
  read_field(j, "mask_ratio", c.mask_ratio, where);
  if (j.contains("target")) {
    if (j["target"].is_null()) c.target.reset();
    else c.target = parse_target(j["target"].get<std::string>());
  }
  if (j.contains("adam")) {
    const auto& a = j["adam"];
    const std::string w = where + ".adam";
    require_keys(a, {"beta1", "beta2", "epsilon", "l2_decay"}, w);
    read_field(a, "beta1", c.adam.beta1, w);
    read_field(a, "beta2", c.adam.beta2, w);
    read_field(a, "epsilon", c.adam.epsilon, w);
    read_field(a, "l2_decay", c.adam.l2_decay, w);
  }
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    const std::string w = where + ".schedule";
    const std::string kind = s.value("kind", std::get_if<StepDecay>(&c.schedule) ? "step_decay" : "warmup_linear_decay");
    if (kind == "step_decay") {
      require_keys(s, {"kind", "initial", "factor", "period_epochs"}, w);
      StepDecay d = std::get_if<StepDecay>(&c.schedule) ? std::get<StepDecay>(c.schedule) : StepDecay{};
      read_field(s, "initial", d.initial, w);
      read_field(s, "factor", d.factor, w);
      read_field(s, "period_epochs", d.period_epochs, w);
      c.schedule = d;
    } else if (kind == "warmup_linear_decay") {
      require_keys(s, {"kind", "peak", "warmup_epochs", "total_epochs"}, w);
      WarmupLinearDecay d =
          std::get_if<WarmupLinearDecay>(&c.schedule) ? std::get<WarmupLinearDecay>(c.schedule) : WarmupLinearDecay{};
      read_field(s, "peak", d.peak, w);
      read_field(s, "warmup_epochs", d.warmup_epochs, w);
      read_field(s, "total_epochs", d.total_epochs, w);
      c.schedule = d;
    } else {
      throw ConfigError(w + ".kind: unknown schedule '" + kind + "'");
    }
  }
  if (c.batch_size == 0) throw ConfigError(where + ".batch_size must be positive");
  if (c.dropout < 0.0 || c.dropout >= 1.0) throw ConfigError(where + ".dropout must lie in [0, 1)");
  return c;
}

// ---------------------------------------------------------------------------

void RunLog::append(const EpochRecord& r) {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->phase == r.phase && it->modality == r.modality && it->target == r.target && it->fold == r.fold) {
      if (r.epoch <= it->epoch) throw ContractError("RunLog: epoch indices must increase within a run");
      break;
    }
  }
  entries_.push_back(r);
}

void RunLog::write_jsonl(const std::filesystem::path& path, bool include_wall) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write run log " + path.string());
  for (const auto& r : entries_) {
    Json j;
    j["phase"] = r.phase;
    j["modality"] = r.modality;
    j["target"] = r.target;
    j["fold"] = r.fold;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["val_loss"] = r.val_loss ? Json(*r.val_loss) : Json(nullptr);
    j["val_accuracy"] = r.val_accuracy ? Json(*r.val_accuracy) : Json(nullptr);
    j["lr"] = r.lr;
    if (include_wall) j["wall_ms"] = r.wall_ms;
    out << j.dump() << '\n';
  }
  if (!checkpoint_.empty()) out << Json{{"checkpoint", checkpoint_.string()}}.dump() << '\n';
  if (!out) throw IoError("short write to run log " + path.string());
}

std::vector<EpochRecord> RunLog::read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open run log " + path.string());
  std::vector<EpochRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception&) {
      throw LoadError(path.string() + ":" + std::to_string(lineno) + ": not a JSON record");
    }
    if (!j.contains("epoch")) continue;  // checkpoint marker
    EpochRecord r;
    r.phase = j.value("phase", "");
    r.modality = j.value("modality", "");
    r.target = j.value("target", "");
    r.fold = j.value("fold", -1);
    r.epoch = j.value("epoch", std::size_t{0});
    r.train_loss = j.value("train_loss", 0.0);
    if (j.contains("val_loss") && !j["val_loss"].is_null()) r.val_loss = j["val_loss"].get<double>();
    if (j.contains("val_accuracy") && !j["val_accuracy"].is_null()) r.val_accuracy = j["val_accuracy"].get<double>();
    r.lr = j.value("lr", 0.0);
    r.wall_ms = j.value("wall_ms", 0.0);
    out.push_back(std::move(r));
  }
  return out;
}

LeakageGuard::LeakageGuard(int fold, std::vector<std::size_t> test_ids)
    : fold_(fold), test_(test_ids.begin(), test_ids.end()) {}

void LeakageGuard::check(std::span<const std::size_t> batch_ids, std::string_view context) const {
  ++checks_;
  for (std::size_t id : batch_ids) {
    if (test_.count(id)) {
      throw LeakageError("fold " + std::to_string(fold_) + ": test segment " + std::to_string(id) +
                         " appeared in a " + std::string(context) + " batch");
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void check_finite(double loss, std::string_view phase, std::size_t epoch) {
  if (!std::isfinite(loss)) {
    throw NumericError(std::string(phase) + ": non-finite loss at epoch " + std::to_string(epoch));
  }
}

/// Shuffles `order`, then for each batch calls `step(batch_indices)`, which
/// must accumulate gradients and return the summed per-sample loss.
template <typename T, typename StepFn>
double run_epoch(Adam<T>& optimizer, std::vector<std::size_t>& order, Rng& shuffle_rng, std::size_t batch_size,
                 double lr, const std::vector<std::size_t>& ids, const LeakageGuard* guard, std::string_view context,
                 StepFn&& step) {
  shuffle_rng.shuffle(order.begin(), order.end());
  double total = 0.0;
  std::vector<std::size_t> batch_ids;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + batch_size);
    std::span<const std::size_t> batch(order.data() + begin, end - begin);
    if (guard) {
      batch_ids.clear();
      for (std::size_t i : batch) batch_ids.push_back(ids[i]);
      guard->check(batch_ids, context);
    }
    optimizer.zero_grad();
    total += step(batch);
    optimizer.step(lr);
  }
  return total / static_cast<double>(order.size());
}

template <typename T>
Tensor<T> label_tensor(int label) {
  return Tensor<T>::from({1, 1}, {static_cast<T>(label)});
}

template <typename T>
Tensor<T> masked_input(const Tensor<T>& signal, const MaskPlan& plan) {
  std::vector<T> values(signal.data().begin(), signal.data().end());
  const std::size_t channels = signal.dim(0), length = signal.dim(1);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < length; ++t) {
      if (plan.mask[t]) values[c * length + t] = T(0);
    }
  }
  return Tensor<T>::from(signal.shape(), std::move(values));
}

template <typename T>
void require_labels(const std::vector<Sample<T>>& samples, std::string_view what) {
  for (const auto& s : samples) {
    if (s.label != 0 && s.label != 1) {
      throw ContractError(std::string(what) + ": segment " + std::to_string(s.id) + " has no label for the target");
    }
  }
}

EpochRecord make_record(Phase phase, const RunTag& tag, const TrainConfig& cfg, std::size_t epoch) {
  EpochRecord r;
  r.phase = std::string(phase_name(phase));
  r.modality = tag.modality;
  r.target = cfg.target ? std::string(target_name(*cfg.target)) : "";
  r.fold = tag.fold;
  r.epoch = epoch;
  return r;
}

template <typename T>
std::vector<std::size_t> ids_of(const std::vector<T>& samples) {
  std::vector<std::size_t> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  return ids;
}

/// Higher validation accuracy wins; ties go to the lower validation loss.
bool improves(const TrainResult& best, double best_loss, double accuracy, double loss) {
  if (!best.best_val_accuracy) return true;
  return accuracy > *best.best_val_accuracy || (accuracy == *best.best_val_accuracy && loss < best_loss);
}

}  // namespace

template <typename T>
TrainResult pretrain_mvp(SingleModalityModel<T>& model, const std::vector<Sample<T>>& corpus, const TrainConfig& cfg,
                         const RunTag& tag, const LeakageGuard* guard) {
  if (cfg.phase != Phase::kPretrain) throw ContractError("pretrain_mvp: config phase must be pretrain");
  if (corpus.empty()) throw ContractError("pretrain_mvp: empty corpus");
  model.set_mode(ModelMode::kPretrain);
  model.set_transformer_dropout(cfg.dropout);
  model.set_requires_grad(true);
  Adam<T> optimizer(cfg.adam, model.trainable_parameters());
  optimizer.set_clip_norm(cfg.clip_norm);

  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Rng mask_rng(derive_seed(cfg.seed, "mask"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  const ForwardContext ctx{true, &dropout_rng};
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  const auto ids = ids_of(corpus);

  TrainResult result;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = Clock::now();
    const double lr = lr_at(cfg.schedule, epoch);
    const double loss = run_epoch(
        optimizer, order, shuffle_rng, cfg.batch_size, lr, ids, guard, "pretraining",
        [&](std::span<const std::size_t> batch) {
          double sum = 0.0;
          const T inv = T(1) / static_cast<T>(batch.size());
          for (std::size_t i : batch) {
            const auto& s = corpus[i];
            const MaskPlan plan = sample_mask(s.signal.dim(1), cfg.mask_span, cfg.mask_ratio, mask_rng);
            const Tensor<T> pred = model.forward_pretrain(masked_input(s.signal, plan), ctx);
            const Tensor<T> l = mse_masked(pred, transpose(s.signal), plan.mask);
            sum += static_cast<double>(l.item());
            backward(scale(l, inv));
          }
          check_finite(sum, "pretrain", epoch);
          return sum;
        });
    EpochRecord r = make_record(Phase::kPretrain, tag, cfg, epoch);
    r.train_loss = loss;
    r.lr = lr;
    r.wall_ms = elapsed_ms(start);
    result.epochs.push_back(r);
  }
  result.best_epoch = cfg.epochs;
  return result;
}

template <typename T>
std::vector<int> predict(const SingleModalityModel<T>& model, const std::vector<Sample<T>>& samples) {
  NoGradGuard no_grad;
  const ForwardContext eval{};
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(model.forward_classify(s.signal, eval).logit.item() > T(0) ? 1 : 0);
  return out;
}

template <typename T>
std::vector<int> predict(const FusedModel<T>& model, const std::vector<PairSample<T>>& samples) {
  NoGradGuard no_grad;
  const ForwardContext eval{};
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(model.forward(s.ecg, s.eeg, eval).item() > T(0) ? 1 : 0);
  return out;
}

template <typename T>
TrainResult finetune_emotion(SingleModalityModel<T>& model, const std::vector<Sample<T>>& train,
                             const std::vector<Sample<T>>& validation, const TrainConfig& cfg, const RunTag& tag,
                             const LeakageGuard* guard) {
  if (cfg.phase != Phase::kFinetune) throw ContractError("finetune_emotion: config phase must be finetune");
  if (!cfg.target) throw ContractError("finetune_emotion: config has no target");
  if (train.empty()) throw ContractError("finetune_emotion: no training segments");
  require_labels(train, "finetune_emotion");
  require_labels(validation, "finetune_emotion");
  model.set_mode(ModelMode::kFinetune);
  model.set_target(cfg.target);
  model.set_emotion_dropout(cfg.dropout);
  model.set_requires_grad(true);
  Adam<T> optimizer(cfg.adam, model.trainable_parameters());
  optimizer.set_clip_norm(cfg.clip_norm);

  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  const ForwardContext ctx{true, &dropout_rng};
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto ids = ids_of(train);
  if (guard) guard->check(ids_of(validation), "validation");

  TrainResult result;
  std::vector<std::vector<T>> best;
  double best_val_loss = 0.0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = Clock::now();
    const double lr = lr_at(cfg.schedule, epoch);
    const double loss = run_epoch(optimizer, order, shuffle_rng, cfg.batch_size, lr, ids, guard, "fine-tuning",
                                  [&](std::span<const std::size_t> batch) {
                                    double sum = 0.0;
                                    const T inv = T(1) / static_cast<T>(batch.size());
                                    for (std::size_t i : batch) {
                                      const auto out = model.forward_classify(train[i].signal, ctx);
                                      const auto l = bce_with_logits(out.logit, label_tensor<T>(train[i].label));
                                      sum += static_cast<double>(l.item());
                                      backward(scale(l, inv));
                                    }
                                    check_finite(sum, "finetune", epoch);
                                    return sum;
                                  });
    EpochRecord r = make_record(Phase::kFinetune, tag, cfg, epoch);
    r.train_loss = loss;
    r.lr = lr;
    if (!validation.empty()) {
      NoGradGuard no_grad;
      const ForwardContext eval{};
      double vloss = 0.0;
      std::size_t correct = 0;
      for (const auto& s : validation) {
        const auto logit = model.forward_classify(s.signal, eval).logit;
        vloss += static_cast<double>(bce_with_logits(logit, label_tensor<T>(s.label)).item());
        correct += (logit.item() > T(0) ? 1 : 0) == s.label;
      }
      r.val_loss = vloss / static_cast<double>(validation.size());
      r.val_accuracy = static_cast<double>(correct) / static_cast<double>(validation.size());
      if (improves(result, best_val_loss, *r.val_accuracy, *r.val_loss)) {
        best_val_loss = *r.val_loss;
        result.best_val_accuracy = r.val_accuracy;
        result.best_epoch = epoch;
        best = model.snapshot();
      }
    }
    r.wall_ms = elapsed_ms(start);
    result.epochs.push_back(r);
  }
  if (!best.empty()) model.restore(best);
  else result.best_epoch = cfg.epochs;
  return result;
}

template <typename T>
TrainResult train_fused(FusedModel<T>& model, const std::vector<PairSample<T>>& train,
                        const std::vector<PairSample<T>>& validation, const TrainConfig& cfg, const RunTag& tag,
                        const LeakageGuard* guard) {
  if (cfg.phase != Phase::kFuse) throw ContractError("train_fused: config phase must be fuse");
  const auto te = model.ecg().target(), tg = model.eeg().target();
  if (!te || !tg || *te != *tg) {
    throw ContractError("train_fused: ECG and EEG recognizers were fine-tuned for different targets");
  }
  if (cfg.target && *cfg.target != *te) throw ContractError("train_fused: config target differs from the checkpoints");
  if (train.empty()) throw ContractError("train_fused: no training pairs");
  for (const auto* set : {&train, &validation}) {
    for (const auto& s : *set) {
      if (s.label != 0 && s.label != 1) {
        throw ContractError("train_fused: segment " + std::to_string(s.id) + " has no label for the target");
      }
    }
  }
  model.set_head_dropout(cfg.dropout);
  const std::uint64_t frozen = parameter_hash(model.backbone_parameters());
  Adam<T> optimizer(cfg.adam, model.head_parameters());
  optimizer.set_clip_norm(cfg.clip_norm);

  // Backbones are frozen and run in eval mode, so their features are fixed.
  std::vector<Tensor<T>> train_features, val_features;
  for (const auto& s : train) train_features.push_back(model.features(s.ecg, s.eeg));
  for (const auto& s : validation) val_features.push_back(model.features(s.ecg, s.eeg));

  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  const ForwardContext ctx{true, &dropout_rng};
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto ids = ids_of(train);
  if (guard) guard->check(ids_of(validation), "validation");

  TrainResult result;
  std::vector<std::vector<T>> best;
  double best_val_loss = 0.0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = Clock::now();
    const double lr = lr_at(cfg.schedule, epoch);
    const double loss = run_epoch(optimizer, order, shuffle_rng, cfg.batch_size, lr, ids, guard, "fusion",
                                  [&](std::span<const std::size_t> batch) {
                                    double sum = 0.0;
                                    const T inv = T(1) / static_cast<T>(batch.size());
                                    for (std::size_t i : batch) {
                                      const auto logit = model.head_forward(train_features[i], ctx);
                                      const auto l = bce_with_logits(logit, label_tensor<T>(train[i].label));
                                      sum += static_cast<double>(l.item());
                                      backward(scale(l, inv));
                                    }
                                    check_finite(sum, "fuse", epoch);
                                    return sum;
                                  });
    EpochRecord r = make_record(Phase::kFuse, tag, cfg, epoch);
    r.train_loss = loss;
    r.lr = lr;
    if (!validation.empty()) {
      NoGradGuard no_grad;
      const ForwardContext eval{};
      double vloss = 0.0;
      std::size_t correct = 0;
      for (std::size_t i = 0; i < validation.size(); ++i) {
        const auto logit = model.head_forward(val_features[i], eval);
        vloss += static_cast<double>(bce_with_logits(logit, label_tensor<T>(validation[i].label)).item());
        correct += (logit.item() > T(0) ? 1 : 0) == validation[i].label;
      }
      r.val_loss = vloss / static_cast<double>(validation.size());
      r.val_accuracy = static_cast<double>(correct) / static_cast<double>(validation.size());
      if (improves(result, best_val_loss, *r.val_accuracy, *r.val_loss)) {
        best_val_loss = *r.val_loss;
        result.best_val_accuracy = r.val_accuracy;
        result.best_epoch = epoch;
        best = model.snapshot_head();
      }
    }
    r.wall_ms = elapsed_ms(start);
    result.epochs.push_back(r);
  }
  if (!best.empty()) model.restore_head(best);
  else result.best_epoch = cfg.epochs;
  if (parameter_hash(model.backbone_parameters()) != frozen) {
    throw ContractError("train_fused: backbone parameters changed during fusion training");
  }
  return result;
}

template <typename T>
double mvp_loss(const SingleModalityModel<T>& model, const std::vector<Sample<T>>& samples, const TrainConfig& cfg,
                std::uint64_t seed) {
  if (samples.empty()) throw ContractError("mvp_loss: no segments");
  NoGradGuard no_grad;
  Rng rng(seed);
  const ForwardContext eval{};
  double total = 0.0;
  for (const auto& s : samples) {
    const MaskPlan plan = sample_mask(s.signal.dim(1), cfg.mask_span, cfg.mask_ratio, rng);
    const auto pred = model.forward_pretrain(masked_input(s.signal, plan), eval);
    total += static_cast<double>(mse_masked(pred, transpose(s.signal), plan.mask).item());
  }
  return total / static_cast<double>(samples.size());
}

template <typename T>
double mvp_copy_baseline(const std::vector<Sample<T>>& samples, const TrainConfig& cfg, std::uint64_t seed) {
  if (samples.empty()) throw ContractError("mvp_copy_baseline: no segments");
  Rng rng(seed);
  double total = 0.0;
  for (const auto& s : samples) {
    const std::size_t channels = s.signal.dim(0), length = s.signal.dim(1);
    const MaskPlan plan = sample_mask(length, cfg.mask_span, cfg.mask_ratio, rng);
    double sq = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t t = 0; t < length; ++t) {
        if (plan.mask[t]) {
          const double v = static_cast<double>(s.signal.data()[c * length + t]);
          sq += v * v;
        }
      }
    }
    total += sq / static_cast<double>(plan.masked_count() * channels);
  }
  return total / static_cast<double>(samples.size());
}

#define PHYSIOFUSE_INSTANTIATE_TRAINING(T)                                                                     \
  template TrainResult pretrain_mvp(SingleModalityModel<T>&, const std::vector<Sample<T>>&, const TrainConfig&, \
                                    const RunTag&, const LeakageGuard*);                                       \
  template TrainResult finetune_emotion(SingleModalityModel<T>&, const std::vector<Sample<T>>&,                \
                                        const std::vector<Sample<T>>&, const TrainConfig&, const RunTag&,      \
                                        const LeakageGuard*);                                                  \
  template TrainResult train_fused(FusedModel<T>&, const std::vector<PairSample<T>>&,                          \
                                   const std::vector<PairSample<T>>&, const TrainConfig&, const RunTag&,       \
                                   const LeakageGuard*);                                                       \
  template std::vector<int> predict(const SingleModalityModel<T>&, const std::vector<Sample<T>>&);             \
  template std::vector<int> predict(const FusedModel<T>&, const std::vector<PairSample<T>>&);                  \
  template double mvp_loss(const SingleModalityModel<T>&, const std::vector<Sample<T>>&, const TrainConfig&,   \
                           std::uint64_t);                                                                     \
  template double mvp_copy_baseline(const std::vector<Sample<T>>&, const TrainConfig&, std::uint64_t);

PHYSIOFUSE_INSTANTIATE_TRAINING(float)
PHYSIOFUSE_INSTANTIATE_TRAINING(double)

#undef PHYSIOFUSE_INSTANTIATE_TRAINING

}  // namespace physiofuse
