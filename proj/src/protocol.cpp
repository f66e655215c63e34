#include "physiofuse/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

namespace physiofuse {

template <typename T>
std::vector<Sample<T>> make_samples(const std::vector<SegmentRecord>& segments, const std::vector<std::size_t>& ids,
                                    Modality modality, std::optional<Target> target) {
  std::vector<Sample<T>> out;
  out.reserve(ids.size());
  const std::size_t channels = modality_channels(modality);
  for (std::size_t id : ids) {
    const auto& seg = segments.at(id);
    const auto it = seg.signals.find(modality);
    if (it == seg.signals.end()) {
      throw ContractError("segment " + std::to_string(id) + " has no " + std::string(modality_name(modality)) +
                          " signal");
    }
    std::vector<T> values(it->second.begin(), it->second.end());
    const std::size_t length = values.size() / channels;
    Sample<T> s;
    s.id = id;
    s.signal = Tensor<T>::from({channels, length}, std::move(values));
    if (target) {
      const auto label = seg.label(*target);
      s.label = label ? *label : -1;
    }
    out.push_back(std::move(s));
  }
  return out;
}

template <typename T>
std::vector<PairSample<T>> make_pairs(const std::vector<SegmentRecord>& segments, const std::vector<std::size_t>& ids,
                                      Target target) {
  const auto ecg = make_samples<T>(segments, ids, Modality::kEcg, target);
  const auto eeg = make_samples<T>(segments, ids, Modality::kEeg, target);
  std::vector<PairSample<T>> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.push_back({ids[i], ecg[i].signal, eeg[i].signal, ecg[i].label});
  return out;
}

std::vector<std::size_t> labeled_subset(const std::vector<SegmentRecord>& segments, const std::vector<std::size_t>& ids,
                                        Target target, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> labeled;
  for (std::size_t id : ids) {
    if (segments.at(id).label(target)) labeled.push_back(id);
  }
  if (fraction >= 1.0 || labeled.empty()) return labeled;
  Rng rng(seed);
  rng.shuffle(labeled.begin(), labeled.end());
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(labeled.size()) - 1e-9)));
  labeled.resize(std::min(keep, labeled.size()));
  std::sort(labeled.begin(), labeled.end());
  return labeled;
}

std::uint64_t init_seed(const RunConfig& config, std::size_t fold, Modality m) {
  return derive_seed(config.eval.seed, "init", fold, static_cast<std::uint64_t>(m));
}

std::uint64_t phase_seed(const RunConfig& config, Phase phase, std::size_t fold, Modality m, std::optional<Target> t) {
  const TrainConfig& cfg = phase == Phase::kPretrain ? config.pretrain
                           : phase == Phase::kFinetune ? config.finetune
                                                       : config.fuse;
  return derive_seed(config.eval.seed ^ mix64(cfg.seed), phase_name(phase), fold, static_cast<std::uint64_t>(m),
                     t ? static_cast<std::uint64_t>(*t) + 1 : 0);
}

void rethrow_with_fold(std::exception_ptr error, std::size_t fold) {
  const std::string prefix = "fold " + std::to_string(fold) + ": ";
  try {
    std::rethrow_exception(error);
  } catch (const LeakageError& e) {
    throw LeakageError(prefix + e.what());
  } catch (const DegenerateSignalError& e) {
    throw DegenerateSignalError(prefix + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(prefix + e.what());
  } catch (const DomainError& e) {
    throw DomainError(prefix + e.what());
  } catch (const ContractError& e) {
    throw ContractError(prefix + e.what());
  } catch (const LoadError& e) {
    throw LoadError(prefix + e.what());
  } catch (const IoError& e) {
    throw IoError(prefix + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const NumericError& e) {
    throw NumericError(prefix + e.what());
  } catch (const std::exception& e) {
    throw Error(prefix + e.what());
  }
}

namespace {

struct FoldOutcome {
  std::vector<ReportRow> rows;
  std::vector<EpochRecord> log;
  std::size_t leakage_checks = 0;
};

template <typename T>
FoldOutcome run_fold(const PreparedDataset& data, const RunConfig& config, const Fold& fold, std::size_t k,
                     const ProtocolOptions& options) {
  FoldOutcome outcome;
  const int fold_tag = static_cast<int>(k);
  auto note = [&](const std::string& msg) {
    if (options.progress) options.progress("fold " + std::to_string(k) + ": " + msg);
  };
  std::vector<std::size_t> reference = fold.train;
  reference.insert(reference.end(), fold.validation.begin(), fold.validation.end());
  std::sort(reference.begin(), reference.end());
  const std::vector<SegmentRecord> segments = normalize_segments(data, reference);
  const LeakageGuard guard(fold_tag, fold.test);
  std::optional<std::filesystem::path> ckpt_dir;
  if (options.checkpoint_dir) ckpt_dir = *options.checkpoint_dir / ("fold" + std::to_string(k));

  std::vector<Modality> modalities;
  for (Modality m : {Modality::kEcg, Modality::kEeg}) {
    if (std::find(data.modalities.begin(), data.modalities.end(), m) != data.modalities.end()) modalities.push_back(m);
  }

  std::map<Modality, SingleModalityModel<T>> pretrained;
  if (config.eval.pretrain) {
    for (Modality m : modalities) {
      note("pretraining " + std::string(modality_name(m)));
      SingleModalityModel<T> model(config.model(m), init_seed(config, k, m));
      TrainConfig cfg = config.pretrain;
      cfg.seed = phase_seed(config, Phase::kPretrain, k, m, std::nullopt);
      const auto corpus = make_samples<T>(segments, reference, m, std::nullopt);
      const auto result = pretrain_mvp(model, corpus, cfg, {fold_tag, std::string(modality_name(m))}, &guard);
      outcome.log.insert(outcome.log.end(), result.epochs.begin(), result.epochs.end());
      if (ckpt_dir) save_checkpoint(model, *ckpt_dir / (std::string(modality_name(m)) + "_pretrain.ckpt"));
      pretrained.emplace(m, std::move(model));
    }
  }

  for (Target target : config.eval.targets) {
    const std::string tname(target_name(target));
    const std::uint64_t label_seed = derive_seed(config.eval.seed, "labels", k, static_cast<std::uint64_t>(target));
    const auto train_ids = labeled_subset(segments, fold.train, target, config.eval.label_fraction, label_seed);
    const auto val_ids =
        labeled_subset(segments, fold.validation, target, config.eval.label_fraction, label_seed + 1);
    std::vector<std::size_t> test_ids;
    for (std::size_t id : fold.test) {
      if (segments[id].label(target)) test_ids.push_back(id);
    }
    if (train_ids.empty() || test_ids.empty()) {
      throw ContractError("no labeled " + tname + " segments in the training or test split");
    }

    std::map<Modality, SingleModalityModel<T>> finetuned;
    for (Modality m : modalities) {
      const std::string mname(modality_name(m));
      note("fine-tuning " + mname + " for " + tname);
      SingleModalityModel<T> model(config.model(m), init_seed(config, k, m));
      if (config.eval.pretrain) model.copy_backbone_from(pretrained.at(m));
      TrainConfig cfg = config.finetune;
      cfg.target = target;
      cfg.seed = phase_seed(config, Phase::kFinetune, k, m, target);
      const auto train = make_samples<T>(segments, train_ids, m, target);
      const auto val = make_samples<T>(segments, val_ids, m, target);
      const auto result = finetune_emotion(model, train, val, cfg, {fold_tag, mname}, &guard);
      outcome.log.insert(outcome.log.end(), result.epochs.begin(), result.epochs.end());
      const auto test = make_samples<T>(segments, test_ids, m, target);
      std::vector<int> labels;
      for (const auto& s : test) labels.push_back(s.label);
      const ConfusionCounts c = confusion(labels, predict(model, test));
      const double bacc = balanced_accuracy(c);
      outcome.rows.push_back({k, mname, tname, "accuracy", accuracy(c), bacc, c});
      outcome.rows.push_back({k, mname, tname, "f1", macro_f1(c), bacc, c});
      if (ckpt_dir) save_checkpoint(model, *ckpt_dir / (mname + "_" + tname + ".ckpt"));
      finetuned.emplace(m, std::move(model));
    }

    if (finetuned.size() == 2) {
      note("fusion for " + tname);
      FusedModel<T> fused(finetuned.at(Modality::kEcg).clone(), finetuned.at(Modality::kEeg).clone(), config.fusion,
                          derive_seed(config.eval.seed, "fusion_init", k, static_cast<std::uint64_t>(target)));
      TrainConfig cfg = config.fuse;
      cfg.target = target;
      cfg.seed = phase_seed(config, Phase::kFuse, k, Modality::kEcg, target);
      const auto train = make_pairs<T>(segments, train_ids, target);
      const auto val = make_pairs<T>(segments, val_ids, target);
      const auto result = train_fused(fused, train, val, cfg, {fold_tag, "fused"}, &guard);
      outcome.log.insert(outcome.log.end(), result.epochs.begin(), result.epochs.end());
      const auto test = make_pairs<T>(segments, test_ids, target);
      std::vector<int> labels;
      for (const auto& s : test) labels.push_back(s.label);
      const ConfusionCounts c = confusion(labels, predict(fused, test));
      const double bacc = balanced_accuracy(c);
      outcome.rows.push_back({k, "fused", tname, "accuracy", accuracy(c), bacc, c});
      outcome.rows.push_back({k, "fused", tname, "f1", macro_f1(c), bacc, c});
      if (ckpt_dir) save_checkpoint(fused, *ckpt_dir / ("fused_" + tname + ".ckpt"));
    }
  }
  outcome.leakage_checks = guard.checks();
  return outcome;
}

}  // namespace

template <typename T>
ProtocolResult run_cross_validation(const PreparedDataset& data, const RunConfig& config,
                                    const ProtocolOptions& options) {
  if (data.segments.size() < config.eval.folds) {
    throw ContractError("run_cross_validation: " + std::to_string(data.segments.size()) + " segments cannot fill " +
                        std::to_string(config.eval.folds) + " folds");
  }
  const FoldPlan plan = make_folds(data.segments.size(), config.eval.folds, config.eval.seed);
  std::vector<std::size_t> to_run = config.eval.folds_to_run;
  if (to_run.empty()) {
    for (std::size_t k = 0; k < plan.k; ++k) to_run.push_back(k);
  }
  std::sort(to_run.begin(), to_run.end());
  to_run.erase(std::unique(to_run.begin(), to_run.end()), to_run.end());

  std::vector<FoldOutcome> outcomes(to_run.size());
  std::vector<std::exception_ptr> errors(to_run.size());
  std::size_t next = 0;
  std::mutex mutex;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mutex);
        if (next >= to_run.size()) return;
        i = next++;
      }
      try {
        outcomes[i] = run_fold<T>(data, config, plan.folds[to_run[i]], to_run[i], options);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(options.jobs, 1, to_run.size());
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  for (std::size_t i = 0; i < to_run.size(); ++i) {
    if (errors[i]) rethrow_with_fold(errors[i], to_run[i]);
  }

  ProtocolResult result;
  result.report.k = plan.k;
  result.report.test_sets.assign(plan.k, {});
  for (std::size_t i = 0; i < to_run.size(); ++i) {
    result.report.test_sets[to_run[i]] = plan.folds[to_run[i]].test;
    for (const auto& r : outcomes[i].rows) result.report.rows.push_back(r);
    for (const auto& e : outcomes[i].log) result.log.append(e);
    result.leakage_checks += outcomes[i].leakage_checks;
  }
  result.report.sort();
  return result;
}

ProtocolResult run_cross_validation(const Manifest& manifest, const RunConfig& config,
                                    const ProtocolOptions& options) {
  const PreparedDataset data = prepare_dataset(manifest, config.preprocess);
  if (config.precision == 64) return run_cross_validation<double>(data, config, options);
  return run_cross_validation<float>(data, config, options);
}

#define PHYSIOFUSE_INSTANTIATE_PROTOCOL(T)                                                                          \
  template std::vector<Sample<T>> make_samples(const std::vector<SegmentRecord>&, const std::vector<std::size_t>&, \
                                               Modality, std::optional<Target>);                                   \
  template std::vector<PairSample<T>> make_pairs(const std::vector<SegmentRecord>&,                                 \
                                                 const std::vector<std::size_t>&, Target);                         \
  template ProtocolResult run_cross_validation<T>(const PreparedDataset&, const RunConfig&, const ProtocolOptions&);

PHYSIOFUSE_INSTANTIATE_PROTOCOL(float)
PHYSIOFUSE_INSTANTIATE_PROTOCOL(double)

#undef PHYSIOFUSE_INSTANTIATE_PROTOCOL

}  // namespace physiofuse
