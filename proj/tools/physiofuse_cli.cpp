// physiofuse command-line driver.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>

#include "CLI11.hpp"
#include "physiofuse/config.hpp"
#include "physiofuse/gradcheck.hpp"
#include "physiofuse/protocol.hpp"

namespace fs = std::filesystem;
using namespace physiofuse;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::optional<int> precision;
  std::string out;
  std::size_t fold = 0;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_fold) {
  cmd->add_option("--config", f.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Root seed; overrides eval.seed");
  cmd->add_option("--precision", f.precision, "Floating-point width")->check(CLI::IsMember({32, 64}));
  cmd->add_option("--out", f.out, "Output directory; overrides output.dir");
  cmd->add_option("--jobs", f.jobs, "Folds run in parallel")->check(CLI::PositiveNumber);
  if (with_fold) cmd->add_option("--fold", f.fold, "Cross-validation fold whose train/validation split is used");
}

RunConfig effective_config(const CommonFlags& f) {
  RunConfig c = load_run_config(f.config);
  if (f.seed) c.eval.seed = *f.seed;
  if (f.precision) c.precision = *f.precision;
  if (!f.out.empty()) c.output_dir = f.out;
  if (c.manifest.empty()) throw ConfigError("config key 'dataset.manifest' is required");
  return c;
}

void write_run_files(const RunConfig& c) {
  echo_run_config(c, c.output_dir);
  std::ofstream(c.output_dir / "seed.txt") << c.eval.seed << '\n';
}

void log_line(const std::string& msg) { std::cerr << "[physiofuse] " << msg << std::endl; }

/// Normalized segments and split for one fold, as the cross-validation runner builds them.
struct FoldView {
  PreparedDataset data;
  Fold fold;
  std::vector<SegmentRecord> segments;
  std::vector<std::size_t> reference;
};

FoldView prepare_fold(const RunConfig& c, std::size_t k) {
  if (k >= c.eval.folds) throw ConfigError("--fold " + std::to_string(k) + " exceeds eval.folds");
  FoldView v;
  v.data = prepare_dataset(load_manifest(c.manifest), c.preprocess);
  const FoldPlan plan = make_folds(v.data.segments.size(), c.eval.folds, c.eval.seed);
  v.fold = plan.folds[k];
  v.reference = v.fold.train;
  v.reference.insert(v.reference.end(), v.fold.validation.begin(), v.fold.validation.end());
  std::sort(v.reference.begin(), v.reference.end());
  v.segments = normalize_segments(v.data, v.reference);
  return v;
}

fs::path fold_dir(const RunConfig& c, std::size_t k) { return c.output_dir / "checkpoints" / ("fold" + std::to_string(k)); }

template <typename T>
double test_accuracy(const std::vector<int>& preds, const std::vector<T>& samples) {
  std::vector<int> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  return accuracy(confusion(labels, preds));
}

template <typename T>
int run_pretrain(const RunConfig& c, Modality m, std::size_t k) {
  const FoldView v = prepare_fold(c, k);
  SingleModalityModel<T> model(c.model(m), init_seed(c, k, m));
  TrainConfig cfg = c.pretrain;
  cfg.seed = phase_seed(c, Phase::kPretrain, k, m, std::nullopt);
  const LeakageGuard guard(static_cast<int>(k), v.fold.test);
  const auto corpus = make_samples<T>(v.segments, v.reference, m, std::nullopt);
  log_line("pretraining " + std::string(modality_name(m)) + " on " + std::to_string(corpus.size()) + " segments");
  const auto result = pretrain_mvp(model, corpus, cfg, {static_cast<int>(k), std::string(modality_name(m))}, &guard);
  const fs::path ckpt = fold_dir(c, k) / (std::string(modality_name(m)) + "_pretrain.ckpt");
  save_checkpoint(model, ckpt);
  RunLog log;
  for (const auto& e : result.epochs) log.append(e);
  log.set_checkpoint(ckpt);
  log.write_jsonl(c.output_dir / "runlog.jsonl");
  std::cout << "final_loss " << result.epochs.back().train_loss << "\ncheckpoint " << ckpt.string() << '\n';
  return kOk;
}

template <typename T>
int run_finetune(const RunConfig& c, Modality m, Target t, std::size_t k, const std::string& init) {
  const FoldView v = prepare_fold(c, k);
  SingleModalityModel<T> model(c.model(m), init_seed(c, k, m));
  if (!init.empty()) model.copy_backbone_from(load_checkpoint<T>(init, c.model(m)));
  TrainConfig cfg = c.finetune;
  cfg.target = t;
  cfg.seed = phase_seed(c, Phase::kFinetune, k, m, t);
  const LeakageGuard guard(static_cast<int>(k), v.fold.test);
  const std::uint64_t label_seed = derive_seed(c.eval.seed, "labels", k, static_cast<std::uint64_t>(t));
  const auto train_ids = labeled_subset(v.segments, v.fold.train, t, c.eval.label_fraction, label_seed);
  const auto val_ids = labeled_subset(v.segments, v.fold.validation, t, c.eval.label_fraction, label_seed + 1);
  const auto test_ids = labeled_subset(v.segments, v.fold.test, t, 1.0, 0);
  const std::string mname(modality_name(m)), tname(target_name(t));
  log_line("fine-tuning " + mname + " for " + tname + (init.empty() ? " from scratch" : " from " + init));
  const auto result = finetune_emotion(model, make_samples<T>(v.segments, train_ids, m, t),
                                       make_samples<T>(v.segments, val_ids, m, t), cfg, {static_cast<int>(k), mname},
                                       &guard);
  const auto test = make_samples<T>(v.segments, test_ids, m, t);
  const fs::path ckpt = fold_dir(c, k) / (mname + "_" + tname + ".ckpt");
  save_checkpoint(model, ckpt);
  RunLog log;
  for (const auto& e : result.epochs) log.append(e);
  log.set_checkpoint(ckpt);
  log.write_jsonl(c.output_dir / "runlog.jsonl");
  std::cout << "best_epoch " << result.best_epoch << "\ntest_accuracy " << test_accuracy(predict(model, test), test)
            << "\ncheckpoint " << ckpt.string() << '\n';
  return kOk;
}

template <typename T>
int run_fuse(const RunConfig& c, Target t, std::size_t k, std::string ecg_path, std::string eeg_path) {
  const std::string tname(target_name(t));
  if (ecg_path.empty()) ecg_path = (fold_dir(c, k) / ("ecg_" + tname + ".ckpt")).string();
  if (eeg_path.empty()) eeg_path = (fold_dir(c, k) / ("eeg_" + tname + ".ckpt")).string();
  const FoldView v = prepare_fold(c, k);
  FusedModel<T> fused(load_checkpoint<T>(ecg_path, c.ecg), load_checkpoint<T>(eeg_path, c.eeg), c.fusion,
                      derive_seed(c.eval.seed, "fusion_init", k, static_cast<std::uint64_t>(t)));
  TrainConfig cfg = c.fuse;
  cfg.target = t;
  cfg.seed = phase_seed(c, Phase::kFuse, k, Modality::kEcg, t);
  const LeakageGuard guard(static_cast<int>(k), v.fold.test);
  const std::uint64_t label_seed = derive_seed(c.eval.seed, "labels", k, static_cast<std::uint64_t>(t));
  const auto train_ids = labeled_subset(v.segments, v.fold.train, t, c.eval.label_fraction, label_seed);
  const auto val_ids = labeled_subset(v.segments, v.fold.validation, t, c.eval.label_fraction, label_seed + 1);
  const auto test_ids = labeled_subset(v.segments, v.fold.test, t, 1.0, 0);
  log_line("training fusion head for " + tname);
  const auto result = train_fused(fused, make_pairs<T>(v.segments, train_ids, t), make_pairs<T>(v.segments, val_ids, t),
                                  cfg, {static_cast<int>(k), "fused"}, &guard);
  const auto test = make_pairs<T>(v.segments, test_ids, t);
  const fs::path ckpt = fold_dir(c, k) / ("fused_" + tname + ".ckpt");
  save_checkpoint(fused, ckpt);
  RunLog log;
  for (const auto& e : result.epochs) log.append(e);
  log.set_checkpoint(ckpt);
  log.write_jsonl(c.output_dir / "runlog.jsonl");
  std::cout << "best_epoch " << result.best_epoch << "\ntest_accuracy " << test_accuracy(predict(fused, test), test)
            << "\ncheckpoint " << ckpt.string() << '\n';
  return kOk;
}

void print_summary(const RunReport& report) {
  std::printf("%-6s %-8s %-9s %8s %8s %5s\n", "model", "target", "metric", "mean", "ci95", "k");
  for (const auto& s : report.summarize()) {
    std::printf("%-6s %-8s %-9s %8.4f %8.4f %5zu\n", s.model.c_str(), s.target.c_str(), s.metric.c_str(), s.mean,
                s.half_width, s.k);
  }
}

int run_evaluate(const RunConfig& c, std::size_t jobs) {
  write_run_files(c);
  const Manifest manifest = load_manifest(c.manifest);
  ProtocolOptions options;
  options.jobs = jobs;
  options.checkpoint_dir = c.output_dir / "checkpoints";
  std::mutex mutex;
  options.progress = [&](const std::string& msg) {
    std::lock_guard lock(mutex);
    log_line(msg);
  };
  const auto start = std::chrono::steady_clock::now();
  const ProtocolResult result = run_cross_validation(manifest, c, options);
  fs::remove(c.output_dir / "runlog.jsonl");
  result.log.write_jsonl(c.output_dir / "runlog.jsonl");
  emit_report(result.report, c.output_dir);
  print_summary(result.report);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log_line(std::to_string(result.report.rows.size()) + " report rows, " + std::to_string(result.leakage_checks) +
           " leakage checks, " + std::to_string(secs) + " s");
  return kOk;
}

int run_report(const fs::path& dir, const fs::path& out) {
  const fs::path target = out.empty() ? dir : out;
  bool any = false;
  if (fs::exists(dir / "report.csv")) {
    const RunReport report = read_report(dir);
    if (target != dir) emit_report(report, target);
    print_summary(report);
    any = true;
  }
  if (fs::exists(dir / "runlog.jsonl")) {
    const auto records = RunLog::read_jsonl(dir / "runlog.jsonl");
    fs::create_directories(target);
    std::ofstream csv(target / "runlog.csv", std::ios::binary);
    if (!csv) throw IoError("cannot write " + (target / "runlog.csv").string());
    csv << "phase,modality,target,fold,epoch,train_loss,val_loss,val_accuracy,lr\n";
    for (const auto& r : records) {
      csv << r.phase << ',' << r.modality << ',' << r.target << ',' << r.fold << ',' << r.epoch << ','
          << Json(r.train_loss).dump() << ',' << (r.val_loss ? Json(*r.val_loss).dump() : "") << ','
          << (r.val_accuracy ? Json(*r.val_accuracy).dump() : "") << ',' << Json(r.lr).dump() << '\n';
    }
    std::cout << "runlog rows " << records.size() << " -> " << (target / "runlog.csv").string() << '\n';
    any = true;
  }
  if (!any) throw LoadError("no report.csv or runlog.jsonl in " + dir.string());
  return kOk;
}

int run_gradcheck(const std::string& config_path) {
  ModelConfig ecg = tiny_model_config(Modality::kEcg), eeg = tiny_model_config(Modality::kEeg);
  std::size_t length = 16;
  if (!config_path.empty()) {
    // Only the architecture families are taken from the config; widths stay tiny.
    const RunConfig c = load_run_config(config_path);
    ecg.num_layers = c.ecg.num_layers;
    eeg.num_layers = c.eeg.num_layers;
  }
  const auto start = std::chrono::steady_clock::now();
  const GradcheckReport report = run_gradcheck_suite(ecg, eeg, length);
  for (const auto& e : report.entries) std::printf("%-28s %5zu coords  max_rel_err %.3e\n", e.name.c_str(), e.coordinates, e.max_rel_error);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("max relative error %.3e (threshold 1e-4), %.1f s\n", report.max_rel_error(), secs);
  return report.max_rel_error() < 1e-4 ? kOk : kNumeric;
}

int run_preprocess(const fs::path& manifest_path, const std::string& ecg_preset, const std::string& eeg_preset,
                   double target_rate, const fs::path& out) {
  const Manifest in = load_manifest(manifest_path);
  Manifest outm = in;
  outm.sample_rate = target_rate;
  outm.entries.clear();
  std::map<Modality, std::optional<IirFilter>> filters;
  for (Modality m : in.modalities) {
    const auto spec = filter_preset(m == Modality::kEcg ? ecg_preset : eeg_preset);
    if (spec) filters[m] = design_butterworth(*spec, in.sample_rate);
  }
  fs::create_directories(out / "signals");
  for (const auto& e : in.entries) {
    ManifestEntry ne = e;
    for (Modality m : in.modalities) {
      SignalRecord r = load_entry_signal(e, m);
      if (filters[m]) r = apply_filter(*filters[m], r);
      r = decimate(r, target_rate);
      const fs::path p = out / "signals" / (e.subject_id + "_" + e.trial_id + "_" + std::string(modality_name(m)) + ".f32");
      write_signal(p, r);
      ne.signals[m] = fs::absolute(p);
    }
    outm.entries.push_back(std::move(ne));
  }
  save_manifest(outm, out / "manifest.json");
  std::cout << "trials " << outm.entries.size() << "\nmanifest " << (out / "manifest.json").string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"physiofuse: emotion recognition from ECG and EEG with masked-value pre-training and late fusion"};
  app.require_subcommand(1);

  std::string spec_path, synth_out;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth-gen", "Generate a synthetic on-disk dataset");
  synth->add_option("--spec", spec_path, "Synthetic spec (JSON); defaults when omitted")->check(CLI::ExistingFile);
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--out", synth_out, "Output directory")->required();

  std::string pre_manifest, pre_out, ecg_preset = "amigos-ecg", eeg_preset = "amigos-eeg";
  double pre_rate = 128.0;
  auto* pre = app.add_subcommand("preprocess", "Filter and decimate every trial into a new dataset");
  pre->add_option("--manifest", pre_manifest, "Input manifest")->required()->check(CLI::ExistingFile);
  pre->add_option("--ecg-preset", ecg_preset, "ECG filter preset")->check(CLI::IsMember(filter_preset_names()));
  pre->add_option("--eeg-preset", eeg_preset, "EEG filter preset")->check(CLI::IsMember(filter_preset_names()));
  pre->add_option("--target-rate", pre_rate, "Output sample rate in Hz");
  pre->add_option("--out", pre_out, "Output directory")->required();

  CommonFlags pt_flags, ft_flags, fu_flags, ev_flags;
  std::string pt_modality, ft_modality, ft_target, ft_init, fu_target, fu_ecg, fu_eeg;
  const std::vector<std::string> modalities = {"ecg", "eeg"}, targets = {"arousal", "valence"};
  auto* pt = app.add_subcommand("pretrain", "Masked-value pre-training of one modality");
  add_common(pt, pt_flags, true);
  pt->add_option("--modality", pt_modality, "ecg or eeg")->required()->check(CLI::IsMember(modalities));

  auto* ft = app.add_subcommand("finetune", "Fine-tune one modality for one target");
  add_common(ft, ft_flags, true);
  ft->add_option("--modality", ft_modality, "ecg or eeg")->required()->check(CLI::IsMember(modalities));
  ft->add_option("--target", ft_target, "arousal or valence")->required()->check(CLI::IsMember(targets));
  ft->add_option("--init", ft_init, "Pre-trained checkpoint for the backbone")->check(CLI::ExistingFile);

  auto* fu = app.add_subcommand("fuse-train", "Train the fusion head on two frozen fine-tuned models");
  add_common(fu, fu_flags, true);
  fu->add_option("--target", fu_target, "arousal or valence")->required()->check(CLI::IsMember(targets));
  fu->add_option("--ecg", fu_ecg, "Fine-tuned ECG checkpoint")->check(CLI::ExistingFile);
  fu->add_option("--eeg", fu_eeg, "Fine-tuned EEG checkpoint")->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("evaluate", "Run the full cross-validation protocol");
  add_common(ev, ev_flags, false);

  std::string gc_config;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every op, layer and model forward");
  gc->add_option("--config", gc_config, "Run configuration (JSON)")->check(CLI::ExistingFile);

  std::string rp_dir, rp_out;
  auto* rp = app.add_subcommand("report", "Emit tables from a run directory");
  rp->add_option("--runlog-dir", rp_dir, "Directory holding report.csv and/or runlog.jsonl")->required();
  rp->add_option("--out", rp_out, "Output directory (defaults to the run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kUsage;
  }

  try {
    if (*synth) {
      SyntheticSpec spec;
      if (!spec_path.empty()) {
        std::ifstream in(spec_path);
        spec = synthetic_spec_from_json(Json::parse(in));
      }
      const Manifest m = generate_synthetic(spec, synth_seed, synth_out);
      std::cout << "trials " << m.entries.size() << "\nmanifest " << (fs::path(synth_out) / "manifest.json").string()
                << '\n';
      return kOk;
    }
    if (*pre) return run_preprocess(pre_manifest, ecg_preset, eeg_preset, pre_rate, pre_out);
    if (*pt) {
      const RunConfig c = effective_config(pt_flags);
      write_run_files(c);
      const Modality m = parse_modality(pt_modality);
      return c.precision == 64 ? run_pretrain<double>(c, m, pt_flags.fold) : run_pretrain<float>(c, m, pt_flags.fold);
    }
    if (*ft) {
      const RunConfig c = effective_config(ft_flags);
      write_run_files(c);
      const Modality m = parse_modality(ft_modality);
      const Target t = parse_target(ft_target);
      return c.precision == 64 ? run_finetune<double>(c, m, t, ft_flags.fold, ft_init)
                               : run_finetune<float>(c, m, t, ft_flags.fold, ft_init);
    }
    if (*fu) {
      const RunConfig c = effective_config(fu_flags);
      write_run_files(c);
      const Target t = parse_target(fu_target);
      return c.precision == 64 ? run_fuse<double>(c, t, fu_flags.fold, fu_ecg, fu_eeg)
                               : run_fuse<float>(c, t, fu_flags.fold, fu_ecg, fu_eeg);
    }
    if (*ev) return run_evaluate(effective_config(ev_flags), ev_flags.jobs);
    if (*gc) return run_gradcheck(gc_config);
    if (*rp) return run_report(rp_dir, rp_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const Json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
