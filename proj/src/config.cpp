#include "physiofuse/config.hpp"

#include <fstream>

namespace physiofuse {

namespace fs = std::filesystem;

namespace {

void require_keys(const Json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError((where.empty() ? "config" : where) + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) == known.end()) {
      throw ConfigError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
    }
  }
}

template <typename V>
void read_field(const Json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const Json::exception& e) {
    throw ConfigError("config key '" + where + "." + key + "': " + e.what());
  }
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

}  // namespace

Json to_json(const RunConfig& c) {
  Json j;
  j["dataset"] = {{"manifest", c.manifest.string()}};
  j["preprocess"] = {{"ecg_filter", c.preprocess.ecg_filter},
                     {"eeg_filter", c.preprocess.eeg_filter},
                     {"target_rate", c.preprocess.target_rate},
                     {"segment_seconds", c.preprocess.segment_seconds}};
  j["model"] = {{"ecg", to_json(c.ecg)}, {"eeg", to_json(c.eeg)}, {"fusion", to_json(c.fusion)}};
  j["pretrain"] = to_json(c.pretrain);
  j["finetune"] = to_json(c.finetune);
  j["fuse"] = to_json(c.fuse);
  Json targets = Json::array();
  for (auto t : c.eval.targets) targets.push_back(std::string(target_name(t)));
  j["eval"] = {{"folds", c.eval.folds},
               {"seed", c.eval.seed},
               {"pretrain", c.eval.pretrain},
               {"label_fraction", c.eval.label_fraction},
               {"folds_to_run", c.eval.folds_to_run},
               {"targets", targets}};
  j["output"] = {{"dir", c.output_dir.string()}};
  j["precision"] = c.precision;
  return j;
}

RunConfig run_config_from_json(const Json& j, const fs::path& base_dir) {
  require_keys(j, {"dataset", "preprocess", "model", "pretrain", "finetune", "fuse", "eval", "output", "precision"}, "");
  RunConfig c;
  if (j.contains("dataset")) {
    require_keys(j["dataset"], {"manifest"}, "dataset");
    std::string m;
    read_field(j["dataset"], "manifest", m, "dataset");
    c.manifest = resolve(m, base_dir);
  }
  if (j.contains("preprocess")) {
    const auto& p = j["preprocess"];
    require_keys(p, {"ecg_filter", "eeg_filter", "target_rate", "segment_seconds"}, "preprocess");
    read_field(p, "ecg_filter", c.preprocess.ecg_filter, "preprocess");
    read_field(p, "eeg_filter", c.preprocess.eeg_filter, "preprocess");
    read_field(p, "target_rate", c.preprocess.target_rate, "preprocess");
    read_field(p, "segment_seconds", c.preprocess.segment_seconds, "preprocess");
    for (const auto* name : {&c.preprocess.ecg_filter, &c.preprocess.eeg_filter}) {
      try {
        filter_preset(*name);
      } catch (const ConfigError& e) {
        throw ConfigError("config key 'preprocess': " + std::string(e.what()));
      }
    }
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    require_keys(m, {"ecg", "eeg", "fusion"}, "model");
    if (m.contains("ecg")) c.ecg = model_config_from_json(m["ecg"], c.ecg);
    if (m.contains("eeg")) c.eeg = model_config_from_json(m["eeg"], c.eeg);
    if (m.contains("fusion")) c.fusion = fusion_config_from_json(m["fusion"], c.fusion);
    if (c.ecg.modality != Modality::kEcg) throw ConfigError("config key 'model.ecg.modality' must be ecg");
    if (c.eeg.modality != Modality::kEeg) throw ConfigError("config key 'model.eeg.modality' must be eeg");
  }
  if (j.contains("pretrain")) c.pretrain = train_config_from_json(j["pretrain"], c.pretrain, "pretrain");
  if (j.contains("finetune")) c.finetune = train_config_from_json(j["finetune"], c.finetune, "finetune");
  if (j.contains("fuse")) c.fuse = train_config_from_json(j["fuse"], c.fuse, "fuse");
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    require_keys(e, {"folds", "seed", "pretrain", "label_fraction", "folds_to_run", "targets"}, "eval");
    read_field(e, "folds", c.eval.folds, "eval");
    read_field(e, "seed", c.eval.seed, "eval");
    read_field(e, "pretrain", c.eval.pretrain, "eval");
    read_field(e, "label_fraction", c.eval.label_fraction, "eval");
    read_field(e, "folds_to_run", c.eval.folds_to_run, "eval");
    if (e.contains("targets")) {
      c.eval.targets.clear();
      for (const auto& t : e["targets"]) c.eval.targets.push_back(parse_target(t.get<std::string>()));
    }
    if (c.eval.folds < 2) throw ConfigError("config key 'eval.folds' must be at least 2");
    if (!(c.eval.label_fraction > 0.0 && c.eval.label_fraction <= 1.0)) {
      throw ConfigError("config key 'eval.label_fraction' must lie in (0, 1]");
    }
    for (auto f : c.eval.folds_to_run) {
      if (f >= c.eval.folds) throw ConfigError("config key 'eval.folds_to_run' lists fold " + std::to_string(f));
    }
  }
  if (j.contains("output")) {
    require_keys(j["output"], {"dir"}, "output");
    std::string d;
    read_field(j["output"], "dir", d, "output");
    if (!d.empty()) c.output_dir = resolve(d, base_dir);
  }
  read_field(j, "precision", c.precision, "");
  if (c.precision != 32 && c.precision != 64) throw ConfigError("config key 'precision' must be 32 or 64");
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

void echo_run_config(const RunConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "config.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "config.json").string());
  out << to_json(c).dump(2) << '\n';
}

Json to_json(const SyntheticSpec& s) {
  return Json{{"subjects", s.subjects},
              {"trials_per_subject", s.trials_per_subject},
              {"trial_seconds", s.trial_seconds},
              {"sample_rate", s.sample_rate},
              {"ecg_base_bpm", s.ecg_base_bpm},
              {"ecg_bpm_delta", s.ecg_bpm_delta},
              {"ecg_amplitude_delta", s.ecg_amplitude_delta},
              {"ecg_noise", s.ecg_noise},
              {"eeg_alpha_hz", s.eeg_alpha_hz},
              {"eeg_beta_hz", s.eeg_beta_hz},
              {"eeg_band_delta", s.eeg_band_delta},
              {"eeg_asymmetry_delta", s.eeg_asymmetry_delta},
              {"eeg_noise", s.eeg_noise},
              {"subject_variability", s.subject_variability},
              {"ecg_only_fraction", s.ecg_only_fraction},
              {"eeg_only_fraction", s.eeg_only_fraction}};
}

SyntheticSpec synthetic_spec_from_json(const Json& j) {
  SyntheticSpec s;
  const std::string w = "synthetic";
  require_keys(j,
               {"subjects", "trials_per_subject", "trial_seconds", "sample_rate", "ecg_base_bpm", "ecg_bpm_delta",
                "ecg_amplitude_delta", "ecg_noise", "eeg_alpha_hz", "eeg_beta_hz", "eeg_band_delta",
                "eeg_asymmetry_delta", "eeg_noise", "subject_variability", "ecg_only_fraction", "eeg_only_fraction"},
               w);
  read_field(j, "subjects", s.subjects, w);
  read_field(j, "trials_per_subject", s.trials_per_subject, w);
  read_field(j, "trial_seconds", s.trial_seconds, w);
  read_field(j, "sample_rate", s.sample_rate, w);
  read_field(j, "ecg_base_bpm", s.ecg_base_bpm, w);
  read_field(j, "ecg_bpm_delta", s.ecg_bpm_delta, w);
  read_field(j, "ecg_amplitude_delta", s.ecg_amplitude_delta, w);
  read_field(j, "ecg_noise", s.ecg_noise, w);
  read_field(j, "eeg_alpha_hz", s.eeg_alpha_hz, w);
  read_field(j, "eeg_beta_hz", s.eeg_beta_hz, w);
  read_field(j, "eeg_band_delta", s.eeg_band_delta, w);
  read_field(j, "eeg_asymmetry_delta", s.eeg_asymmetry_delta, w);
  read_field(j, "eeg_noise", s.eeg_noise, w);
  read_field(j, "subject_variability", s.subject_variability, w);
  read_field(j, "ecg_only_fraction", s.ecg_only_fraction, w);
  read_field(j, "eeg_only_fraction", s.eeg_only_fraction, w);
  if (s.ecg_only_fraction < 0 || s.eeg_only_fraction < 0 || s.ecg_only_fraction + s.eeg_only_fraction > 1.0 + 1e-12) {
    throw ConfigError("config key 'synthetic': ecg_only_fraction + eeg_only_fraction must lie in [0, 1]");
  }
  return s;
}

}  // namespace physiofuse
