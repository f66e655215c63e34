#include "physiofuse/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "json.hpp"

namespace physiofuse {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kManifestFormat = "physiofuse-manifest";
constexpr int kManifestVersion = 1;

struct SignalHeader {
  std::size_t channels = 0;
  std::size_t samples = 0;
  double sample_rate = 0.0;
};

fs::path header_path(const fs::path& data) { return fs::path(data.string() + ".hdr"); }

SignalHeader read_header(const fs::path& data) {
  const fs::path hdr = header_path(data);
  std::ifstream in(hdr);
  if (!in) throw LoadError("signal header not found: " + hdr.string());
  SignalHeader h;
  bool seen_c = false, seen_s = false, seen_r = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "channels") {
      seen_c = static_cast<bool>(ls >> h.channels);
    } else if (key == "samples") {
      seen_s = static_cast<bool>(ls >> h.samples);
    } else if (key == "sample_rate") {
      seen_r = static_cast<bool>(ls >> h.sample_rate);
    } else {
      throw LoadError("signal header " + hdr.string() + ": unknown key '" + key + "'");
    }
  }
  if (!seen_c || !seen_s || !seen_r || h.channels == 0 || !(h.sample_rate > 0)) {
    throw LoadError("signal header " + hdr.string() + ": needs channels, samples and sample_rate");
  }
  std::error_code ec;
  const auto size = fs::file_size(data, ec);
  if (ec) throw LoadError("signal file not found: " + data.string());
  if (size != h.channels * h.samples * sizeof(float)) {
    throw LoadError("signal file " + data.string() + " holds " + std::to_string(size) + " bytes, header implies " +
                    std::to_string(h.channels * h.samples * sizeof(float)));
  }
  return h;
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

double require_number(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj[key].is_number()) {
    throw LoadError(where + ": missing numeric field '" + key + "'");
  }
  return obj[key].get<double>();
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj[key].is_string()) throw LoadError(where + ": missing string field '" + key + "'");
  return obj[key].get<std::string>();
}

}  // namespace

void write_signal(const fs::path& path, const SignalRecord& record) {
  if (record.channels == 0 || record.samples.size() % record.channels != 0) {
    throw ContractError("write_signal: sample buffer does not divide into channels");
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  std::vector<std::uint32_t> words(record.samples.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    words[i] = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(record.samples[i])));
  }
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!out) throw IoError("short write to " + path.string());
  std::ofstream hdr(header_path(path));
  std::ostringstream rate;
  rate.precision(17);
  rate << record.sample_rate;
  hdr << "channels " << record.channels << "\nsamples " << record.length() << "\nsample_rate " << rate.str()
      << "\n";
  if (!hdr) throw IoError("cannot write " + header_path(path).string());
}

SignalRecord read_signal(const fs::path& path, Modality modality) {
  const SignalHeader h = read_header(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::vector<std::uint32_t> words(h.channels * h.samples);
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!in) throw LoadError("truncated signal file " + path.string());
  SignalRecord r;
  r.channels = h.channels;
  r.sample_rate = h.sample_rate;
  r.modality = modality;
  r.samples.resize(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) r.samples[i] = std::bit_cast<float>(to_little(words[i]));
  return r;
}

SignalRecord load_entry_signal(const ManifestEntry& entry, Modality modality) {
  auto it = entry.signals.find(modality);
  if (it == entry.signals.end()) {
    throw LoadError("trial " + trial_key(entry.subject_id, entry.trial_id) + " has no " +
                    std::string(modality_name(modality)) + " signal");
  }
  SignalRecord r = read_signal(it->second, modality);
  r.subject_id = entry.subject_id;
  r.trial_id = entry.trial_id;
  if (r.channels != modality_channels(modality)) {
    throw LoadError("trial " + trial_key(entry.subject_id, entry.trial_id) + ": " +
                    std::string(modality_name(modality)) + " signal has " + std::to_string(r.channels) +
                    " channels, expected " + std::to_string(modality_channels(modality)));
  }
  return r;
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("manifest not found: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw LoadError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  const std::string where = "manifest " + path.string();
  if (!doc.is_object()) throw LoadError(where + ": top level must be an object");
  if (doc.value("format", std::string()) != kManifestFormat) {
    throw LoadError(where + ": format must be '" + std::string(kManifestFormat) + "'");
  }
  if (doc.value("version", 0) != kManifestVersion) throw LoadError(where + ": unsupported version");

  Manifest m;
  m.root = fs::absolute(path).parent_path();
  m.dataset = doc.value("dataset", std::string());
  m.sample_rate = require_number(doc, "sample_rate", where);
  if (!doc.contains("modalities") || !doc["modalities"].is_array() || doc["modalities"].empty()) {
    throw LoadError(where + ": 'modalities' must be a non-empty array");
  }
  for (const auto& mod : doc["modalities"]) {
    try {
      m.modalities.push_back(parse_modality(mod.get<std::string>()));
    } catch (const std::exception& e) {
      throw LoadError(where + ": " + e.what());
    }
  }
  if (!doc.contains("entries") || !doc["entries"].is_array()) throw LoadError(where + ": 'entries' must be an array");

  std::set<std::string> seen;
  for (std::size_t i = 0; i < doc["entries"].size(); ++i) {
    const json& e = doc["entries"][i];
    const std::string at = where + " entry " + std::to_string(i);
    if (!e.is_object()) throw LoadError(at + ": not an object");
    ManifestEntry entry;
    entry.subject_id = require_string(e, "subject_id", at);
    entry.trial_id = require_string(e, "trial_id", at);
    const std::string key = trial_key(entry.subject_id, entry.trial_id);
    if (!seen.insert(key).second) throw LoadError(at + ": duplicate trial " + key);
    if (!e.contains("signals") || !e["signals"].is_object()) throw LoadError(at + ": 'signals' must be an object");
    for (Modality mod : m.modalities) {
      const std::string name(modality_name(mod));
      if (!e["signals"].contains(name)) throw LoadError("trial " + key + ": missing " + name + " signal path");
      fs::path p = e["signals"][name].get<std::string>();
      if (p.is_relative()) p = m.root / p;
      const SignalHeader h = read_header(p);
      if (h.channels != modality_channels(mod)) {
        throw LoadError("trial " + key + ": " + name + " file has " + std::to_string(h.channels) +
                        " channels, expected " + std::to_string(modality_channels(mod)));
      }
      if (std::abs(h.sample_rate - m.sample_rate) > 1e-9) {
        throw LoadError("trial " + key + ": " + name + " sample rate differs from the manifest");
      }
      entry.signals[mod] = p;
    }
    for (const char* dim : {"arousal", "valence"}) {
      if (!e.contains(dim) || e[dim].is_null()) continue;
      if (!e[dim].is_number()) throw LoadError("trial " + key + ": " + dim + " rating is not a number");
      const double r = e[dim].get<double>();
      if (!(r >= 1.0 && r <= 9.0)) {
        throw LoadError("trial " + key + ": " + dim + " rating " + std::to_string(r) + " outside [1, 9]");
      }
      (std::string(dim) == "arousal" ? entry.arousal : entry.valence) = r;
    }
    if (e.contains("meta")) entry.meta_json = e["meta"].dump();
    m.entries.push_back(std::move(entry));
  }
  std::sort(m.entries.begin(), m.entries.end(), [](const ManifestEntry& a, const ManifestEntry& b) {
    return std::tie(a.subject_id, a.trial_id) < std::tie(b.subject_id, b.trial_id);
  });
  return m;
}

void save_manifest(const Manifest& manifest, const fs::path& path) {
  json doc;
  doc["format"] = kManifestFormat;
  doc["version"] = kManifestVersion;
  doc["dataset"] = manifest.dataset;
  doc["sample_rate"] = manifest.sample_rate;
  doc["modalities"] = json::array();
  for (Modality m : manifest.modalities) doc["modalities"].push_back(std::string(modality_name(m)));
  doc["entries"] = json::array();
  const fs::path base = fs::absolute(path).parent_path();
  for (const auto& e : manifest.entries) {
    json j;
    j["subject_id"] = e.subject_id;
    j["trial_id"] = e.trial_id;
    j["signals"] = json::object();
    for (const auto& [mod, p] : e.signals) {
      j["signals"][std::string(modality_name(mod))] = fs::relative(fs::absolute(p), base).generic_string();
    }
    if (e.arousal) j["arousal"] = *e.arousal;
    if (e.valence) j["valence"] = *e.valence;
    if (!e.meta_json.empty()) j["meta"] = json::parse(e.meta_json);
    doc["entries"].push_back(std::move(j));
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << "\n";
  if (!out) throw IoError("short write to " + path.string());
}

std::string_view target_name(Target t) { return t == Target::kArousal ? "arousal" : "valence"; }

Target parse_target(std::string_view name) {
  if (name == "arousal") return Target::kArousal;
  if (name == "valence") return Target::kValence;
  throw ConfigError("unknown target '" + std::string(name) + "' (expected arousal or valence)");
}

std::string trial_key(const std::string& subject_id, const std::string& trial_id) {
  return subject_id + "/" + trial_id;
}

std::optional<int> LabelSet::label(const std::string& subject_id, const std::string& trial_id, Target t) const {
  auto it = trials.find(trial_key(subject_id, trial_id));
  if (it == trials.end()) return std::nullopt;
  return t == Target::kArousal ? it->second.arousal : it->second.valence;
}

LabelSet binarize_labels(const Manifest& manifest) {
  LabelSet set;
  double sum_a = 0, sum_v = 0;
  std::size_t n_a = 0, n_v = 0;
  for (const auto& e : manifest.entries) {
    if (e.arousal) {
      sum_a += *e.arousal;
      ++n_a;
    }
    if (e.valence) {
      sum_v += *e.valence;
      ++n_v;
    }
  }
  if (n_a == 0 && n_v == 0) throw ContractError("binarize_labels: manifest has no rated trials");
  set.arousal_threshold = n_a ? sum_a / static_cast<double>(n_a) : 0.0;
  set.valence_threshold = n_v ? sum_v / static_cast<double>(n_v) : 0.0;
  for (const auto& e : manifest.entries) {
    TrialLabel l;
    if (e.arousal) l.arousal = *e.arousal > set.arousal_threshold ? 1 : 0;
    if (e.valence) l.valence = *e.valence > set.valence_threshold ? 1 : 0;
    set.trials[trial_key(e.subject_id, e.trial_id)] = l;
  }
  return set;
}

FoldPlan make_folds(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ContractError("make_folds: need at least 2 folds");
  if (n < k) {
    throw ContractError("make_folds: " + std::to_string(n) + " segments cannot fill " + std::to_string(k) + " folds");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "folds"));
  rng.shuffle(perm.begin(), perm.end());

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  std::size_t begin = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    Fold fold;
    fold.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(begin),
                     perm.begin() + static_cast<std::ptrdiff_t>(begin + size));
    std::vector<std::size_t> rest;
    rest.reserve(n - size);
    rest.insert(rest.end(), perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(begin));
    rest.insert(rest.end(), perm.begin() + static_cast<std::ptrdiff_t>(begin + size), perm.end());
    const std::size_t n_val = (rest.size() + 5) / 10;
    fold.train.assign(rest.begin(), rest.end() - static_cast<std::ptrdiff_t>(n_val));
    fold.validation.assign(rest.end() - static_cast<std::ptrdiff_t>(n_val), rest.end());
    std::sort(fold.train.begin(), fold.train.end());
    std::sort(fold.validation.begin(), fold.validation.end());
    std::sort(fold.test.begin(), fold.test.end());
    plan.folds.push_back(std::move(fold));
    begin += size;
  }
  return plan;
}

std::size_t MaskPlan::masked_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

MaskPlan sample_mask(std::size_t length, std::size_t span_length, double mask_ratio, Rng& rng) {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ContractError("sample_mask: ratio must lie in (0, 1)");
  if (span_length == 0 || span_length > length) {
    throw ContractError("sample_mask: span length " + std::to_string(span_length) + " must lie in [1, " +
                        std::to_string(length) + "]");
  }
  const auto count = static_cast<std::size_t>(
      std::floor(mask_ratio * static_cast<double>(length) / static_cast<double>(span_length) + 1e-9));
  if (count == 0 || count * span_length > length) {
    throw ContractError("sample_mask: cannot place spans of " + std::to_string(span_length) + " at ratio " +
                        std::to_string(mask_ratio) + " in " + std::to_string(length) + " samples");
  }
  // Uniform non-overlapping configuration on the line via the gap bijection:
  // choose `count` distinct values from [0, free + count), then spread them out.
  const std::size_t pool = length - count * span_length + count;
  std::set<std::size_t> chosen;  // Floyd's sampling without replacement
  for (std::size_t j = pool - count; j < pool; ++j) {
    const std::size_t t = rng.below(j + 1);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  const std::size_t offset = rng.below(length);
  MaskPlan plan;
  plan.length = length;
  plan.span_length = span_length;
  plan.mask_ratio = mask_ratio;
  plan.mask.assign(length, false);
  std::size_t i = 0;
  for (std::size_t y : chosen) {
    const std::size_t start = (y + i * (span_length - 1) + offset) % length;
    plan.span_starts.push_back(start);
    for (std::size_t j = 0; j < span_length; ++j) plan.mask[(start + j) % length] = true;
    ++i;
  }
  std::sort(plan.span_starts.begin(), plan.span_starts.end());
  return plan;
}

void apply_mask(const MaskPlan& plan, std::vector<double>& samples, std::size_t channels) {
  if (samples.size() != plan.length * channels) throw DimensionError("apply_mask: buffer does not match the plan");
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < plan.length; ++t) {
      if (plan.mask[t]) samples[c * plan.length + t] = 0.0;
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

double clamped_normal(Rng& rng, double limit = 2.0) { return std::clamp(rng.normal(), -limit, limit); }

std::vector<double> synth_ecg(double seconds, double fs, double bpm, double amplitude, double noise, Rng& rng) {
  const auto n = static_cast<std::size_t>(std::llround(seconds * fs));
  std::vector<double> x(n, 0.0);
  const double wander_phase = rng.uniform(0, 2 * std::numbers::pi);
  const double wander_hz = rng.uniform(0.15, 0.35);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    x[i] = 0.08 * std::sin(2 * std::numbers::pi * wander_hz * t + wander_phase) + noise * rng.normal();
  }
  auto add_wave = [&](double centre, double height, double width) {
    const double lo = std::max(0.0, centre - 5 * width), hi = std::min(seconds, centre + 5 * width);
    for (auto i = static_cast<std::size_t>(lo * fs); i < n && static_cast<double>(i) / fs <= hi; ++i) {
      const double d = (static_cast<double>(i) / fs - centre) / width;
      x[i] += height * std::exp(-0.5 * d * d);
    }
  };
  double beat = rng.uniform(0.0, 60.0 / bpm);
  while (beat < seconds + 0.5) {
    add_wave(beat - 0.16, 0.10 * amplitude, 0.025);  // P
    add_wave(beat - 0.035, -0.12 * amplitude, 0.010);  // Q
    add_wave(beat, amplitude, 0.018);                  // R
    add_wave(beat + 0.035, -0.18 * amplitude, 0.012);  // S
    add_wave(beat + 0.26, 0.28 * amplitude, 0.055);    // T
    beat += (60.0 / bpm) * (1.0 + 0.02 * clamped_normal(rng));
  }
  return x;
}

std::vector<double> synth_eeg(double seconds, double fs, const std::vector<double>& channel_gain, double alpha_amp,
                              double beta_amp, const SyntheticSpec& spec, Rng& rng) {
  const auto n = static_cast<std::size_t>(std::llround(seconds * fs));
  const std::size_t channels = channel_gain.size();
  std::vector<double> x(n * channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    const double fa = spec.eeg_alpha_hz + rng.uniform(-0.5, 0.5);
    const double fb = spec.eeg_beta_hz + rng.uniform(-1.0, 1.0);
    const double ft = 6.0 + rng.uniform(-0.5, 0.5);
    const double pa = rng.uniform(0, 2 * std::numbers::pi), pb = rng.uniform(0, 2 * std::numbers::pi);
    const double pt = rng.uniform(0, 2 * std::numbers::pi), pm = rng.uniform(0, 2 * std::numbers::pi);
    const double pd = rng.uniform(0, 2 * std::numbers::pi);
    double* dst = x.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / fs;
      const double envelope = 1.0 + 0.25 * std::sin(2 * std::numbers::pi * 0.2 * t + pm);
      const double rhythm = alpha_amp * envelope * std::sin(2 * std::numbers::pi * fa * t + pa) +
                            beta_amp * std::sin(2 * std::numbers::pi * fb * t + pb) +
                            0.4 * std::sin(2 * std::numbers::pi * ft * t + pt);
      const double drift = 0.5 * std::sin(2 * std::numbers::pi * 0.1 * t + pd);
      dst[i] = channel_gain[c] * rhythm + drift + spec.eeg_noise * rng.normal();
    }
  }
  return x;
}

}  // namespace

Manifest generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed, const fs::path& out_dir) {
  if (spec.subjects == 0 || spec.trials_per_subject == 0 || !(spec.trial_seconds > 0) || !(spec.sample_rate > 0)) {
    throw ContractError("generate_synthetic: subjects, trials, duration and rate must be positive");
  }
  if (spec.ecg_only_fraction < 0 || spec.eeg_only_fraction < 0 || spec.ecg_only_fraction + spec.eeg_only_fraction > 1) {
    throw ContractError("generate_synthetic: modality-only fractions must be non-negative and sum to at most 1");
  }
  const std::size_t n = spec.subjects * spec.trials_per_subject;
  Rng plan_rng(derive_seed(seed, "synthetic-plan"));

  std::vector<int> arousal(n), valence(n);
  for (std::size_t i = 0; i < n; ++i) arousal[i] = valence[i] = i < n / 2 ? 1 : 0;
  plan_rng.shuffle(arousal.begin(), arousal.end());
  plan_rng.shuffle(valence.begin(), valence.end());
  // 0 = both, 1 = ecg only, 2 = eeg only
  std::vector<int> group(n, 0);
  const auto n_ecg = static_cast<std::size_t>(std::llround(spec.ecg_only_fraction * static_cast<double>(n)));
  const auto n_eeg = std::min(n - n_ecg,
                              static_cast<std::size_t>(std::llround(spec.eeg_only_fraction * static_cast<double>(n))));
  for (std::size_t i = 0; i < n_ecg; ++i) group[i] = 1;
  for (std::size_t i = n_ecg; i < n_ecg + n_eeg; ++i) group[i] = 2;
  plan_rng.shuffle(group.begin(), group.end());

  Manifest m;
  m.dataset = "synthetic";
  m.sample_rate = spec.sample_rate;
  m.modalities = {Modality::kEcg, Modality::kEeg};
  m.root = fs::absolute(out_dir);
  fs::create_directories(out_dir / "signals");

  char name[64];
  for (std::size_t s = 0; s < spec.subjects; ++s) {
    Rng subject_rng(derive_seed(seed, "synthetic-subject", s));
    const double subject_bpm = spec.ecg_base_bpm * (1.0 + 0.5 * spec.subject_variability * clamped_normal(subject_rng));
    const double subject_alpha = 1.0 + spec.subject_variability * clamped_normal(subject_rng);
    const double subject_ecg_gain = 1.0 + spec.subject_variability * clamped_normal(subject_rng);
    for (std::size_t t = 0; t < spec.trials_per_subject; ++t) {
      const std::size_t i = s * spec.trials_per_subject + t;
      Rng rng(derive_seed(seed, "synthetic-trial", s, t));
      const int sa = 2 * arousal[i] - 1, sv = 2 * valence[i] - 1;
      const int ecg_a = group[i] == 2 ? 0 : sa, ecg_v = group[i] == 2 ? 0 : sv;
      const int eeg_a = group[i] == 1 ? 0 : sa, eeg_v = group[i] == 1 ? 0 : sv;

      const double bpm = subject_bpm + spec.ecg_bpm_delta * ecg_a + 1.0 * clamped_normal(rng);
      const double amp = (1.0 + spec.ecg_amplitude_delta * ecg_v) * (1.0 + 0.03 * clamped_normal(rng));
      const double balance = spec.eeg_band_delta * eeg_a;
      const double asymmetry = spec.eeg_asymmetry_delta * eeg_v;
      const double alpha_amp = subject_alpha * (1.0 - balance);
      const double beta_amp = 0.6 * subject_alpha * (1.0 + balance);
      std::vector<double> gains(kEegChannels.size());
      for (std::size_t c = 0; c < gains.size(); ++c) {
        gains[c] = (c < 5 ? 1.0 + asymmetry : 1.0 - asymmetry) * (1.0 + 0.05 * clamped_normal(rng));
      }

      std::snprintf(name, sizeof(name), "s%02zu", s + 1);
      const std::string subject_id = name;
      std::snprintf(name, sizeof(name), "t%02zu", t + 1);
      const std::string trial_id = name;

      SignalRecord ecg;
      ecg.channels = 1;
      ecg.sample_rate = spec.sample_rate;
      ecg.modality = Modality::kEcg;
      ecg.samples = synth_ecg(spec.trial_seconds, spec.sample_rate, bpm, amp * subject_ecg_gain, spec.ecg_noise, rng);
      SignalRecord eeg;
      eeg.channels = kEegChannels.size();
      eeg.sample_rate = spec.sample_rate;
      eeg.modality = Modality::kEeg;
      eeg.samples = synth_eeg(spec.trial_seconds, spec.sample_rate, gains, alpha_amp, beta_amp, spec, rng);

      ManifestEntry e;
      e.subject_id = subject_id;
      e.trial_id = trial_id;
      const fs::path ecg_path = out_dir / "signals" / (subject_id + "_" + trial_id + "_ecg.f32");
      const fs::path eeg_path = out_dir / "signals" / (subject_id + "_" + trial_id + "_eeg.f32");
      write_signal(ecg_path, ecg);
      write_signal(eeg_path, eeg);
      e.signals[Modality::kEcg] = fs::absolute(ecg_path);
      e.signals[Modality::kEeg] = fs::absolute(eeg_path);
      // Ratings sit on either side of the midpoint so the mean threshold recovers the labels.
      const auto rating = [&](int high) {
        const double r = high ? rng.uniform(6.0, 9.0) : rng.uniform(1.0, 4.0);
        return std::round(r * 100.0) / 100.0;
      };
      e.arousal = rating(arousal[i]);
      e.valence = rating(valence[i]);
      json meta;
      meta["group"] = group[i] == 0 ? "both" : group[i] == 1 ? "ecg" : "eeg";
      meta["arousal_level"] = {{"ecg", ecg_a}, {"eeg", eeg_a}};
      meta["valence_level"] = {{"ecg", ecg_v}, {"eeg", eeg_v}};
      meta["ecg_rate_bpm"] = bpm;
      meta["ecg_amplitude"] = amp;
      meta["eeg_band_balance"] = balance;
      meta["eeg_asymmetry"] = asymmetry;
      e.meta_json = meta.dump();
      m.entries.push_back(std::move(e));
    }
  }
  save_manifest(m, out_dir / "manifest.json");
  return load_manifest(out_dir / "manifest.json");
}

// ---------------------------------------------------------------------------

PreparedDataset prepare_dataset(const Manifest& manifest, const PreprocessConfig& config) {
  PreparedDataset data;
  data.modalities = manifest.modalities;
  data.sample_rate = config.target_rate;
  data.segment_length = static_cast<std::size_t>(std::llround(config.segment_seconds * config.target_rate));
  bool any_rating = false;
  for (const auto& e : manifest.entries) any_rating = any_rating || e.arousal || e.valence;
  if (any_rating) data.labels = binarize_labels(manifest);

  std::map<Modality, std::optional<IirFilter>> filters;
  for (Modality m : manifest.modalities) {
    const auto spec = filter_preset(m == Modality::kEcg ? config.ecg_filter : config.eeg_filter);
    if (spec) filters[m] = design_butterworth(*spec, manifest.sample_rate);
    else filters[m] = std::nullopt;
  }

  for (const auto& entry : manifest.entries) {
    std::map<Modality, std::vector<SignalSegment>> windows;
    std::size_t count = std::numeric_limits<std::size_t>::max();
    for (Modality m : manifest.modalities) {
      SignalRecord r = load_entry_signal(entry, m);
      if (filters[m]) r = apply_filter(*filters[m], r);
      r = decimate(r, config.target_rate);
      windows[m] = segment(r, config.segment_seconds, config.target_rate);
      count = std::min(count, windows[m].size());
    }
    for (std::size_t w = 0; w < count; ++w) {
      SegmentRecord s;
      s.id = data.segments.size();
      s.subject_id = entry.subject_id;
      s.trial_id = entry.trial_id;
      s.window = w;
      if (any_rating) {
        s.arousal = data.labels.label(entry.subject_id, entry.trial_id, Target::kArousal);
        s.valence = data.labels.label(entry.subject_id, entry.trial_id, Target::kValence);
      }
      for (Modality m : manifest.modalities) s.signals[m] = std::move(windows[m][w].samples);
      data.segments.push_back(std::move(s));
    }
  }
  return data;
}

std::vector<SegmentRecord> normalize_segments(const PreparedDataset& data, const std::vector<std::size_t>& reference) {
  if (reference.empty()) throw ContractError("normalize_segments: empty reference set");
  const std::size_t len = data.segment_length;
  struct Accumulator {
    std::vector<double> sum, sq;
    std::size_t count = 0;
  };
  auto accumulate_mean = [&](Accumulator& acc, const std::vector<double>& x, std::size_t channels) {
    if (acc.sum.empty()) {
      acc.sum.assign(channels, 0.0);
      acc.sq.assign(channels, 0.0);
    }
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t t = 0; t < len; ++t) acc.sum[c] += x[c * len + t];
    acc.count += len;
  };

  std::vector<SegmentRecord> out = data.segments;
  for (Modality m : data.modalities) {
    const std::size_t channels = modality_channels(m);
    // Two passes (mean, then squared deviations) per subject and for the pooled fallback.
    std::map<std::string, Accumulator> per_subject;
    Accumulator pooled;
    for (std::size_t id : reference) {
      const auto& seg = data.segments.at(id);
      accumulate_mean(per_subject[seg.subject_id], seg.signals.at(m), channels);
      accumulate_mean(pooled, seg.signals.at(m), channels);
    }
    auto finish_mean = [&](Accumulator& acc) {
      for (auto& s : acc.sum) s /= static_cast<double>(acc.count);
    };
    for (auto& [k, acc] : per_subject) finish_mean(acc);
    finish_mean(pooled);
    for (std::size_t id : reference) {
      const auto& seg = data.segments.at(id);
      const auto& x = seg.signals.at(m);
      for (Accumulator* acc : {&per_subject[seg.subject_id], &pooled}) {
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t t = 0; t < len; ++t) {
            const double d = x[c * len + t] - acc->sum[c];
            acc->sq[c] += d * d;
          }
      }
    }
    auto stats_of = [&](const Accumulator& acc, const std::string& who) {
      ChannelStats st;
      st.mean = acc.sum;
      st.stddev.resize(channels);
      for (std::size_t c = 0; c < channels; ++c) {
        st.stddev[c] = std::sqrt(acc.sq[c] / static_cast<double>(acc.count));
        if (!(st.stddev[c] > 0.0)) {
          throw DegenerateSignalError("channel " + std::to_string(c) + " of " + who + " (" +
                                      std::string(modality_name(m)) + ") has zero variance");
        }
      }
      return st;
    };
    std::map<std::string, ChannelStats> stats;
    for (const auto& [subject, acc] : per_subject) stats[subject] = stats_of(acc, "subject " + subject);
    const ChannelStats fallback = stats_of(pooled, "the reference pool");
    for (auto& seg : out) {
      auto it = stats.find(seg.subject_id);
      const ChannelStats& st = it == stats.end() ? fallback : it->second;
      auto& x = seg.signals.at(m);
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t t = 0; t < len; ++t) x[c * len + t] = (x[c * len + t] - st.mean[c]) / st.stddev[c];
    }
  }
  return out;
}

}  // namespace physiofuse
