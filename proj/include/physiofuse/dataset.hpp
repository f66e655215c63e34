#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "physiofuse/dsp.hpp"
#include "physiofuse/rng.hpp"

namespace physiofuse {

// ---------------------------------------------------------------------------
// On-disk format
//
// Signal file: raw little-endian float32, channel-major. A sidecar text header
// at "<file>.hdr" holds "channels N", "samples N" and "sample_rate HZ" lines.
//
// Manifest: UTF-8 JSON object
//   { "format": "physiofuse-manifest", "version": 1, "dataset": str,
//     "sample_rate": num, "modalities": ["ecg", "eeg"],
//     "entries": [ { "subject_id": str, "trial_id": str,
//                    "signals": { "ecg": path, "eeg": path },
//                    "arousal": num?, "valence": num?, "meta": obj? } ] }
// Signal paths are relative to the manifest's directory.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string subject_id;
  std::string trial_id;
  std::map<Modality, std::filesystem::path> signals;  // absolute after loading
  std::optional<double> arousal;
  std::optional<double> valence;
  /// Free-form metadata, kept as serialized JSON text.
  std::string meta_json;
};

struct Manifest {
  std::string dataset;
  double sample_rate = 128.0;
  std::vector<Modality> modalities;
  std::vector<ManifestEntry> entries;  // sorted by (subject_id, trial_id)
  std::filesystem::path root;
};

/// Parses and validates a manifest; every signal header is checked against its
/// data file size.
Manifest load_manifest(const std::filesystem::path& path);
/// Writes `manifest` to `path`; signal paths are stored relative to its directory.
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

void write_signal(const std::filesystem::path& path, const SignalRecord& record);
SignalRecord read_signal(const std::filesystem::path& path, Modality modality);
SignalRecord load_entry_signal(const ManifestEntry& entry, Modality modality);

// ---------------------------------------------------------------------------
// Labels

enum class Target { kArousal, kValence };
std::string_view target_name(Target t);
Target parse_target(std::string_view name);

struct TrialLabel {
  std::optional<int> arousal;
  std::optional<int> valence;
};

struct LabelSet {
  double arousal_threshold = 0.0;
  double valence_threshold = 0.0;
  /// Keyed by "subject_id/trial_id".
  std::map<std::string, TrialLabel> trials;

  std::optional<int> label(const std::string& subject_id, const std::string& trial_id, Target t) const;
};

std::string trial_key(const std::string& subject_id, const std::string& trial_id);

/// Threshold per dimension is the mean rating across all rated trials;
/// rating > threshold is the high class (1), ties fall to the low class.
LabelSet binarize_labels(const Manifest& manifest);

// ---------------------------------------------------------------------------
// Cross-validation folds

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

struct FoldPlan {
  std::size_t k = 10;
  std::uint64_t seed = 0;
  std::vector<Fold> folds;
};

/// Seeded shuffle of [0, n), split into k test sets whose sizes differ by at most
/// one. The rest of each fold is split 90/10 into train and validation.
FoldPlan make_folds(std::size_t n_segments, std::size_t k, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Masked-value masks

struct MaskPlan {
  std::size_t length = 0;
  std::size_t span_length = 0;
  double mask_ratio = 0.0;
  std::vector<std::size_t> span_starts;  // sorted
  std::vector<bool> mask;                // one flag per temporal position

  std::size_t masked_count() const;
};

/// Places ⌊ratio·T/span⌋ non-overlapping spans of `span_length` samples. The
/// configuration is drawn uniformly on a line of length T and then rotated by a
/// uniform offset modulo T, so every position is masked with probability
/// exactly count·span/T; a span rotated past the end wraps to the start.
MaskPlan sample_mask(std::size_t length, std::size_t span_length, double mask_ratio, Rng& rng);

/// Zeros every masked time step of a channel-major [channels × T] buffer; the
/// same temporal mask applies to all channels.
void apply_mask(const MaskPlan& plan, std::vector<double>& samples, std::size_t channels);

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
  std::size_t subjects = 4;
  std::size_t trials_per_subject = 10;
  double trial_seconds = 60.0;
  double sample_rate = 256.0;

  // ECG: pulse rate encodes arousal, R-wave amplitude encodes valence.
  double ecg_base_bpm = 72.0;
  double ecg_bpm_delta = 14.0;
  double ecg_amplitude_delta = 0.35;
  double ecg_noise = 0.05;

  // EEG: alpha/beta balance encodes arousal, left/right amplitude asymmetry encodes valence.
  double eeg_alpha_hz = 10.0;
  double eeg_beta_hz = 21.0;
  double eeg_band_delta = 0.4;
  double eeg_asymmetry_delta = 0.3;
  double eeg_noise = 0.3;

  /// Between-subject spread of baseline rate and rhythm amplitudes (relative).
  double subject_variability = 0.1;

  /// Fractions of trials whose labels are expressed only in ECG / only in EEG;
  /// the remainder is expressed in both. The silent modality sits at a neutral level.
  double ecg_only_fraction = 0.5;
  double eeg_only_fraction = 0.5;
};

/// Writes a complete on-disk dataset (manifest.json plus signals/) into `out_dir`
/// and returns the loaded manifest. Each entry's meta holds the generating
/// parameters: group, arousal_level, valence_level (−1, 0 or +1 per modality),
/// ecg_rate_bpm, ecg_amplitude, eeg_band_balance, eeg_asymmetry.
Manifest generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Prepared segments

struct PreprocessConfig {
  std::string ecg_filter = "amigos-ecg";
  std::string eeg_filter = "amigos-eeg";
  double target_rate = 128.0;
  double segment_seconds = 10.0;
};

/// One window of one trial with every modality, before normalization.
struct SegmentRecord {
  std::size_t id = 0;
  std::string subject_id;
  std::string trial_id;
  std::size_t window = 0;
  std::optional<int> arousal;
  std::optional<int> valence;
  std::map<Modality, std::vector<double>> signals;  // channel-major [C × length]

  std::optional<int> label(Target t) const { return t == Target::kArousal ? arousal : valence; }
};

struct PreparedDataset {
  std::vector<Modality> modalities;
  std::size_t segment_length = 0;
  double sample_rate = 128.0;
  LabelSet labels;
  std::vector<SegmentRecord> segments;  // id == index
};

/// filter → decimate → segment for every trial; normalization is deferred so it
/// can use fold-local statistics.
PreparedDataset prepare_dataset(const Manifest& manifest, const PreprocessConfig& config);

/// Standardizes every segment per (subject, modality, channel) with statistics
/// taken only from the segments listed in `reference`. Subjects with no
/// reference segment use statistics pooled over all reference segments.
std::vector<SegmentRecord> normalize_segments(const PreparedDataset& data, const std::vector<std::size_t>& reference);

}  // namespace physiofuse
