#pragma once

#include <array>
#include <complex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "physiofuse/error.hpp"

namespace physiofuse {

enum class Modality { kEcg, kEeg };

std::string_view modality_name(Modality m);
Modality parse_modality(std::string_view name);

/// The EEG montage, in storage order.
inline constexpr std::array<std::string_view, 10> kEegChannels = {"F7", "F3", "T7", "P7", "O1",
                                                                  "O2", "P8", "T8", "F4", "F8"};

/// Channel count required for a modality (1 for ECG, 10 for EEG).
std::size_t modality_channels(Modality m);

/// Multichannel signal stored channel-major: all of channel 0, then channel 1, ...
struct SignalRecord {
  std::vector<double> samples;
  std::size_t channels = 1;
  double sample_rate = 128.0;
  std::string subject_id;
  std::string trial_id;
  Modality modality = Modality::kEcg;

  std::size_t length() const { return channels == 0 ? 0 : samples.size() / channels; }
  double* channel(std::size_t c) { return samples.data() + c * length(); }
  const double* channel(std::size_t c) const { return samples.data() + c * length(); }
};

/// A channel has zero variance, so it cannot be standardized.
class DegenerateSignalError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// One second-order section, a0 normalized to 1:
/// H(z) = (b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};

enum class FilterKind { kLowpass, kBandpass };

struct FilterSpec {
  FilterKind kind = FilterKind::kLowpass;
  double low_hz = 0.0;   // band-pass lower edge; unused for low-pass
  double high_hz = 0.0;  // low-pass cutoff or band-pass upper edge
  int order = 8;
};

struct IirFilter {
  std::vector<Biquad> sections;
  FilterSpec spec;
  double sample_rate = 0.0;

  std::complex<double> response(double frequency_hz) const;
  std::vector<std::complex<double>> poles() const;
  double max_pole_magnitude() const;
};

/// Digital Butterworth filter via the bilinear transform with frequency
/// pre-warping, factored into second-order sections. A low-pass of order N has
/// N/2 sections; a band-pass of order N has N sections (2N poles). Low-pass is
/// normalized to unit gain at DC, band-pass to unit gain at the centre frequency.
IirFilter design_butterworth(const FilterSpec& spec, double sample_rate);

/// Single causal pass per channel through the section cascade from zero state.
SignalRecord apply_filter(const IirFilter& filter, const SignalRecord& signal);
/// Filters one channel in place.
void filter_in_place(const IirFilter& filter, std::vector<double>& samples);

/// Anti-alias low-pass at 0.45 · target_rate (order 8), then keeps every k-th
/// sample. Requires sample_rate to be an integer multiple of target_rate.
SignalRecord decimate(const SignalRecord& signal, double target_rate = 128.0);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population (divide-by-N)
};

/// Per-channel mean and population deviation pooled across `records`, which must
/// share a channel count. Throws DegenerateSignalError for constant channels.
ChannelStats compute_channel_stats(const std::vector<const SignalRecord*>& records);

void apply_channel_stats(const ChannelStats& stats, SignalRecord& record);

/// Standardizes every record of `subject_id` per modality and channel using
/// statistics pooled across all of that subject's samples. Returns the subject's
/// normalized records in input order.
std::vector<SignalRecord> normalize_per_subject(const std::vector<SignalRecord>& records,
                                                const std::string& subject_id);

struct SignalSegment {
  std::string subject_id;
  std::string trial_id;
  Modality modality = Modality::kEcg;
  std::size_t window = 0;  // position of the window within its trial
  std::size_t channels = 1;
  std::size_t length = 0;
  std::vector<double> samples;  // channel-major
};

/// Consecutive non-overlapping windows; a trailing remainder shorter than one
/// window is dropped.
std::vector<SignalSegment> segment(const SignalRecord& signal, double window_seconds = 10.0,
                                   double required_rate = 128.0);

/// Named filter choices. "amigos-ecg": low-pass 60 Hz; "amigos-eeg": band-pass
/// 0.8–50 Hz; "amigos-eeg-alt": band-pass 4–45 Hz; all order 8. "none" → nullopt.
std::optional<FilterSpec> filter_preset(std::string_view name);
std::vector<std::string> filter_preset_names();

}  // namespace physiofuse
