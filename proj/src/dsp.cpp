#include "physiofuse/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

namespace physiofuse {

std::string_view modality_name(Modality m) { return m == Modality::kEcg ? "ecg" : "eeg"; }

Modality parse_modality(std::string_view name) {
  if (name == "ecg") return Modality::kEcg;
  if (name == "eeg") return Modality::kEeg;
  throw ConfigError("unknown modality '" + std::string(name) + "' (expected ecg or eeg)");
}

std::size_t modality_channels(Modality m) { return m == Modality::kEcg ? 1 : kEegChannels.size(); }

namespace {

using cd = std::complex<double>;

cd bilinear(cd s, double fs) { return (2.0 * fs + s) / (2.0 * fs - s); }

double prewarp(double f, double fs) { return 2.0 * fs * std::tan(std::numbers::pi * f / fs); }

/// Left-half-plane analog Butterworth prototype poles with positive imaginary part.
std::vector<cd> prototype_upper_poles(int order) {
  std::vector<cd> poles;
  for (int k = 0; k < order; ++k) {
    const double angle = std::numbers::pi * (2.0 * k + order + 1) / (2.0 * order);
    const cd p = std::polar(1.0, angle);
    if (p.imag() > 0) poles.push_back(p);
  }
  return poles;
}

Biquad section_from_pole(cd z, double b0, double b1, double b2) {
  return Biquad{b0, b1, b2, -2.0 * z.real(), std::norm(z)};
}

cd section_response(const Biquad& s, cd zinv) {
  const cd num = s.b0 + s.b1 * zinv + s.b2 * zinv * zinv;
  const cd den = 1.0 + s.a1 * zinv + s.a2 * zinv * zinv;
  return num / den;
}

}  // namespace

std::complex<double> IirFilter::response(double frequency_hz) const {
  const double w = 2.0 * std::numbers::pi * frequency_hz / sample_rate;
  const cd zinv = std::polar(1.0, -w);
  cd h = 1.0;
  for (const auto& s : sections) h *= section_response(s, zinv);
  return h;
}

std::vector<std::complex<double>> IirFilter::poles() const {
  std::vector<cd> out;
  for (const auto& s : sections) {
    // z² + a1 z + a2 = 0
    const cd disc = std::sqrt(cd(s.a1 * s.a1 - 4.0 * s.a2, 0.0));
    out.push_back((-s.a1 + disc) / 2.0);
    out.push_back((-s.a1 - disc) / 2.0);
  }
  return out;
}

double IirFilter::max_pole_magnitude() const {
  double m = 0.0;
  for (const auto& p : poles()) m = std::max(m, std::abs(p));
  return m;
}

IirFilter design_butterworth(const FilterSpec& spec, double sample_rate) {
  const double nyquist = sample_rate / 2.0;
  if (spec.order <= 0 || spec.order % 2 != 0) {
    throw DomainError("design_butterworth: order must be a positive even number, got " + std::to_string(spec.order));
  }
  if (!(spec.high_hz > 0.0) || spec.high_hz >= nyquist) {
    throw DomainError("design_butterworth: cutoff " + std::to_string(spec.high_hz) + " Hz must lie in (0, " +
                      std::to_string(nyquist) + ") Hz");
  }
  IirFilter f;
  f.spec = spec;
  f.sample_rate = sample_rate;
  const auto proto = prototype_upper_poles(spec.order);

  if (spec.kind == FilterKind::kLowpass) {
    const double wc = prewarp(spec.high_hz, sample_rate);
    for (const cd& p : proto) {
      const cd z = bilinear(wc * p, sample_rate);
      // Double zero at z = −1; unit gain at DC per section.
      const double g = (1.0 - 2.0 * z.real() + std::norm(z)) / 4.0;
      f.sections.push_back(section_from_pole(z, g, 2.0 * g, g));
    }
    return f;
  }

  if (!(spec.low_hz > 0.0) || spec.low_hz >= spec.high_hz) {
    throw DomainError("design_butterworth: band edges must satisfy 0 < low < high, got " +
                      std::to_string(spec.low_hz) + " and " + std::to_string(spec.high_hz));
  }
  const double w1 = prewarp(spec.low_hz, sample_rate);
  const double w2 = prewarp(spec.high_hz, sample_rate);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;
  for (const cd& p : proto) {
    // Low-pass → band-pass: s² − p·BW·s + W0² = 0 yields two poles per prototype pole.
    const cd half = p * bw / 2.0;
    const cd root = std::sqrt(half * half - w0sq);
    for (const cd& s : {half + root, half - root}) {
      const cd z = bilinear(s, sample_rate);
      f.sections.push_back(section_from_pole(z, 1.0, 0.0, -1.0));
    }
  }
  const double center = std::sqrt(w0sq);
  const double center_hz = sample_rate * std::atan(center / (2.0 * sample_rate)) / std::numbers::pi;
  const double gain = 1.0 / std::abs(f.response(center_hz));
  const double per_section = std::pow(gain, 1.0 / static_cast<double>(f.sections.size()));
  for (auto& s : f.sections) {
    s.b0 *= per_section;
    s.b1 *= per_section;
    s.b2 *= per_section;
  }
  return f;
}

void filter_in_place(const IirFilter& filter, std::vector<double>& x) {
  for (const auto& s : filter.sections) {
    double z1 = 0.0, z2 = 0.0;  // transposed direct form II state
    for (double& v : x) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
}

SignalRecord apply_filter(const IirFilter& filter, const SignalRecord& signal) {
  if (std::abs(signal.sample_rate - filter.sample_rate) > 1e-9) {
    throw ContractError("apply_filter: signal sampled at " + std::to_string(signal.sample_rate) +
                        " Hz, filter designed for " + std::to_string(filter.sample_rate) + " Hz");
  }
  SignalRecord out = signal;
  const std::size_t n = signal.length();
  std::vector<double> buffer(n);
  for (std::size_t c = 0; c < signal.channels; ++c) {
    std::copy_n(signal.channel(c), n, buffer.begin());
    filter_in_place(filter, buffer);
    std::copy_n(buffer.begin(), n, out.channel(c));
  }
  return out;
}

SignalRecord decimate(const SignalRecord& signal, double target_rate) {
  const double ratio = signal.sample_rate / target_rate;
  const double k_real = std::round(ratio);
  if (k_real < 1.0 || std::abs(ratio - k_real) > 1e-9) {
    throw DomainError("decimate: unsupported rate " + std::to_string(signal.sample_rate) +
                      " Hz; only integer multiples of " + std::to_string(target_rate) + " Hz are supported");
  }
  const auto k = static_cast<std::size_t>(k_real);
  if (k == 1) return signal;
  const IirFilter anti_alias =
      design_butterworth(FilterSpec{FilterKind::kLowpass, 0.0, 0.45 * target_rate, 8}, signal.sample_rate);
  const SignalRecord filtered = apply_filter(anti_alias, signal);
  SignalRecord out = signal;
  out.sample_rate = target_rate;
  const std::size_t n = signal.length();
  const std::size_t m = (n + k - 1) / k;
  out.samples.assign(m * signal.channels, 0.0);
  for (std::size_t c = 0; c < signal.channels; ++c) {
    const double* src = filtered.channel(c);
    double* dst = out.samples.data() + c * m;
    for (std::size_t i = 0; i < m; ++i) dst[i] = src[i * k];
  }
  return out;
}

ChannelStats compute_channel_stats(const std::vector<const SignalRecord*>& records) {
  if (records.empty()) throw ContractError("compute_channel_stats: no records");
  const std::size_t channels = records.front()->channels;
  ChannelStats stats;
  stats.mean.assign(channels, 0.0);
  stats.stddev.assign(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto* r : records) {
      if (r->channels != channels) throw DimensionError("compute_channel_stats: channel counts differ");
      const double* x = r->channel(c);
      for (std::size_t i = 0; i < r->length(); ++i) total += x[i];
      count += r->length();
    }
    if (count == 0) throw ContractError("compute_channel_stats: no samples");
    const double mu = total / static_cast<double>(count);
    double sq = 0.0;
    for (const auto* r : records) {
      const double* x = r->channel(c);
      for (std::size_t i = 0; i < r->length(); ++i) sq += (x[i] - mu) * (x[i] - mu);
    }
    const double sd = std::sqrt(sq / static_cast<double>(count));
    if (!(sd > 0.0)) {
      throw DegenerateSignalError("channel " + std::to_string(c) + " of subject " + records.front()->subject_id +
                                  " (" + std::string(modality_name(records.front()->modality)) +
                                  ") has zero variance");
    }
    stats.mean[c] = mu;
    stats.stddev[c] = sd;
  }
  return stats;
}

void apply_channel_stats(const ChannelStats& stats, SignalRecord& record) {
  if (stats.mean.size() != record.channels) throw DimensionError("apply_channel_stats: channel count mismatch");
  for (std::size_t c = 0; c < record.channels; ++c) {
    double* x = record.channel(c);
    for (std::size_t i = 0; i < record.length(); ++i) x[i] = (x[i] - stats.mean[c]) / stats.stddev[c];
  }
}

std::vector<SignalRecord> normalize_per_subject(const std::vector<SignalRecord>& records,
                                                const std::string& subject_id) {
  std::map<Modality, std::vector<const SignalRecord*>> by_modality;
  for (const auto& r : records) {
    if (r.subject_id == subject_id) by_modality[r.modality].push_back(&r);
  }
  if (by_modality.empty()) throw ContractError("normalize_per_subject: no records for subject " + subject_id);
  std::map<Modality, ChannelStats> stats;
  for (const auto& [m, rs] : by_modality) stats[m] = compute_channel_stats(rs);
  std::vector<SignalRecord> out;
  for (const auto& r : records) {
    if (r.subject_id != subject_id) continue;
    SignalRecord n = r;
    apply_channel_stats(stats.at(r.modality), n);
    out.push_back(std::move(n));
  }
  return out;
}

std::vector<SignalSegment> segment(const SignalRecord& signal, double window_seconds, double required_rate) {
  if (std::abs(signal.sample_rate - required_rate) > 1e-9) {
    throw ContractError("segment: signal must be sampled at " + std::to_string(required_rate) + " Hz, got " +
                        std::to_string(signal.sample_rate));
  }
  const auto window = static_cast<std::size_t>(std::llround(window_seconds * signal.sample_rate));
  if (window == 0) throw ContractError("segment: window is shorter than one sample");
  const std::size_t n = signal.length();
  std::vector<SignalSegment> out;
  for (std::size_t w = 0; (w + 1) * window <= n; ++w) {
    SignalSegment s;
    s.subject_id = signal.subject_id;
    s.trial_id = signal.trial_id;
    s.modality = signal.modality;
    s.window = w;
    s.channels = signal.channels;
    s.length = window;
    s.samples.resize(window * signal.channels);
    for (std::size_t c = 0; c < signal.channels; ++c) {
      std::copy_n(signal.channel(c) + w * window, window, s.samples.data() + c * window);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::optional<FilterSpec> filter_preset(std::string_view name) {
  if (name == "amigos-ecg") return FilterSpec{FilterKind::kLowpass, 0.0, 60.0, 8};
  if (name == "amigos-eeg") return FilterSpec{FilterKind::kBandpass, 0.8, 50.0, 8};
  if (name == "amigos-eeg-alt") return FilterSpec{FilterKind::kBandpass, 4.0, 45.0, 8};
  if (name == "none") return std::nullopt;
  throw ConfigError("unknown filter preset '" + std::string(name) + "'");
}

std::vector<std::string> filter_preset_names() { return {"amigos-ecg", "amigos-eeg", "amigos-eeg-alt", "none"}; }

}  // namespace physiofuse
