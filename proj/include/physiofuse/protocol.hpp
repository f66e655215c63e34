#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "physiofuse/config.hpp"
#include "physiofuse/metrics.hpp"

namespace physiofuse {

/// Tensors for the segments listed in `ids`; labels come from `target` when given.
template <typename T>
std::vector<Sample<T>> make_samples(const std::vector<SegmentRecord>& segments, const std::vector<std::size_t>& ids,
                                    Modality modality, std::optional<Target> target);
template <typename T>
std::vector<PairSample<T>> make_pairs(const std::vector<SegmentRecord>& segments, const std::vector<std::size_t>& ids,
                                      Target target);

/// Keeps the ids that carry a label for `target`, then a seeded subset of
/// ⌈fraction · n⌉ of them (at least one), returned sorted.
std::vector<std::size_t> labeled_subset(const std::vector<SegmentRecord>& segments, const std::vector<std::size_t>& ids,
                                        Target target, double fraction, std::uint64_t seed);

struct ProtocolOptions {
  std::size_t jobs = 1;
  /// When set, checkpoints land in <dir>/fold<k>/.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(const std::string&)> progress;
};

struct ProtocolResult {
  RunReport report;
  RunLog log;
  /// Number of batch checks the leakage guards performed.
  std::size_t leakage_checks = 0;
};

/// Per fold: fold-local normalization, optional masked-value pre-training on the
/// fold's train and validation segments, fine-tuning of each modality per
/// target, fusion training, and test evaluation. Errors are rethrown with the
/// fold index prefixed to the message.
template <typename T>
ProtocolResult run_cross_validation(const PreparedDataset& data, const RunConfig& config,
                                    const ProtocolOptions& options = {});

/// Loads, preprocesses and runs the protocol at the configured precision.
ProtocolResult run_cross_validation(const Manifest& manifest, const RunConfig& config,
                                    const ProtocolOptions& options = {});

/// Seeds used by the protocol; exposed so single-phase commands reproduce them.
std::uint64_t init_seed(const RunConfig& config, std::size_t fold, Modality m);
std::uint64_t phase_seed(const RunConfig& config, Phase phase, std::size_t fold, Modality m, std::optional<Target> t);

/// Rethrows the active exception with "fold k: " prefixed, preserving its type.
[[noreturn]] void rethrow_with_fold(std::exception_ptr error, std::size_t fold);

}  // namespace physiofuse
