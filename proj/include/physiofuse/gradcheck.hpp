#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "physiofuse/model.hpp"

namespace physiofuse {

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error() const;
};

struct GradcheckOptions {
  double step = 1e-5;
  /// Coordinates probed per input tensor; larger tensors are subsampled.
  std::size_t max_coordinates = 48;
  std::uint64_t seed = 7;
};

/// |a − n| / max(|a|, |n|, 1e-6)
double relative_error(double analytic, double numeric);

/// Central-difference check of `loss()` against reverse mode for every tensor
/// in `inputs`; `loss` must rebuild the graph from the current input values.
GradcheckEntry check_gradient(const std::string& name, const std::function<Tensor<double>()>& loss,
                              const std::vector<Tensor<double>>& inputs, const GradcheckOptions& options = {});

/// Small architecture that keeps the full-model checks fast.
ModelConfig tiny_model_config(Modality m);

/// Every op, every layer, both single-modality forwards and the fusion head, in 64-bit.
GradcheckReport run_gradcheck_suite(const ModelConfig& ecg, const ModelConfig& eeg, std::size_t length,
                                    const GradcheckOptions& options = {});

}  // namespace physiofuse
