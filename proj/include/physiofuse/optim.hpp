#pragma once

#include <string>
#include <variant>
#include <vector>

#include "physiofuse/layers.hpp"

namespace physiofuse {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Coupled L2: added to the gradient as l2_decay · θ before the moment update.
  double l2_decay = 0.0;
};

/// Adam over a fixed parameter set. Moment buffers exist only for the
/// parameters handed to the constructor.
template <typename T>
class Adam {
 public:
  Adam(AdamConfig config, NamedParameters<T> params);

  /// One update at learning rate `lr`. Every parameter must hold a gradient.
  void step(double lr);
  void zero_grad();
  /// Optional global-norm clipping applied inside step(); 0 disables it.
  void set_clip_norm(double max_norm) { clip_norm_ = max_norm; }

  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  std::vector<std::string> state_names() const;
  const NamedParameters<T>& parameters() const { return params_; }

 private:
  AdamConfig config_;
  NamedParameters<T> params_;
  std::vector<std::vector<T>> first_moment_;
  std::vector<std::vector<T>> second_moment_;
  std::size_t steps_ = 0;
  double clip_norm_ = 0.0;
};

template <typename T>
void adam_step(Adam<T>& optimizer, double lr) {
  optimizer.step(lr);
}

/// Linear ramp 0 → peak over [0, warmup_epochs], then linear decay to 0 at total_epochs.
struct WarmupLinearDecay {
  double peak = 5e-4;
  std::size_t warmup_epochs = 30;
  std::size_t total_epochs = 500;
};

/// initial · factor^⌊epoch / period⌋
struct StepDecay {
  double initial = 1e-4;
  double factor = 0.65;
  std::size_t period_epochs = 45;
};

using LrSchedule = std::variant<WarmupLinearDecay, StepDecay>;

double lr_at(const LrSchedule& schedule, std::size_t epoch);

}  // namespace physiofuse
