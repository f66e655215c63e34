#include "physiofuse/optim.hpp"

#include <cmath>

namespace physiofuse {

template <typename T>
Adam<T>::Adam(AdamConfig config, NamedParameters<T> params) : config_(config), params_(std::move(params)) {
  for (const auto& [name, p] : params_) {
    first_moment_.emplace_back(p.numel(), T(0));
    second_moment_.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  for (const auto& [name, p] : params_) {
    if (!p.has_grad()) throw ContractError("adam_step: parameter '" + name + "' has no gradient");
  }
  double clip = 1.0;
  if (clip_norm_ > 0.0) {
    double sq = 0.0;
    for (const auto& [name, p] : params_)
      for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (norm > clip_norm_) clip = clip_norm_ / norm;
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<T>& p = params_[i].second;
    auto theta = p.mutable_data();
    const auto grad = p.grad();
    auto& m = first_moment_[i];
    auto& v = second_moment_[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = static_cast<double>(grad[j]) * clip + config_.l2_decay * static_cast<double>(theta[j]);
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * g;
      const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double m_hat = mj / c1;
      const double v_hat = vj / c2;
      theta[j] = static_cast<T>(static_cast<double>(theta[j]) - lr * m_hat / (std::sqrt(v_hat) + config_.epsilon));
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

template <typename T>
std::vector<std::string> Adam<T>::state_names() const {
  std::vector<std::string> names;
  for (const auto& [name, p] : params_) names.push_back(name);
  return names;
}

double lr_at(const LrSchedule& schedule, std::size_t epoch) {
  if (const auto* w = std::get_if<WarmupLinearDecay>(&schedule)) {
    const double e = static_cast<double>(epoch);
    if (epoch >= w->total_epochs) return 0.0;
    if (w->warmup_epochs > 0 && epoch <= w->warmup_epochs) {
      return w->peak * e / static_cast<double>(w->warmup_epochs);
    }
    const double span = static_cast<double>(w->total_epochs - w->warmup_epochs);
    return w->peak * (static_cast<double>(w->total_epochs) - e) / span;
  }
  const auto& s = std::get<StepDecay>(schedule);
  const std::size_t period = s.period_epochs == 0 ? 1 : s.period_epochs;
  return s.initial * std::pow(s.factor, static_cast<double>(epoch / period));
}

template class Adam<float>;
template class Adam<double>;

}  // namespace physiofuse
