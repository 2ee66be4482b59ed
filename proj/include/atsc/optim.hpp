#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "atsc/layers.hpp"
#include "atsc/tensor.hpp"

namespace atsc {

struct OptimConfig {
  double base_lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<int> milestones{150, 180, 210};
  double decay_factor = 0.1;
  int epochs = 240;
  int batch_size = 64;

  void validate() const {
    if (!(base_lr > 0.0)) throw ConfigError("optim.lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optim.momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be >= 0");
    if (!(decay_factor > 0.0)) throw ConfigError("optim.decay_factor must be positive");
    if (epochs <= 0) throw ConfigError("optim.epochs must be positive");
    if (batch_size <= 0) throw ConfigError("optim.batch_size must be positive");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      if (milestones[i] < 0 || milestones[i] >= epochs)
        throw ConfigError("optim.milestones must lie in [0, epochs)");
      if (i > 0 && milestones[i] <= milestones[i - 1]) throw ConfigError("optim.milestones must be strictly increasing");
    }
  }
};

/// Step schedule: base_lr * decay_factor^(number of milestones <= epoch).
inline double lr_at(int epoch, const OptimConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw ContractViolation("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) +
                            ")");
  int k = 0;
  for (int m : cfg.milestones) k += m <= epoch;
  const double inv = 1.0 / cfg.decay_factor;
  if (inv == std::round(inv) && inv >= 1.0) return cfg.base_lr / std::pow(inv, k);
  return cfg.base_lr * std::pow(cfg.decay_factor, k);
}

/// SGD with Nesterov momentum over one fixed parameter group.
///
/// Momentum buffers are positional: every call must pass the same group in the same order.
/// Weight decay reaches only parameters flagged `decay`.
template <class S>
class Sgd {
 public:
  Sgd() = default;
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<Param<S>*>& group, double lr) {
    if (buffers_.empty()) {
      buffers_.reserve(group.size());
      for (const auto* p : group) buffers_.emplace_back(p->value.size(), S(0));
    } else if (buffers_.size() != group.size()) {
      throw ContractViolation("optimizer group changed size between steps");
    }
    const S m = static_cast<S>(momentum_);
    const S l = static_cast<S>(lr);
    for (std::size_t gi = 0; gi < group.size(); ++gi) {
      auto* p = group[gi];
      auto& buf = buffers_[gi];
      if (buf.size() != p->value.size()) throw ContractViolation("optimizer group changed shape between steps");
      const S wd = p->decay ? static_cast<S>(weight_decay_) : S(0);
      for (std::size_t i = 0; i < buf.size(); ++i) {
        const S d = p->grad[i] + wd * p->value[i];
        buf[i] = m * buf[i] + d;
        p->value[i] -= l * (d + m * buf[i]);
      }
    }
  }

  bool initialized() const noexcept { return !buffers_.empty(); }
  const std::vector<std::vector<S>>& buffers() const noexcept { return buffers_; }

 private:
  double momentum_ = 0.9;
  double weight_decay_ = 0.0;
  std::vector<std::vector<S>> buffers_;
};

}  // namespace atsc
