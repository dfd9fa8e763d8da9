#pragma once

#include <cmath>
#include <numbers>
#include <optional>

#include "lorafed/adapter.hpp"
#include "lorafed/error.hpp"

namespace lorafed {

enum class OptimizerKind { kSgd, kAdamW };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdamW;
  double lr = 2e-5;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool cosine_schedule = true;
  std::size_t total_steps = 0;  // cosine horizon; 0 disables the schedule
};

/// Per-client optimizer state. `schedule_step` positions the cosine schedule
/// and may start at an offset; `updates` counts steps since the moments were
/// reset and drives Adam's bias correction.
struct OptState {
  std::size_t schedule_step = 0;
  std::size_t updates = 0;
  std::optional<AdapterSet> first_moment;
  std::optional<AdapterSet> second_moment;
};

/// eta_t = eta_0 * (1 + cos(pi * t / T)) / 2, clamped at the horizon.
inline double scheduled_lr(const OptimizerConfig& cfg, std::size_t step) {
  if (!cfg.cosine_schedule || cfg.total_steps == 0) return cfg.lr;
  const double t = std::min<double>(static_cast<double>(step), static_cast<double>(cfg.total_steps));
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t / static_cast<double>(cfg.total_steps)));
}

/// One optimizer update of `params` in place. Weight decay is decoupled from
/// the gradient for both SGD and AdamW.
inline void local_step(AdapterSet& params, const AdapterSet& grads, OptState& state, const OptimizerConfig& cfg) {
  require_congruent(params, grads, "local_step");
  if (cfg.lr < 0.0 || cfg.weight_decay < 0.0) fail(ErrorCode::kInvalidArgument, "local_step: negative lr or decay");
  const double lr = scheduled_lr(cfg, state.schedule_step);
  ++state.schedule_step;
  ++state.updates;

  if (cfg.kind == OptimizerKind::kSgd) {
    if (lr == 0.0) return;
    zip_parameters(params, grads, [&](Tensor& p, const Tensor& g) {
      auto pv = p.data();
      auto gv = g.data();
      for (std::size_t i = 0; i < pv.size(); ++i) pv[i] -= lr * (gv[i] + cfg.weight_decay * pv[i]);
    });
    return;
  }

  if (!state.first_moment) {
    state.first_moment = zeros_like(params);
    state.second_moment = zeros_like(params);
  }
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.updates));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.updates));
  auto p = parameter_view(params);
  auto g = parameter_view(grads);
  auto m = parameter_view(*state.first_moment);
  auto v = parameter_view(*state.second_moment);
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto pv = p[k].second->data();
    auto gv = g[k].second->data();
    auto mv = m[k].second->data();
    auto vv = v[k].second->data();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      mv[i] = b1 * mv[i] + (1.0 - b1) * gv[i];
      vv[i] = b2 * vv[i] + (1.0 - b2) * gv[i] * gv[i];
      if (lr == 0.0) continue;
      const double mhat = mv[i] / c1;
      const double vhat = vv[i] / c2;
      pv[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * pv[i]);
    }
  }
}

}  // namespace lorafed
