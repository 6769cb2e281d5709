#include "stlt/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace stlt {

void AdamW::ensure(const std::vector<ParamSlot>& slots) {
  if (m.size() == slots.size()) return;
  m.resize(slots.size());
  v.resize(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    m[i].assign(slots[i].size(), 0.0);
    v[i].assign(slots[i].size(), 0.0);
  }
}

void adamw_update(double* param, const double* grad, std::size_t n,
                  std::vector<double>& m, std::vector<double>& v, long t,
                  double lr, double beta1, double beta2, double eps,
                  double weight_decay) {
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    param[i] -= lr * weight_decay * param[i];
  }
}

void adamw_step(std::vector<ParamSlot>& slots,
                const std::vector<std::vector<double>>& grads, AdamW& state,
                double lr, double laplace_lr_scale) {
  if (grads.size() != slots.size())
    throw std::invalid_argument("adamw_step: grads/slots size mismatch");
  state.ensure(slots);
  ++state.t;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    ParamSlot& s = slots[i];
    if (!s.trainable) continue;
    for (double g : grads[i])
      if (!std::isfinite(g))
        throw std::runtime_error("adamw_step: non-finite gradient for " + s.name);
    const double lr_eff = s.laplace ? lr * laplace_lr_scale : lr;
    const double wd = s.laplace ? 0.0 : state.weight_decay;
    adamw_update(s.data, grads[i].data(), s.size(), state.m[i], state.v[i],
                 state.t, lr_eff, state.beta1, state.beta2, state.eps, wd);
  }
}

double lr_schedule(long step, long warmup, double lr_peak) {
  if (warmup < 1) throw std::invalid_argument("lr_schedule: warmup must be >= 1");
  if (step <= 0) return 0.0;
  if (step <= warmup)
    return lr_peak * static_cast<double>(step) / static_cast<double>(warmup);
  return lr_peak * std::sqrt(static_cast<double>(warmup) / static_cast<double>(step));
}

double clip_global_norm(std::vector<std::vector<double>>& grads, double clip) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double e : g) sq += e * e;
  const double norm = std::sqrt(sq);
  if (clip > 0.0 && norm > clip) {
    const double scale = clip / norm;
    for (auto& g : grads)
      for (double& e : g) e *= scale;
  }
  return norm;
}

}  // namespace stlt
