#pragma once

#include <vector>

#include "stlt/mixer.hpp"

namespace stlt {

// Decoupled-weight-decay Adam with bias correction. Moments are stored in
// parameter-registry order.
struct AdamW {
  double beta1 = 0.9, beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.01;
  long t = 0;
  std::vector<std::vector<double>> m, v;

  void ensure(const std::vector<ParamSlot>& slots);
};

// Single-tensor update (t is the already-incremented step index).
void adamw_update(double* param, const double* grad, std::size_t n,
                  std::vector<double>& m, std::vector<double>& v, long t,
                  double lr, double beta1, double beta2, double eps,
                  double weight_decay);

// One full step over the registry. Laplace parameters get lr * laplace_lr_scale
// and no weight decay; frozen slots are skipped. Throws std::runtime_error on
// a non-finite gradient.
void adamw_step(std::vector<ParamSlot>& slots,
                const std::vector<std::vector<double>>& grads, AdamW& state,
                double lr, double laplace_lr_scale);

// Linear warmup to lr_peak, then inverse-square-root decay.
double lr_schedule(long step, long warmup, double lr_peak);

// Global L2 norm; scales grads in place to `clip` when exceeded. Returns the
// pre-clip norm.
double clip_global_norm(std::vector<std::vector<double>>& grads, double clip);

}  // namespace stlt
