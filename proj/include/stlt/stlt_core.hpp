#pragma once

#include <cstddef>
#include <vector>

#include "stlt/node_bank.hpp"

namespace stlt {

struct SequenceTensor {
  std::size_t n = 0, d = 0;
  std::vector<double> v;  // row-major n x d

  SequenceTensor() = default;
  SequenceTensor(std::size_t n_, std::size_t d_, double fill = 0.0)
      : n(n_), d(d_), v(n_ * d_, fill) {}

  double& at(std::size_t i, std::size_t j) { return v[i * d + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * d + j]; }
};

// Complex coefficients L[n][k][i] stored as explicit (re, im) planes.
struct StltCoefficients {
  std::size_t n = 0, s = 0, d = 0;
  std::vector<double> re, im;

  StltCoefficients() = default;
  StltCoefficients(std::size_t n_, std::size_t s_, std::size_t d_)
      : n(n_), s(s_), d(d_), re(n_ * s_ * d_, 0.0), im(n_ * s_ * d_, 0.0) {}

  std::size_t idx(std::size_t pos, std::size_t k, std::size_t i) const {
    return (pos * s + k) * d + i;
  }
};

enum class StltMode { bilateral, unilateral };

// Windowed direct summation with relative-lag weighting: the term at lag
// delta = |m - n| carries w(delta*dt; T) * exp(-s_k*delta*dt). Unilateral
// restricts to m <= n. O(N*S*W*d) for finite-support windows. Throws
// std::overflow_error if any coefficient comes out non-finite.
StltCoefficients stlt_direct(const SequenceTensor& x, const LaplaceNodeBank& bank,
                             const WindowSpec& spec, StltMode mode);

// Streaming exponential recurrences (pure exponential weighting, i.e. the
// exponential_only window): causal pass F_n = x_n + r_k F_{n-1} with
// r_k = exp(-s_k*dt); anticausal pass G_n = r_k (x_{n+1} + G_{n+1}).
// Bilateral returns F + G, unilateral returns F. O(N*S*d) time, O(S*d)
// recurrence state.
StltCoefficients stlt_streaming(const SequenceTensor& x, const LaplaceNodeBank& bank,
                                StltMode mode);

// Effective-parameter entry points shared with the autodiff wrappers.
// `causal_part` / `anticausal_part`, when non-null, capture the F and G
// partial sums the backward sweep needs.
void stlt_streaming_eff(const double* x, std::size_t n, std::size_t d,
                        const std::vector<double>& sigma_eff,
                        const std::vector<double>& omega, double delta,
                        StltMode mode, StltCoefficients* out,
                        StltCoefficients* causal_part,
                        StltCoefficients* anticausal_part);

void stlt_direct_eff(const double* x, std::size_t n, std::size_t d,
                     const std::vector<double>& sigma_eff,
                     const std::vector<double>& omega, double t_eff,
                     const WindowSpec& spec, double delta, StltMode mode,
                     StltCoefficients* out);

}  // namespace stlt
