#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace stlt {

// Decay stability floor: effective sigma = softplus(sigma_raw) + kEpsSigma.
inline constexpr double kEpsSigma = 1e-4;
// Window bandwidth floor in units of delta: T = softplus(t_raw) + kTMinScale*delta.
inline constexpr double kTMinScale = 1.0;
// Window support radius W = ceil(c_w * T / delta).
inline constexpr double kWindowSupportScale = 1.0;

double softplus(double x);
// Inverse of softplus; requires y > 0.
double inv_softplus(double y);
double sigmoid(double x);

// Bank of learnable complex decay nodes s_k = sigma_k + j*omega_k together
// with the window bandwidth T. sigma and T are stored pre-softplus so the
// optimizer stays unconstrained while the effective values respect floors.
struct LaplaceNodeBank {
  std::vector<double> sigma_raw;
  std::vector<double> omega;  // rad per step
  double t_raw = 0.0;
  double delta = 1.0;  // sample interval

  std::size_t s_max() const { return sigma_raw.size(); }
  double t_min() const { return kTMinScale * delta; }
};

struct EffectiveParams {
  std::vector<double> sigma;  // softplus(sigma_raw) + kEpsSigma, all > kEpsSigma
  std::vector<double> omega;
  double t = 0.0;  // softplus(t_raw) + t_min, always > t_min
};

EffectiveParams effective_params(const LaplaceNodeBank& bank);

// Effective sigmas log-spaced over [sigma_min, sigma_max], omegas uniform over
// [0, omega_max], effective T equal to t_init. Throws std::invalid_argument on
// a degenerate sigma range or on targets below the stability floors.
LaplaceNodeBank init_bank(std::size_t s_max, double sigma_min, double sigma_max,
                          double omega_max, double t_init, double delta,
                          std::uint64_t seed);

// ln(2) / sigma_k per node, using effective sigma.
std::vector<double> half_lives(const LaplaceNodeBank& bank);

enum class WindowKind { hann, rectangular, exponential_only };

struct WindowSpec {
  WindowKind kind = WindowKind::exponential_only;
  double support_scale = kWindowSupportScale;
};

// Support radius in steps for finite windows; exponential_only reports 0
// (unbounded support, weight 1 everywhere).
int window_support(const WindowSpec& spec, double t_eff, double delta);

// w(t; T). Symmetric, non-negative, zero outside [-W*delta, W*delta] for the
// finite-support kinds.
double window_eval(const WindowSpec& spec, double t, double t_eff, double delta);

}  // namespace stlt
