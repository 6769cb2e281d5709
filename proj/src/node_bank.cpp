#include "stlt/node_bank.hpp"

#include <cmath>
#include <stdexcept>

#include "stlt/rng.hpp"

namespace stlt {

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double inv_softplus(double y) {
  if (y <= 0.0) throw std::invalid_argument("inv_softplus requires y > 0");
  if (y > 30.0) return y;  // exp(-30) below double noise for the correction
  return std::log(std::expm1(y));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

EffectiveParams effective_params(const LaplaceNodeBank& bank) {
  EffectiveParams out;
  out.sigma.resize(bank.s_max());
  for (std::size_t k = 0; k < bank.s_max(); ++k)
    out.sigma[k] = softplus(bank.sigma_raw[k]) + kEpsSigma;
  out.omega = bank.omega;
  out.t = softplus(bank.t_raw) + bank.t_min();
  return out;
}

LaplaceNodeBank init_bank(std::size_t s_max, double sigma_min, double sigma_max,
                          double omega_max, double t_init, double delta,
                          std::uint64_t seed) {
  if (s_max < 1) throw std::invalid_argument("init_bank: s_max must be >= 1");
  if (delta <= 0.0) throw std::invalid_argument("init_bank: delta must be > 0");
  if (sigma_min <= 0.0 || sigma_min >= sigma_max)
    throw std::invalid_argument("init_bank: need 0 < sigma_min < sigma_max");
  if (sigma_min <= kEpsSigma)
    throw std::invalid_argument("init_bank: sigma_min must exceed the stability floor");
  if (omega_max < 0.0) throw std::invalid_argument("init_bank: omega_max must be >= 0");
  if (t_init <= kTMinScale * delta)
    throw std::invalid_argument("init_bank: t_init must exceed the T floor");

  LaplaceNodeBank bank;
  bank.delta = delta;
  bank.sigma_raw.resize(s_max);
  bank.omega.resize(s_max);

  const double lo = std::log(sigma_min), hi = std::log(sigma_max);
  for (std::size_t k = 0; k < s_max; ++k) {
    const double f = s_max == 1 ? 0.0 : static_cast<double>(k) / (s_max - 1);
    const double sigma = std::exp(lo + f * (hi - lo));
    bank.sigma_raw[k] = inv_softplus(sigma - kEpsSigma);
  }
  Rng rng(substream(seed, 0x6f6d6567));
  for (std::size_t k = 0; k < s_max; ++k) bank.omega[k] = rng.uniform(0.0, omega_max);
  bank.t_raw = inv_softplus(t_init - kTMinScale * delta);
  return bank;
}

std::vector<double> half_lives(const LaplaceNodeBank& bank) {
  const EffectiveParams eff = effective_params(bank);
  std::vector<double> out(eff.sigma.size());
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = std::log(2.0) / eff.sigma[k];
  return out;
}

int window_support(const WindowSpec& spec, double t_eff, double delta) {
  if (spec.kind == WindowKind::exponential_only) return 0;
  const int w = static_cast<int>(std::ceil(spec.support_scale * t_eff / delta));
  return w < 1 ? 1 : w;
}

double window_eval(const WindowSpec& spec, double t, double t_eff, double delta) {
  if (t_eff <= 0.0) throw std::invalid_argument("window_eval requires T > 0");
  if (spec.kind == WindowKind::exponential_only) return 1.0;
  const double half = window_support(spec, t_eff, delta) * delta;
  const double a = std::fabs(t);
  if (a > half) return 0.0;
  if (spec.kind == WindowKind::rectangular) return 1.0;
  return 0.5 * (1.0 + std::cos(3.141592653589793 * t / half));
}

}  // namespace stlt
