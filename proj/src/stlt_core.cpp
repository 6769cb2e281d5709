#include "stlt/stlt_core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stlt {

namespace {

void check_input(const SequenceTensor& x, const LaplaceNodeBank& bank) {
  if (x.n < 1 || x.d < 1) throw std::invalid_argument("stlt: empty sequence");
  if (bank.s_max() < 1) throw std::invalid_argument("stlt: empty node bank");
  for (double e : x.v)
    if (!std::isfinite(e)) throw std::invalid_argument("stlt: non-finite input");
}

void check_finite(const StltCoefficients& c) {
  for (double e : c.re)
    if (!std::isfinite(e)) throw std::overflow_error("stlt: non-finite coefficient");
  for (double e : c.im)
    if (!std::isfinite(e)) throw std::overflow_error("stlt: non-finite coefficient");
}

}  // namespace

void stlt_streaming_eff(const double* x, std::size_t n, std::size_t d,
                        const std::vector<double>& sigma_eff,
                        const std::vector<double>& omega, double delta,
                        StltMode mode, StltCoefficients* out,
                        StltCoefficients* causal_part,
                        StltCoefficients* anticausal_part) {
  const std::size_t s = sigma_eff.size();
  *out = StltCoefficients(n, s, d);
  if (causal_part) *causal_part = StltCoefficients(n, s, d);
  if (anticausal_part) *anticausal_part = StltCoefficients(n, s, d);

  std::vector<double> fr(d), fi(d);
  for (std::size_t k = 0; k < s; ++k) {
    const double decay = std::exp(-sigma_eff[k] * delta);
    const double a = decay * std::cos(omega[k] * delta);
    const double b = -decay * std::sin(omega[k] * delta);

    std::fill(fr.begin(), fr.end(), 0.0);
    std::fill(fi.begin(), fi.end(), 0.0);
    for (std::size_t pos = 0; pos < n; ++pos) {
      const double* xr = x + pos * d;
      const std::size_t base = out->idx(pos, k, 0);
      for (std::size_t i = 0; i < d; ++i) {
        const double nr = xr[i] + a * fr[i] - b * fi[i];
        const double ni = b * fr[i] + a * fi[i];
        fr[i] = nr;
        fi[i] = ni;
        out->re[base + i] = nr;
        out->im[base + i] = ni;
        if (causal_part) {
          causal_part->re[base + i] = nr;
          causal_part->im[base + i] = ni;
        }
      }
    }

    if (mode == StltMode::bilateral && n >= 2) {
      std::fill(fr.begin(), fr.end(), 0.0);
      std::fill(fi.begin(), fi.end(), 0.0);
      for (std::size_t pos = n - 1; pos-- > 0;) {
        const double* xr = x + (pos + 1) * d;
        const std::size_t base = out->idx(pos, k, 0);
        for (std::size_t i = 0; i < d; ++i) {
          const double hr = xr[i] + fr[i];
          const double hi = fi[i];
          fr[i] = a * hr - b * hi;
          fi[i] = b * hr + a * hi;
          out->re[base + i] += fr[i];
          out->im[base + i] += fi[i];
          if (anticausal_part) {
            anticausal_part->re[base + i] = fr[i];
            anticausal_part->im[base + i] = fi[i];
          }
        }
      }
    }
  }
}

void stlt_direct_eff(const double* x, std::size_t n, std::size_t d,
                     const std::vector<double>& sigma_eff,
                     const std::vector<double>& omega, double t_eff,
                     const WindowSpec& spec, double delta, StltMode mode,
                     StltCoefficients* out) {
  const std::size_t s = sigma_eff.size();
  *out = StltCoefficients(n, s, d);

  std::size_t max_lag = n - 1;
  if (spec.kind != WindowKind::exponential_only) {
    const std::size_t w = static_cast<std::size_t>(window_support(spec, t_eff, delta));
    max_lag = std::min(max_lag, w);
  }

  // Per-node lag tables: cw = w(lag)*E*cos(theta), sw = -w(lag)*E*sin(theta)
  // with E = exp(-sigma*lag*dt), theta = omega*lag*dt.
  std::vector<double> cw(max_lag + 1), sw(max_lag + 1);
  for (std::size_t k = 0; k < s; ++k) {
    for (std::size_t lag = 0; lag <= max_lag; ++lag) {
      const double t = static_cast<double>(lag) * delta;
      const double wgt = window_eval(spec, t, t_eff, delta);
      const double e = std::exp(-sigma_eff[k] * t);
      cw[lag] = wgt * e * std::cos(omega[k] * t);
      sw[lag] = -wgt * e * std::sin(omega[k] * t);
    }
    for (std::size_t pos = 0; pos < n; ++pos) {
      const std::size_t base = out->idx(pos, k, 0);
      const std::size_t back = std::min(max_lag, pos);
      for (std::size_t lag = 0; lag <= back; ++lag) {
        const double* xr = x + (pos - lag) * d;
        for (std::size_t i = 0; i < d; ++i) {
          out->re[base + i] += xr[i] * cw[lag];
          out->im[base + i] += xr[i] * sw[lag];
        }
      }
      if (mode == StltMode::bilateral) {
        const std::size_t fwd = std::min(max_lag, n - 1 - pos);
        for (std::size_t lag = 1; lag <= fwd; ++lag) {
          const double* xr = x + (pos + lag) * d;
          for (std::size_t i = 0; i < d; ++i) {
            out->re[base + i] += xr[i] * cw[lag];
            out->im[base + i] += xr[i] * sw[lag];
          }
        }
      }
    }
  }
}

StltCoefficients stlt_direct(const SequenceTensor& x, const LaplaceNodeBank& bank,
                             const WindowSpec& spec, StltMode mode) {
  check_input(x, bank);
  const EffectiveParams eff = effective_params(bank);
  StltCoefficients out;
  stlt_direct_eff(x.v.data(), x.n, x.d, eff.sigma, eff.omega, eff.t, spec,
                  bank.delta, mode, &out);
  check_finite(out);
  return out;
}

StltCoefficients stlt_streaming(const SequenceTensor& x, const LaplaceNodeBank& bank,
                                StltMode mode) {
  check_input(x, bank);
  const EffectiveParams eff = effective_params(bank);
  StltCoefficients out;
  stlt_streaming_eff(x.v.data(), x.n, x.d, eff.sigma, eff.omega, bank.delta, mode,
                     &out, nullptr, nullptr);
  return out;
}

}  // namespace stlt
