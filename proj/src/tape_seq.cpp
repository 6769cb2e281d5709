#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "stlt/tape.hpp"

// Backward rules for the sequence-mixer ops. The streaming recurrences get
// adjoint recurrences that run in the opposite scan direction; the direct
// windowed sum re-walks its lag tables.

namespace stlt {

namespace {

struct CoeffDims {
  std::size_t n, s, d;
  std::size_t plane;  // n*s*d
};

CoeffDims coeff_dims(const Tensor& t, const char* who) {
  if (t.shape.size() != 4 || t.dim(0) != 2)
    throw std::invalid_argument(std::string(who) + ": want coefficients of shape {2,n,s,d}");
  CoeffDims cd{t.dim(1), t.dim(2), t.dim(3), t.dim(1) * t.dim(2) * t.dim(3)};
  return cd;
}

Tensor coeffs_to_tensor(const StltCoefficients& c) {
  Tensor out({2, c.n, c.s, c.d}, 0.0);
  std::copy(c.re.begin(), c.re.end(), out.v.begin());
  std::copy(c.im.begin(), c.im.end(), out.v.begin() + c.re.size());
  return out;
}

}  // namespace

Tape::Id Tape::stlt_streaming(Id x, Id sigma_eff, Id omega, StltMode mode,
                              double delta) {
  const Tensor& tx = val(x);
  const Tensor& ts = val(sigma_eff);
  const Tensor& tw = val(omega);
  if (tx.shape.size() != 2 || ts.size() != tw.size())
    throw std::invalid_argument("Tape::stlt_streaming: shape mismatch");
  const std::size_t n = tx.dim(0), d = tx.dim(1), s = ts.size();

  StltCoefficients out, fpart, gpart;
  const bool bilateral = mode == StltMode::bilateral;
  stlt_streaming_eff(tx.v.data(), n, d, ts.v, tw.v, delta, mode, &out,
                     bilateral ? &fpart : nullptr, bilateral ? &gpart : nullptr);
  std::vector<double> fre, fim, gre, gim;
  if (bilateral) {
    fre = std::move(fpart.re);
    fim = std::move(fpart.im);
    gre = std::move(gpart.re);
    gim = std::move(gpart.im);
  }

  return push(
      coeffs_to_tensor(out), {x, sigma_eff, omega},
      [x, sigma_eff, omega, mode, delta, n, d, s, fre = std::move(fre),
       fim = std::move(fim), gre = std::move(gre),
       gim = std::move(gim)](Tape& t, Id self) {
        const Tensor& g = t.gval(self);
        const Tensor& tx = t.val(x);
        const Tensor& ts = t.val(sigma_eff);
        const Tensor& tw = t.val(omega);
        const Tensor& out = t.val(self);
        const std::size_t plane = n * s * d;
        Tensor* gx = t.gbuf(x);
        Tensor* gs = t.gbuf(sigma_eff);
        Tensor* gw = t.gbuf(omega);
        const bool bilateral = mode == StltMode::bilateral;
        // Unilateral output is the causal sum itself.
        const double* f_re = bilateral ? fre.data() : out.v.data();
        const double* f_im = bilateral ? fim.data() : out.v.data() + plane;

        std::vector<double> ur(d), ui(d);
        for (std::size_t k = 0; k < s; ++k) {
          const double decay = std::exp(-ts[k] * delta);
          const double a = decay * std::cos(tw[k] * delta);
          const double b = -decay * std::sin(tw[k] * delta);
          double da = 0.0, db = 0.0;

          // Causal adjoint: u_n = g_n + M^T u_{n+1}.
          std::fill(ur.begin(), ur.end(), 0.0);
          std::fill(ui.begin(), ui.end(), 0.0);
          for (std::size_t pos = n; pos-- > 0;) {
            const std::size_t base = (pos * s + k) * d;
            for (std::size_t i = 0; i < d; ++i) {
              const double nr = g[base + i] + a * ur[i] + b * ui[i];
              const double ni = g[plane + base + i] - b * ur[i] + a * ui[i];
              ur[i] = nr;
              ui[i] = ni;
              if (gx) (*gx)[pos * d + i] += nr;
              if (pos > 0) {
                const std::size_t prev = ((pos - 1) * s + k) * d + i;
                da += nr * f_re[prev] + ni * f_im[prev];
                db += -nr * f_im[prev] + ni * f_re[prev];
              }
            }
          }

          if (bilateral && n >= 2) {
            // Anticausal adjoint: v_n = g_n + M^T v_{n-1}, ascending.
            std::fill(ur.begin(), ur.end(), 0.0);
            std::fill(ui.begin(), ui.end(), 0.0);
            for (std::size_t pos = 0; pos + 1 < n; ++pos) {
              const std::size_t base = (pos * s + k) * d;
              for (std::size_t i = 0; i < d; ++i) {
                double vr = g[base + i];
                double vi = g[plane + base + i];
                if (pos > 0) {
                  vr += a * ur[i] + b * ui[i];
                  vi += -b * ur[i] + a * ui[i];
                }
                ur[i] = vr;
                ui[i] = vi;
                const std::size_t next = ((pos + 1) * s + k) * d + i;
                const double hr = tx[(pos + 1) * d + i] + gre[next];
                const double hi = gim[next];
                if (gx) (*gx)[(pos + 1) * d + i] += a * vr + b * vi;
                da += vr * hr + vi * hi;
                db += -vr * hi + vi * hr;
              }
            }
          }

          if (gs) (*gs)[k] += da * (-delta * a) + db * (-delta * b);
          if (gw) (*gw)[k] += da * (delta * b) + db * (-delta * a);
        }
      });
}

Tape::Id Tape::stlt_direct(Id x, Id sigma_eff, Id omega, double t_eff,
                           WindowSpec spec, StltMode mode, double delta) {
  const Tensor& tx = val(x);
  const Tensor& ts = val(sigma_eff);
  const Tensor& tw = val(omega);
  if (tx.shape.size() != 2 || ts.size() != tw.size())
    throw std::invalid_argument("Tape::stlt_direct: shape mismatch");
  const std::size_t n = tx.dim(0), d = tx.dim(1), s = ts.size();

  StltCoefficients out;
  stlt_direct_eff(tx.v.data(), n, d, ts.v, tw.v, t_eff, spec, delta, mode, &out);

  std::size_t max_lag = n - 1;
  if (spec.kind != WindowKind::exponential_only)
    max_lag = std::min(max_lag,
                       static_cast<std::size_t>(window_support(spec, t_eff, delta)));

  return push(
      coeffs_to_tensor(out), {x, sigma_eff, omega},
      [x, sigma_eff, omega, t_eff, spec, mode, delta, n, d, s,
       max_lag](Tape& t, Id self) {
        const Tensor& g = t.gval(self);
        const Tensor& tx = t.val(x);
        const Tensor& ts = t.val(sigma_eff);
        const Tensor& tw = t.val(omega);
        const std::size_t plane = n * s * d;
        Tensor* gx = t.gbuf(x);
        Tensor* gs = t.gbuf(sigma_eff);
        Tensor* gw = t.gbuf(omega);

        std::vector<double> cw(max_lag + 1), sw(max_lag + 1), tt(max_lag + 1);
        for (std::size_t k = 0; k < s; ++k) {
          for (std::size_t lag = 0; lag <= max_lag; ++lag) {
            const double tv = static_cast<double>(lag) * delta;
            const double wgt = window_eval(spec, tv, t_eff, delta);
            const double e = std::exp(-ts[k] * tv);
            cw[lag] = wgt * e * std::cos(tw[k] * tv);
            sw[lag] = -wgt * e * std::sin(tw[k] * tv);
            tt[lag] = tv;
          }
          double dsig = 0.0, domg = 0.0;
          for (std::size_t pos = 0; pos < n; ++pos) {
            const std::size_t base = (pos * s + k) * d;
            const std::size_t back = std::min(max_lag, pos);
            for (std::size_t lag = 0; lag <= back; ++lag) {
              const std::size_t m = pos - lag;
              for (std::size_t i = 0; i < d; ++i) {
                const double gr = g[base + i];
                const double gi = g[plane + base + i];
                const double xv = tx[m * d + i];
                if (gx) (*gx)[m * d + i] += gr * cw[lag] + gi * sw[lag];
                dsig += xv * (-tt[lag]) * (gr * cw[lag] + gi * sw[lag]);
                domg += xv * tt[lag] * (gr * sw[lag] - gi * cw[lag]);
              }
            }
            if (mode == StltMode::bilateral) {
              const std::size_t fwd = std::min(max_lag, n - 1 - pos);
              for (std::size_t lag = 1; lag <= fwd; ++lag) {
                const std::size_t m = pos + lag;
                for (std::size_t i = 0; i < d; ++i) {
                  const double gr = g[base + i];
                  const double gi = g[plane + base + i];
                  const double xv = tx[m * d + i];
                  if (gx) (*gx)[m * d + i] += gr * cw[lag] + gi * sw[lag];
                  dsig += xv * (-tt[lag]) * (gr * cw[lag] + gi * sw[lag]);
                  domg += xv * tt[lag] * (gr * sw[lag] - gi * cw[lag]);
                }
              }
            }
          }
          if (gs) (*gs)[k] += dsig;
          if (gw) (*gw)[k] += domg;
        }
      });
}

Tape::Id Tape::apply_node_mask(Id coeffs, Id mask) {
  const Tensor& tc = val(coeffs);
  const Tensor& tm = val(mask);
  const CoeffDims cd = coeff_dims(tc, "Tape::apply_node_mask");
  if (tm.size() != cd.s)
    throw std::invalid_argument("Tape::apply_node_mask: node count mismatch");
  Tensor out = tc;
  for (std::size_t p = 0; p < 2; ++p)
    for (std::size_t pos = 0; pos < cd.n; ++pos)
      for (std::size_t k = 0; k < cd.s; ++k) {
        double* row = out.v.data() + p * cd.plane + (pos * cd.s + k) * cd.d;
        for (std::size_t i = 0; i < cd.d; ++i) row[i] *= tm[k];
      }
  return push(std::move(out), {coeffs, mask}, [coeffs, mask, cd](Tape& t, Id self) {
    const Tensor& g = t.gval(self);
    const Tensor& tc = t.val(coeffs);
    const Tensor& tm = t.val(mask);
    Tensor* gc = t.gbuf(coeffs);
    Tensor* gm = t.gbuf(mask);
    for (std::size_t p = 0; p < 2; ++p)
      for (std::size_t pos = 0; pos < cd.n; ++pos)
        for (std::size_t k = 0; k < cd.s; ++k) {
          const std::size_t base = p * cd.plane + (pos * cd.s + k) * cd.d;
          for (std::size_t i = 0; i < cd.d; ++i) {
            if (gc) (*gc)[base + i] += g[base + i] * tm[k];
            if (gm) (*gm)[k] += g[base + i] * tc[base + i];
          }
        }
  });
}

Tape::Id Tape::relevance(Id la, Id lb) {
  const Tensor& ta = val(la);
  const Tensor& tb = val(lb);
  const CoeffDims ca = coeff_dims(ta, "Tape::relevance");
  const CoeffDims cb = coeff_dims(tb, "Tape::relevance");
  if (ca.s != cb.s || ca.d != cb.d)
    throw std::invalid_argument("Tape::relevance: node/feature mismatch");
  const std::size_t len = ca.s * ca.d;
  Tensor out({ca.n, cb.n}, 0.0);
  for (std::size_t i = 0; i < ca.n; ++i) {
    const double* are = ta.v.data() + i * len;
    const double* aim = ta.v.data() + ca.plane + i * len;
    for (std::size_t j = 0; j < cb.n; ++j) {
      const double* bre = tb.v.data() + j * len;
      const double* bim = tb.v.data() + cb.plane + j * len;
      double acc = 0.0;
      for (std::size_t e = 0; e < len; ++e) acc += are[e] * bre[e] + aim[e] * bim[e];
      out[i * cb.n + j] = acc;
    }
  }
  return push(std::move(out), {la, lb}, [la, lb, ca, cb, len](Tape& t, Id self) {
    const Tensor& g = t.gval(self);
    const Tensor& ta = t.val(la);
    const Tensor& tb = t.val(lb);
    Tensor* ga = t.gbuf(la);
    Tensor* gb = t.gbuf(lb);
    for (std::size_t i = 0; i < ca.n; ++i)
      for (std::size_t j = 0; j < cb.n; ++j) {
        const double gv = g[i * cb.n + j];
        if (gv == 0.0) continue;
        if (ga) {
          double* gre = ga->v.data() + i * len;
          double* gim = ga->v.data() + ca.plane + i * len;
          const double* bre = tb.v.data() + j * len;
          const double* bim = tb.v.data() + cb.plane + j * len;
          for (std::size_t e = 0; e < len; ++e) {
            gre[e] += gv * bre[e];
            gim[e] += gv * bim[e];
          }
        }
        if (gb) {
          double* gre = gb->v.data() + j * len;
          double* gim = gb->v.data() + cb.plane + j * len;
          const double* are = ta.v.data() + i * len;
          const double* aim = ta.v.data() + ca.plane + i * len;
          for (std::size_t e = 0; e < len; ++e) {
            gre[e] += gv * are[e];
            gim[e] += gv * aim[e];
          }
        }
      }
  });
}

Tape::Id Tape::relevance_masked(Id la, Id lb, Id mask) {
  const Tensor& ta = val(la);
  const Tensor& tb = val(lb);
  const Tensor& tm = val(mask);
  const CoeffDims ca = coeff_dims(ta, "Tape::relevance_masked");
  const CoeffDims cb = coeff_dims(tb, "Tape::relevance_masked");
  if (ca.s != cb.s || ca.d != cb.d || tm.size() != ca.s)
    throw std::invalid_argument("Tape::relevance_masked: shape mismatch");
  auto dot_k = [&](std::size_t i, std::size_t j, std::size_t k) {
    const double* are = ta.v.data() + (i * ca.s + k) * ca.d;
    const double* aim = ta.v.data() + ca.plane + (i * ca.s + k) * ca.d;
    const double* bre = tb.v.data() + (j * cb.s + k) * cb.d;
    const double* bim = tb.v.data() + cb.plane + (j * cb.s + k) * cb.d;
    double acc = 0.0;
    for (std::size_t e = 0; e < ca.d; ++e) acc += are[e] * bre[e] + aim[e] * bim[e];
    return acc;
  };
  Tensor out({ca.n, cb.n}, 0.0);
  for (std::size_t i = 0; i < ca.n; ++i)
    for (std::size_t j = 0; j < cb.n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < ca.s; ++k) acc += tm[k] * tm[k] * dot_k(i, j, k);
      out[i * cb.n + j] = acc;
    }
  return push(std::move(out), {la, lb, mask},
              [la, lb, mask, ca, cb](Tape& t, Id self) {
                const Tensor& g = t.gval(self);
                const Tensor& ta = t.val(la);
                const Tensor& tb = t.val(lb);
                const Tensor& tm = t.val(mask);
                Tensor* ga = t.gbuf(la);
                Tensor* gb = t.gbuf(lb);
                Tensor* gm = t.gbuf(mask);
                for (std::size_t i = 0; i < ca.n; ++i)
                  for (std::size_t j = 0; j < cb.n; ++j) {
                    const double gv = g[i * cb.n + j];
                    if (gv == 0.0) continue;
                    for (std::size_t k = 0; k < ca.s; ++k) {
                      const double w = tm[k] * tm[k];
                      const std::size_t oa = (i * ca.s + k) * ca.d;
                      const std::size_t ob = (j * cb.s + k) * cb.d;
                      if (gm) {
                        double dot = 0.0;
                        for (std::size_t e = 0; e < ca.d; ++e)
                          dot += ta[oa + e] * tb[ob + e] +
                                 ta[ca.plane + oa + e] * tb[cb.plane + ob + e];
                        (*gm)[k] += gv * 2.0 * tm[k] * dot;
                      }
                      for (std::size_t e = 0; e < ca.d; ++e) {
                        if (ga) {
                          (*ga)[oa + e] += gv * w * tb[ob + e];
                          (*ga)[ca.plane + oa + e] += gv * w * tb[cb.plane + ob + e];
                        }
                        if (gb) {
                          (*gb)[ob + e] += gv * w * ta[oa + e];
                          (*gb)[cb.plane + ob + e] += gv * w * ta[ca.plane + oa + e];
                        }
                      }
                    }
                  }
              });
}

Tape::Id Tape::mix(Id r, Id values, double s_scale, bool causal) {
  const Tensor& tr = val(r);
  const Tensor& tv = val(values);
  if (tr.shape.size() != 2 || tv.shape.size() != 2 || tr.dim(1) != tv.dim(0))
    throw std::invalid_argument("Tape::mix: shape mismatch");
  if (causal && tr.dim(0) != tr.dim(1))
    throw std::invalid_argument("Tape::mix: causal mixing needs a square relevance");
  const std::size_t n = tr.dim(0), m = tr.dim(1), d = tv.dim(1);
  const double inv_scale = 1.0 / std::sqrt(s_scale);

  std::vector<double> probs(n * m, 0.0);
  Tensor out({n, d}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t limit = causal ? i + 1 : m;
    double zmax = -1e300;
    for (std::size_t j = 0; j < limit; ++j)
      zmax = std::max(zmax, tr[i * m + j] * inv_scale);
    double acc = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      const double e = std::exp(tr[i * m + j] * inv_scale - zmax);
      probs[i * m + j] = e;
      acc += e;
    }
    for (std::size_t j = 0; j < limit; ++j) {
      probs[i * m + j] /= acc;
      const double p = probs[i * m + j];
      const double* vrow = tv.v.data() + j * d;
      double* orow = out.v.data() + i * d;
      for (std::size_t e = 0; e < d; ++e) orow[e] += p * vrow[e];
    }
  }
  return push(std::move(out), {r, values},
              [r, values, n, m, d, inv_scale, probs = std::move(probs)](Tape& t,
                                                                        Id self) {
                const Tensor& g = t.gval(self);
                const Tensor& tv = t.val(values);
                Tensor* gr = t.gbuf(r);
                Tensor* gv = t.gbuf(values);
                std::vector<double> dp(m);
                for (std::size_t i = 0; i < n; ++i) {
                  double dot = 0.0;
                  for (std::size_t j = 0; j < m; ++j) {
                    const double p = probs[i * m + j];
                    if (gv && p != 0.0) {
                      double* grow = gv->v.data() + j * d;
                      const double* ga = g.v.data() + i * d;
                      for (std::size_t e = 0; e < d; ++e) grow[e] += p * ga[e];
                    }
                    double acc = 0.0;
                    const double* vrow = tv.v.data() + j * d;
                    const double* ga = g.v.data() + i * d;
                    for (std::size_t e = 0; e < d; ++e) acc += ga[e] * vrow[e];
                    dp[j] = acc;
                    dot += p * acc;
                  }
                  if (gr)
                    for (std::size_t j = 0; j < m; ++j) {
                      const double p = probs[i * m + j];
                      if (p != 0.0)
                        (*gr)[i * m + j] += p * (dp[j] - dot) * inv_scale;
                    }
                }
              });
}

Tape::Id Tape::concrete_mask(Id alpha, std::vector<double> gumbel, double lambda_t) {
  const Tensor& ta = val(alpha);
  if (ta.size() != gumbel.size())
    throw std::invalid_argument("Tape::concrete_mask: noise size mismatch");
  if (lambda_t <= 0.0)
    throw std::invalid_argument("Tape::concrete_mask: temperature must be > 0");
  Tensor out = ta;
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double a = ta[k];
    if (a <= 0.0 || a >= 1.0)
      throw std::domain_error("Tape::concrete_mask: alpha must lie in (0,1)");
    out[k] = sigmoid((std::log(a) - std::log1p(-a) + gumbel[k]) / lambda_t);
  }
  std::vector<double> m = out.v;
  return push(std::move(out), {alpha},
              [alpha, lambda_t, m = std::move(m)](Tape& t, Id self) {
                const Tensor& g = t.gval(self);
                const Tensor& ta = t.val(alpha);
                if (Tensor* ga = t.gbuf(alpha))
                  for (std::size_t k = 0; k < g.size(); ++k)
                    (*ga)[k] += g[k] * m[k] * (1.0 - m[k]) /
                                (lambda_t * ta[k] * (1.0 - ta[k]));
              });
}

Tape::Id Tape::abs_weighted_sum(Id w, Id m) {
  const Tensor& tw = val(w);
  const Tensor& tm = val(m);
  if (tw.size() != tm.size())
    throw std::invalid_argument("Tape::abs_weighted_sum: size mismatch");
  double acc = 0.0;
  for (std::size_t k = 0; k < tw.size(); ++k) acc += std::fabs(tw[k]) * tm[k];
  return push(Tensor::scalar(acc), {w, m}, [w, m](Tape& t, Id self) {
    const double g = t.gval(self)[0];
    const Tensor& tw = t.val(w);
    const Tensor& tm = t.val(m);
    Tensor* gw = t.gbuf(w);
    Tensor* gm = t.gbuf(m);
    for (std::size_t k = 0; k < tw.size(); ++k) {
      const double sgn = tw[k] > 0.0 ? 1.0 : (tw[k] < 0.0 ? -1.0 : 0.0);
      if (gw) (*gw)[k] += g * sgn * tm[k];
      if (gm) (*gm)[k] += g * std::fabs(tw[k]);
    }
  });
}

Tape::Id Tape::sigma_smoothness(Id sigma_eff, Id m) {
  const Tensor& ts = val(sigma_eff);
  const Tensor& tm = val(m);
  if (ts.size() != tm.size())
    throw std::invalid_argument("Tape::sigma_smoothness: size mismatch");
  const std::size_t s = ts.size();
  std::vector<std::size_t> order(s);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ts[a] < ts[b]; });
  double acc = 0.0;
  for (std::size_t j = 1; j < s; ++j) {
    const double gap = ts[order[j]] - ts[order[j - 1]];
    acc += gap * gap * tm[order[j]] * tm[order[j - 1]];
  }
  return push(Tensor::scalar(acc), {sigma_eff, m},
              [sigma_eff, m, order = std::move(order), s](Tape& t, Id self) {
                const double g = t.gval(self)[0];
                const Tensor& ts = t.val(sigma_eff);
                const Tensor& tm = t.val(m);
                Tensor* gs = t.gbuf(sigma_eff);
                Tensor* gm = t.gbuf(m);
                for (std::size_t j = 1; j < s; ++j) {
                  const std::size_t hi = order[j], lo = order[j - 1];
                  const double gap = ts[hi] - ts[lo];
                  const double mm = tm[hi] * tm[lo];
                  if (gs) {
                    (*gs)[hi] += g * 2.0 * gap * mm;
                    (*gs)[lo] -= g * 2.0 * gap * mm;
                  }
                  if (gm) {
                    (*gm)[hi] += g * gap * gap * tm[lo];
                    (*gm)[lo] += g * gap * gap * tm[hi];
                  }
                }
              });
}

}  // namespace stlt
