#include "stlt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "stlt/rng.hpp"
#include "stlt/tape.hpp"

namespace stlt {

SlopeFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw std::invalid_argument("fit_line: need >= 2 points");
  const double n = static_cast<double>(xs.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  SlopeFit f;
  f.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  f.intercept = (sy - f.slope * sx) / n;
  return f;
}

TestSignal parse_test_signal(const std::string& name) {
  if (name == "decaying_sine") return TestSignal::decaying_sine;
  if (name == "gaussian_pulse") return TestSignal::gaussian_pulse;
  if (name == "step") return TestSignal::step;
  throw std::invalid_argument("unknown test signal " + name);
}

namespace {

// Explicit (re, im) pair arithmetic for the transform evaluations.
struct Cx {
  double re = 0.0, im = 0.0;
};
Cx cx_add(Cx a, Cx b) { return {a.re + b.re, a.im + b.im}; }
Cx cx_mul(Cx a, Cx b) {
  return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
}
Cx cx_inv(Cx a) {
  const double d = a.re * a.re + a.im * a.im;
  return {a.re / d, -a.im / d};
}
Cx cx_exp(Cx a) {
  const double e = std::exp(a.re);
  return {e * std::cos(a.im), e * std::sin(a.im)};
}

struct SignalSpec {
  // exact signal value at t
  double (*exact)(double t);
  // transform F(s) evaluated at s = gamma + j*w
  Cx (*transform)(double gamma, double w);
  std::vector<double> grid;
};

constexpr double kSineA = 0.5;
constexpr double kSineW = 2.0;
constexpr double kGaussC = 0.5;
constexpr double kGaussT0 = 3.0;  // 6 standard deviations from the origin
constexpr double kStepT0 = 1.0;

double exact_decaying_sine(double t) {
  return std::exp(-kSineA * t) * std::sin(kSineW * t);
}
Cx transform_decaying_sine(double gamma, double w) {
  // w0 / ((s+a)^2 + w0^2)
  const Cx sa{gamma + kSineA, w};
  const Cx denom = cx_add(cx_mul(sa, sa), Cx{kSineW * kSineW, 0.0});
  Cx out = cx_inv(denom);
  out.re *= kSineW;
  out.im *= kSineW;
  return out;
}

double exact_gaussian(double t) {
  const double z = (t - kGaussT0) / kGaussC;
  return std::exp(-0.5 * z * z);
}
Cx transform_gaussian(double gamma, double w) {
  // c*sqrt(2*pi) * exp(-s*t0 + s^2 c^2 / 2), whole-line transform; the left
  // tail beyond t=0 is ~exp(-18) and sits below the experiment's floors.
  const Cx s{gamma, w};
  const Cx s2 = cx_mul(s, s);
  Cx arg{-gamma * kGaussT0 + 0.5 * kGaussC * kGaussC * s2.re,
         -w * kGaussT0 + 0.5 * kGaussC * kGaussC * s2.im};
  Cx out = cx_exp(arg);
  const double scale = kGaussC * std::sqrt(2.0 * 3.141592653589793);
  out.re *= scale;
  out.im *= scale;
  return out;
}

double exact_step(double t) { return t >= kStepT0 ? 1.0 : 0.0; }
Cx transform_step(double gamma, double w) {
  // exp(-s*t0) / s
  const Cx s{gamma, w};
  return cx_mul(cx_exp({-gamma * kStepT0, -w * kStepT0}), cx_inv(s));
}

std::vector<double> uniform_grid(double lo, double hi, int count) {
  std::vector<double> g(count);
  for (int i = 0; i < count; ++i)
    g[i] = lo + (hi - lo) * static_cast<double>(i) / (count - 1);
  return g;
}

SignalSpec signal_spec(TestSignal s) {
  switch (s) {
    case TestSignal::decaying_sine:
      return {exact_decaying_sine, transform_decaying_sine, uniform_grid(0.2, 2.6, 13)};
    case TestSignal::gaussian_pulse:
      return {exact_gaussian, transform_gaussian, uniform_grid(1.0, 5.0, 13)};
    case TestSignal::step:
      // grid avoids the discontinuity at t0
      return {exact_step, transform_step, {0.3, 0.5, 0.7, 1.5, 2.0, 2.5, 3.0}};
  }
  throw std::logic_error("signal_spec: bad signal");
}

// Trapezoid reconstruction x(t) = e^{gamma t}/(2 pi) * Int_{-B}^{B}
// Re[F(gamma+jw) e^{jwt}] dw with `s` nodes.
std::vector<double> reconstruct(const SignalSpec& spec, int s, double b,
                                double gamma) {
  if (s < 2) throw std::invalid_argument("reconstruct: need >= 2 nodes");
  const double h = 2.0 * b / (s - 1);
  std::vector<Cx> fvals(s);
  std::vector<double> ws(s);
  for (int j = 0; j < s; ++j) {
    const double w = -b + h * j;
    fvals[j] = spec.transform(gamma, w);
    ws[j] = w;
  }
  std::vector<double> out(spec.grid.size(), 0.0);
  for (std::size_t ti = 0; ti < spec.grid.size(); ++ti) {
    const double t = spec.grid[ti];
    double acc = 0.0;
    for (int j = 0; j < s; ++j) {
      const double c = std::cos(ws[j] * t), si = std::sin(ws[j] * t);
      double term = fvals[j].re * c - fvals[j].im * si;  // Re[F e^{jwt}]
      if (j == 0 || j == s - 1) term *= 0.5;
      acc += term;
    }
    out[ti] = std::exp(gamma * t) * h * acc / (2.0 * 3.141592653589793);
  }
  return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

ErrorBoundReport laplace_inversion_experiment(TestSignal signal, int s, double b,
                                              double gamma) {
  if (gamma <= 0.0 || b <= 0.0 || s < 2)
    throw std::invalid_argument("laplace_inversion_experiment: bad parameters");
  const SignalSpec spec = signal_spec(signal);
  std::vector<double> exact(spec.grid.size());
  for (std::size_t i = 0; i < spec.grid.size(); ++i)
    exact[i] = spec.exact(spec.grid[i]);

  const std::vector<double> coarse = reconstruct(spec, s, b, gamma);
  const std::vector<double> dense = reconstruct(spec, 64 * s, b, gamma);

  ErrorBoundReport r;
  r.signal = signal;
  r.b = b;
  r.gamma = gamma;
  r.s = s;
  r.e_quad = max_abs_diff(coarse, dense);
  r.e_trunc = max_abs_diff(dense, exact);
  r.e_win = 0.0;
  r.e_total = max_abs_diff(coarse, exact);

  // Fit the algebraic order on a dyadic sweep around the requested S.
  std::vector<int> sweep;
  for (int f : {-2, -1, 0, 1, 2}) {
    const int sv = f < 0 ? s >> (-f) : s << f;
    if (sv >= 8) sweep.push_back(sv);
  }
  r.p_fitted = fit_quadrature_order(signal, sweep, b, gamma);
  return r;
}

std::vector<double> inversion_quad_errors(TestSignal signal,
                                          const std::vector<int>& s_values,
                                          double b, double gamma) {
  const SignalSpec spec = signal_spec(signal);
  std::vector<double> out;
  out.reserve(s_values.size());
  for (int s : s_values) {
    const std::vector<double> coarse = reconstruct(spec, s, b, gamma);
    const std::vector<double> dense = reconstruct(spec, 64 * s, b, gamma);
    out.push_back(max_abs_diff(coarse, dense));
  }
  return out;
}

double fit_quadrature_order(TestSignal signal, const std::vector<int>& s_values,
                            double b, double gamma) {
  const std::vector<double> errs = inversion_quad_errors(signal, s_values, b, gamma);
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < errs.size(); ++i) {
    if (errs[i] <= 1e-14) continue;  // below the floating-point floor
    xs.push_back(std::log(static_cast<double>(s_values[i])));
    ys.push_back(std::log(errs[i]));
  }
  return -fit_line(xs, ys).slope;
}

std::vector<double> inversion_trunc_errors(TestSignal signal,
                                           const std::vector<double>& b_values,
                                           double gamma) {
  const SignalSpec spec = signal_spec(signal);
  std::vector<double> exact(spec.grid.size());
  for (std::size_t i = 0; i < spec.grid.size(); ++i)
    exact[i] = spec.exact(spec.grid[i]);
  std::vector<double> out;
  for (double b : b_values) {
    // Keep the quadrature step fixed so only the truncation varies.
    const int s = std::max(64, static_cast<int>(std::ceil(64.0 * b)));
    out.push_back(max_abs_diff(reconstruct(spec, s, b, gamma), exact));
  }
  return out;
}

SequenceTensor make_ar1_sequence(std::uint64_t seed, std::size_t n, std::size_t d,
                                 double rho) {
  Rng rng(substream(seed, 0xa21));
  SequenceTensor x(n, d);
  const double scale = std::sqrt(1.0 - rho * rho);
  for (std::size_t j = 0; j < d; ++j) {
    double state = rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
      x.at(i, j) = state;
      state = rho * state + scale * rng.normal();
    }
  }
  return x;
}

WindowCutoffResult window_cutoff_experiment(const SequenceTensor& x,
                                            const LaplaceNodeBank& bank,
                                            const std::vector<double>& t_values) {
  if (t_values.empty())
    throw std::invalid_argument("window_cutoff_experiment: no T values");
  const EffectiveParams eff = effective_params(bank);

  WindowSpec full;
  full.kind = WindowKind::exponential_only;
  const StltCoefficients reference = stlt_direct(x, bank, full, StltMode::bilateral);

  WindowCutoffResult r;
  r.sigma_min = *std::min_element(eff.sigma.begin(), eff.sigma.end());
  for (double t_eff : t_values) {
    WindowSpec rect;
    rect.kind = WindowKind::rectangular;
    StltCoefficients truncated;
    stlt_direct_eff(x.v.data(), x.n, x.d, eff.sigma, eff.omega, t_eff, rect,
                    bank.delta, StltMode::bilateral, &truncated);
    double err = 0.0;
    for (std::size_t i = 0; i < reference.re.size(); ++i) {
      err = std::max(err, std::fabs(reference.re[i] - truncated.re[i]));
      err = std::max(err, std::fabs(reference.im[i] - truncated.im[i]));
    }
    r.t_values.push_back(t_eff);
    r.errors.push_back(err);
  }

  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < r.errors.size(); ++i) {
    if (r.errors[i] <= 0.0) continue;
    xs.push_back(r.t_values[i]);
    ys.push_back(std::log(r.errors[i]));
  }
  if (xs.size() >= 2) r.slope = fit_line(xs, ys).slope;
  return r;
}

double operator_norm(const std::vector<double>& m, std::size_t rows,
                     std::size_t cols, int iters, double tol) {
  if (m.size() != rows * cols) throw std::invalid_argument("operator_norm: bad shape");
  Rng rng(0x9f);
  std::vector<double> v(cols), mv(rows), mtmv(cols);
  for (double& e : v) e = rng.normal();
  double sigma = 0.0;
  for (int it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < rows; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < cols; ++j) acc += m[i * cols + j] * v[j];
      mv[i] = acc;
    }
    double norm_mv = 0.0;
    for (double e : mv) norm_mv += e * e;
    norm_mv = std::sqrt(norm_mv);
    double norm_v = 0.0;
    for (double e : v) norm_v += e * e;
    norm_v = std::sqrt(norm_v);
    if (norm_v == 0.0) return 0.0;
    const double estimate = norm_mv / norm_v;
    if (it > 0 && std::fabs(estimate - sigma) <= tol * std::max(1.0, estimate)) {
      sigma = estimate;
      break;
    }
    sigma = estimate;
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < rows; ++i) acc += m[i * cols + j] * mv[i];
      mtmv[j] = acc;
    }
    double norm_mtmv = 0.0;
    for (double e : mtmv) norm_mtmv += e * e;
    norm_mtmv = std::sqrt(norm_mtmv);
    if (norm_mtmv == 0.0) return 0.0;
    for (std::size_t j = 0; j < cols; ++j) v[j] = mtmv[j] / norm_mtmv;
  }
  return sigma;
}

std::vector<PerturbRow> relevance_perturbation(ModelParams& params,
                                               const std::vector<int>& tokens,
                                               const std::vector<int>& targets,
                                               const std::vector<double>& eps_levels,
                                               int layer, double lambda_t) {
  if (layer < 0 || static_cast<std::size_t>(layer) >= params.decoder_blocks.size())
    throw std::invalid_argument("relevance_perturbation: bad layer index");

  MixerOptions base;
  base.mask_mode = MaskMode::deterministic_eval;
  base.lambda_t = lambda_t;

  // Loss gradient with respect to the chosen layer's relevance matrix gives
  // the probe direction.
  Tensor direction;
  double base_loss = 0.0;
  {
    Tape t;
    ModelBinding b = bind_model(t, params, true);
    LmTrace trace;
    Tape::Id logits = forward_lm_graph(t, params, b, tokens, base, &trace);
    Tape::Id loss = t.softmax_cross_entropy(logits, targets);
    base_loss = t.val(loss)[0];
    t.backward(loss);
    direction = t.grad(trace.blocks[layer].r);
  }
  const std::size_t n = direction.dim(0);
  const double dnorm = operator_norm(direction.v, n, n);
  if (dnorm > 0.0)
    for (double& e : direction.v) e /= dnorm;

  std::vector<PerturbRow> rows;
  for (double eps : eps_levels) {
    Tensor dr = direction;
    for (double& e : dr.v) e *= eps;
    PerturbRow row;
    row.eps = eps;
    row.r_norm = eps == 0.0 ? 0.0 : operator_norm(dr.v, n, n);
    MixerOptions o = base;
    o.r_perturb = &dr;
    o.perturb_layer = layer;
    const Tensor logits = forward_lm(params, tokens, o);
    const double loss = cross_entropy(logits.v, tokens.size(), logits.dim(1), targets);
    row.delta_loss = loss - base_loss;
    row.ratio = row.r_norm > 0.0 ? std::fabs(row.delta_loss) / row.r_norm : 0.0;
    rows.push_back(row);
  }
  return rows;
}

void dump_params_csv(const Checkpoint& ck, std::ostream& os) {
  os << "layer,node,sigma,omega,t_half,alpha,m_tilde,T,s_eff\n";
  char buf[64];
  auto num = [&buf](double x) {
    std::snprintf(buf, sizeof(buf), "%.10g", x);
    return std::string(buf);
  };
  auto dump_block = [&](const BlockParams& b, const std::string& name) {
    const EffectiveParams eff = effective_params(b.bank);
    const std::size_t s = b.bank.s_max();
    std::vector<double> alpha(s), m(s);
    double se = 0.0;
    for (std::size_t k = 0; k < s; ++k) {
      alpha[k] = sigmoid(b.gate.b_alpha[k]);  // input-free gate score
      const double a = std::min(std::max(alpha[k], 1e-6), 1.0 - 1e-6);
      m[k] = sigmoid((std::log(a) - std::log1p(-a)) / ck.lambda_t);
      se += m[k];
    }
    std::vector<std::size_t> order(s);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return eff.sigma[x] < eff.sigma[y];
    });
    for (std::size_t j = 0; j < s; ++j) {
      const std::size_t k = order[j];
      os << name << ',' << k << ',' << num(eff.sigma[k]) << ',' << num(eff.omega[k])
         << ',' << num(std::log(2.0) / eff.sigma[k]) << ',' << num(alpha[k]) << ','
         << num(m[k]) << ',' << num(eff.t) << ',' << num(se) << '\n';
    }
  };
  for (std::size_t l = 0; l < ck.params.encoder_blocks.size(); ++l)
    dump_block(ck.params.encoder_blocks[l], "enc" + std::to_string(l));
  for (std::size_t l = 0; l < ck.params.decoder_blocks.size(); ++l)
    dump_block(ck.params.decoder_blocks[l], "dec" + std::to_string(l));
}

}  // namespace stlt
