#include "stlt/adaptive.hpp"

#include <cmath>
#include <stdexcept>

#include "stlt/node_bank.hpp"
#include "stlt/rng.hpp"

namespace stlt {

GateParams init_gate(std::size_t s_max, std::size_t d) {
  GateParams g;
  g.s_max = s_max;
  g.d = d;
  g.w_alpha.assign(s_max * d, 0.0);
  g.b_alpha.assign(s_max, 0.0);
  return g;
}

std::vector<double> importance_scores(const SequenceTensor& x, const GateParams& g) {
  if (g.d != x.d) throw std::invalid_argument("importance_scores: width mismatch");
  std::vector<double> pooled(x.d, 0.0);
  for (std::size_t i = 0; i < x.n; ++i)
    for (std::size_t j = 0; j < x.d; ++j) pooled[j] += x.at(i, j);
  for (double& p : pooled) p /= static_cast<double>(x.n);

  std::vector<double> alpha(g.s_max);
  for (std::size_t k = 0; k < g.s_max; ++k) {
    double pre = g.b_alpha[k];
    for (std::size_t j = 0; j < g.d; ++j) pre += g.w_alpha[k * g.d + j] * pooled[j];
    alpha[k] = sigmoid(pre);
  }
  return alpha;
}

std::vector<double> clamp_alpha(std::vector<double> alpha, double eps) {
  for (double& a : alpha) {
    if (a < eps) a = eps;
    if (a > 1.0 - eps) a = 1.0 - eps;
  }
  return alpha;
}

NodeMask sample_mask(const std::vector<double>& alpha, double lambda_t,
                     std::uint64_t seed, MaskMode mode, double threshold) {
  if (lambda_t <= 0.0) throw std::invalid_argument("sample_mask: lambda_t must be > 0");
  NodeMask mask;
  mask.alpha = alpha;
  mask.gumbel.assign(alpha.size(), 0.0);
  mask.m_tilde.resize(alpha.size());
  mask.temperature = lambda_t;
  mask.mode = mode;
  mask.threshold = threshold;

  if (mode == MaskMode::hard_threshold) {
    for (std::size_t k = 0; k < alpha.size(); ++k)
      mask.m_tilde[k] = alpha[k] > threshold ? 1.0 : 0.0;
    return mask;
  }

  Rng rng(substream(seed, 0x67756d62));
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    const double a = alpha[k];
    if (a <= 0.0 || a >= 1.0)
      throw std::domain_error("sample_mask: alpha must lie strictly inside (0,1)");
    const double g = mode == MaskMode::stochastic ? rng.gumbel() : 0.0;
    mask.gumbel[k] = g;
    mask.m_tilde[k] = sigmoid((std::log(a) - std::log1p(-a) + g) / lambda_t);
  }
  return mask;
}

StltCoefficients apply_mask(const StltCoefficients& coeffs, const NodeMask& mask) {
  if (mask.m_tilde.size() != coeffs.s)
    throw std::invalid_argument("apply_mask: node count mismatch");
  StltCoefficients out = coeffs;
  for (std::size_t pos = 0; pos < coeffs.n; ++pos)
    for (std::size_t k = 0; k < coeffs.s; ++k) {
      const double m = mask.m_tilde[k];
      const std::size_t base = coeffs.idx(pos, k, 0);
      for (std::size_t i = 0; i < coeffs.d; ++i) {
        out.re[base + i] = m * coeffs.re[base + i];
        out.im[base + i] = m * coeffs.im[base + i];
      }
    }
  return out;
}

double s_eff(const NodeMask& mask) {
  double total = 0.0;
  for (double m : mask.m_tilde) total += m;
  return total;
}

double anneal_temperature(long step, long total_steps, double lambda_start,
                          double lambda_end, double fraction) {
  if (total_steps <= 0) throw std::invalid_argument("anneal_temperature: total_steps must be > 0");
  const double cut = fraction * static_cast<double>(total_steps);
  if (step <= 0) return lambda_start;
  if (static_cast<double>(step) >= cut) return lambda_end;
  const double f = static_cast<double>(step) / cut;
  return lambda_start + f * (lambda_end - lambda_start);
}

}  // namespace stlt
