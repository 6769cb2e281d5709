#include "stlt/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace stlt {

double cross_entropy(const std::vector<double>& logits, std::size_t n,
                     std::size_t vocab, const std::vector<int>& targets) {
  if (logits.size() != n * vocab || targets.size() != n)
    throw std::invalid_argument("cross_entropy: shape mismatch");
  double loss = 0.0;
  for (std::size_t row = 0; row < n; ++row) {
    const int y = targets[row];
    if (y < 0 || static_cast<std::size_t>(y) >= vocab)
      throw std::out_of_range("cross_entropy: target outside vocabulary");
    const double* z = logits.data() + row * vocab;
    const double zmax = *std::max_element(z, z + vocab);
    double acc = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) acc += std::exp(z[j] - zmax);
    loss += zmax + std::log(acc) - z[y];
  }
  return loss / static_cast<double>(n);
}

RegTerms regularization(const LaplaceNodeBank& bank, const NodeMask& mask,
                        const RegWeights& w) {
  const std::size_t s = bank.s_max();
  if (mask.m_tilde.size() != s)
    throw std::invalid_argument("regularization: mask/bank size mismatch");
  const EffectiveParams eff = effective_params(bank);

  RegTerms out;
  for (std::size_t k = 0; k < s; ++k)
    out.omega += std::fabs(eff.omega[k]) * mask.m_tilde[k];
  out.omega *= w.lambda_omega;

  std::vector<std::size_t> order(s);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return eff.sigma[a] < eff.sigma[b];
  });
  for (std::size_t j = 1; j < s; ++j) {
    const double gap = eff.sigma[order[j]] - eff.sigma[order[j - 1]];
    out.sigma += gap * gap * mask.m_tilde[order[j]] * mask.m_tilde[order[j - 1]];
  }
  out.sigma *= w.lambda_sigma;

  for (std::size_t k = 0; k < s; ++k) out.mask += mask.m_tilde[k];
  out.mask *= w.lambda_mask;
  return out;
}

LossReport total_loss(double task, const RegTerms& regs) {
  LossReport r;
  r.task = task;
  r.reg_omega = regs.omega;
  r.reg_sigma = regs.sigma;
  r.reg_mask = regs.mask;
  r.total = task + regs.omega + regs.sigma + regs.mask;
  return r;
}

}  // namespace stlt
