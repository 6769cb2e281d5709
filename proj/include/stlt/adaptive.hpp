#pragma once

#include <cstdint>
#include <vector>

#include "stlt/stlt_core.hpp"

namespace stlt {

enum class MaskMode { stochastic, deterministic_eval, hard_threshold };

// One sampled node-selection mask: importance scores alpha, the Gumbel draws
// used (kept for reproducibility), and the resulting continuous or binary
// m_tilde values.
struct NodeMask {
  std::vector<double> alpha;
  std::vector<double> gumbel;
  std::vector<double> m_tilde;
  double temperature = 1.0;
  MaskMode mode = MaskMode::stochastic;
  double threshold = 0.5;
};

struct GateParams {
  std::size_t s_max = 0, d = 0;
  std::vector<double> w_alpha;  // s_max x d
  std::vector<double> b_alpha;  // s_max
};

GateParams init_gate(std::size_t s_max, std::size_t d);

// alpha = sigmoid(W_alpha * meanpool(x) + b_alpha), each entry in (0,1).
std::vector<double> importance_scores(const SequenceTensor& x, const GateParams& g);

// Clamp scores away from {0,1} so logits stay finite.
std::vector<double> clamp_alpha(std::vector<double> alpha, double eps = 1e-6);

// Relaxed or hard node mask. stochastic: m = sigmoid((logit(a)+g)/T) with
// g ~ Gumbel(0,1) from the seeded stream; deterministic_eval: g = 0;
// hard_threshold: m = 1[a > threshold]. Throws std::domain_error if any
// alpha is exactly 0 or 1 in the relaxed modes.
NodeMask sample_mask(const std::vector<double>& alpha, double lambda_t,
                     std::uint64_t seed, MaskMode mode, double threshold = 0.5);

// L'[n][k][i] = m_tilde[k] * L[n][k][i].
StltCoefficients apply_mask(const StltCoefficients& coeffs, const NodeMask& mask);

// Expected active node count, sum of m_tilde.
double s_eff(const NodeMask& mask);

// Linear anneal from lambda_start to lambda_end over the first `fraction` of
// training, constant afterwards.
double anneal_temperature(long step, long total_steps, double lambda_start,
                          double lambda_end, double fraction = 0.4);

}  // namespace stlt
