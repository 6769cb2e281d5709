#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "stlt/adaptive.hpp"
#include "stlt/node_bank.hpp"

namespace stlt {

struct RegWeights {
  double lambda_omega = 1e-4;
  double lambda_sigma = 1e-4;
  double lambda_mask = 1e-3;
};

struct RegTerms {
  double omega = 0.0;  // lambda_omega * sum_k |omega_k| m_k
  double sigma = 0.0;  // lambda_sigma * sum_j (s_(j)-s_(j-1))^2 m_(j) m_(j-1), sigma sorted
  double mask = 0.0;   // lambda_mask * sum_k m_k
};

struct LossReport {
  double task = 0.0;
  double reg_omega = 0.0;
  double reg_sigma = 0.0;
  double reg_mask = 0.0;
  double total = 0.0;
};

// Mean token-level negative log-likelihood over n rows of `vocab` logits.
double cross_entropy(const std::vector<double>& logits, std::size_t n,
                     std::size_t vocab, const std::vector<int>& targets);

inline double perplexity(double ce) { return std::exp(ce); }

// Weighted regularizers on effective parameters. The smoothness term sorts
// effective sigma ascending (masks permuted alongside) so the parameterization
// itself stays unconstrained.
RegTerms regularization(const LaplaceNodeBank& bank, const NodeMask& mask,
                        const RegWeights& w);

LossReport total_loss(double task, const RegTerms& regs);

}  // namespace stlt
