#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "stlt/losses.hpp"
#include "stlt/rng.hpp"

using namespace stlt;

namespace {

LaplaceNodeBank bank_with_sigma(const std::vector<double>& sigma,
                                const std::vector<double>& omega) {
  LaplaceNodeBank b;
  for (double s : sigma) b.sigma_raw.push_back(inv_softplus(s - kEpsSigma));
  b.omega = omega;
  return b;
}

NodeMask mask_of(std::vector<double> m) {
  NodeMask out;
  out.m_tilde = std::move(m);
  return out;
}

}  // namespace

TEST_CASE("cross_entropy closed forms") {
  // uniform logits -> ln(vocab)
  std::vector<double> logits(3 * 7, 0.42);
  CHECK(cross_entropy(logits, 3, 7, {0, 3, 6}) ==
        doctest::Approx(std::log(7.0)).epsilon(1e-12));

  // saturated one-hot -> ~0
  std::vector<double> hot{50.0, 0.0, 0.0};
  CHECK(cross_entropy(hot, 1, 3, {0}) <= 1e-20);

  // three classes, logits {1,0,0}, target 0: -ln(e/(e+2))
  std::vector<double> three{1.0, 0.0, 0.0};
  const double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  CHECK(cross_entropy(three, 1, 3, {0}) == doctest::Approx(expect).epsilon(1e-12));

  CHECK(perplexity(std::log(7.0)) == doctest::Approx(7.0).epsilon(1e-12));
  CHECK_THROWS_AS(cross_entropy(three, 1, 3, {3}), std::out_of_range);
}

TEST_CASE("regularization closed forms") {
  RegWeights w{1.0, 1.0, 1.0};

  // zero omegas: no oscillation penalty
  {
    const LaplaceNodeBank b = bank_with_sigma({0.1, 0.2, 0.3}, {0.0, 0.0, 0.0});
    const RegTerms r = regularization(b, mask_of({1, 1, 1}), w);
    CHECK(r.omega == 0.0);
  }

  // equally spaced sigma, unit masks: (S-1) * gap^2
  {
    const LaplaceNodeBank b = bank_with_sigma({0.5, 0.8, 1.1, 1.4}, {0, 0, 0, 0});
    const RegTerms r = regularization(b, mask_of({1, 1, 1, 1}), w);
    CHECK(r.sigma == doctest::Approx(3 * 0.3 * 0.3).epsilon(1e-9));
    CHECK(r.mask == doctest::Approx(4.0));
  }

  // dead masks kill every term
  {
    const LaplaceNodeBank b = bank_with_sigma({0.5, 1.5}, {1.0, -2.0});
    const RegTerms r = regularization(b, mask_of({0, 0}), w);
    CHECK(r.omega == 0.0);
    CHECK(r.sigma == 0.0);
    CHECK(r.mask == 0.0);
  }

  // the smoothness term sorts sigma internally
  {
    const LaplaceNodeBank sorted = bank_with_sigma({0.5, 0.8, 1.4}, {0, 0, 0});
    const LaplaceNodeBank shuffled = bank_with_sigma({1.4, 0.5, 0.8}, {0, 0, 0});
    const RegTerms a = regularization(sorted, mask_of({1, 1, 1}), w);
    const RegTerms b = regularization(shuffled, mask_of({1, 1, 1}), w);
    CHECK(a.sigma == doctest::Approx(b.sigma).epsilon(1e-9));
  }
}

TEST_CASE("property: regularizers are non-negative and vanish with zero weights") {
  Rng rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t s = 2 + rng.next_u64() % 6;
    std::vector<double> sigma, omega, m;
    for (std::size_t k = 0; k < s; ++k) {
      sigma.push_back(rng.uniform(0.05, 3.0));
      omega.push_back(rng.uniform(-2.0, 2.0));
      m.push_back(rng.uniform());
    }
    const LaplaceNodeBank b = bank_with_sigma(sigma, omega);
    RegWeights w{rng.uniform(), rng.uniform(), rng.uniform()};
    const RegTerms r = regularization(b, mask_of(m), w);
    CHECK(r.omega >= 0.0);
    CHECK(r.sigma >= 0.0);
    CHECK(r.mask >= 0.0);
    const RegTerms z = regularization(b, mask_of(m), RegWeights{0, 0, 0});
    CHECK(z.omega == 0.0);
    CHECK(z.sigma == 0.0);
    CHECK(z.mask == 0.0);
  }
}

TEST_CASE("property: reg_mask strictly increases in each mask entry") {
  const LaplaceNodeBank b = bank_with_sigma({0.2, 0.6, 1.0}, {0.5, -0.5, 1.0});
  RegWeights w{0.0, 0.0, 1.0};
  std::vector<double> m{0.2, 0.5, 0.8};
  const double base = regularization(b, mask_of(m), w).mask;
  for (std::size_t k = 0; k < m.size(); ++k) {
    std::vector<double> bumped = m;
    bumped[k] += 0.1;
    CHECK(regularization(b, mask_of(bumped), w).mask > base);
  }
}

TEST_CASE("property: smoothness term only sees sigma differences") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> sigma, m;
    for (int k = 0; k < 5; ++k) {
      sigma.push_back(rng.uniform(0.3, 2.0));
      m.push_back(rng.uniform());
    }
    std::vector<double> shifted = sigma;
    const double c = rng.uniform(0.1, 1.0);
    for (double& s : shifted) s += c;
    RegWeights w{0.0, 1.0, 0.0};
    const double a =
        regularization(bank_with_sigma(sigma, {0, 0, 0, 0, 0}), mask_of(m), w).sigma;
    const double b =
        regularization(bank_with_sigma(shifted, {0, 0, 0, 0, 0}), mask_of(m), w).sigma;
    CHECK(a == doctest::Approx(b).epsilon(1e-6));
  }
}

TEST_CASE("total_loss sums its parts") {
  const LossReport a = total_loss(2.0, RegTerms{0, 0, 0});
  CHECK(a.total == 2.0);
  const LossReport b = total_loss(2.0, RegTerms{0.1, 0.2, 0.3});
  CHECK(b.total == doctest::Approx(2.6).epsilon(1e-15));

  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const LossReport r = total_loss(
        rng.uniform(0.0, 5.0), RegTerms{rng.uniform(), rng.uniform(), rng.uniform()});
    CHECK(std::fabs(r.total - (r.task + r.reg_omega + r.reg_sigma + r.reg_mask)) <=
          1e-12);
  }
}
