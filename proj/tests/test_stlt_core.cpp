#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "stlt/rng.hpp"
#include "stlt/stlt_core.hpp"

using namespace stlt;

namespace {

// Independent brute-force evaluator: walks every (n, k, m) and evaluates the
// lag weight from scratch. Decay acts on |m-n|, the oscillation phase on the
// same lag magnitude, matching the two streaming passes.
StltCoefficients brute_force_stlt(const SequenceTensor& x, const LaplaceNodeBank& bank,
                                  const WindowSpec& spec, StltMode mode) {
  const EffectiveParams eff = effective_params(bank);
  StltCoefficients out(x.n, bank.s_max(), x.d);
  for (std::size_t n = 0; n < x.n; ++n)
    for (std::size_t k = 0; k < bank.s_max(); ++k)
      for (std::size_t m = 0; m < x.n; ++m) {
        if (mode == StltMode::unilateral && m > n) continue;
        const double lag = std::fabs(static_cast<double>(m) - static_cast<double>(n)) *
                           bank.delta;
        const double w = window_eval(spec, lag, eff.t, bank.delta);
        const double decay = std::exp(-eff.sigma[k] * lag);
        const double c = decay * std::cos(eff.omega[k] * lag);
        const double s = -decay * std::sin(eff.omega[k] * lag);
        for (std::size_t i = 0; i < x.d; ++i) {
          out.re[out.idx(n, k, i)] += x.at(m, i) * w * c;
          out.im[out.idx(n, k, i)] += x.at(m, i) * w * s;
        }
      }
  return out;
}

SequenceTensor random_sequence(std::uint64_t seed, std::size_t n, std::size_t d) {
  Rng rng(seed);
  SequenceTensor x(n, d);
  for (double& e : x.v) e = rng.normal();
  return x;
}

LaplaceNodeBank random_bank(std::uint64_t seed, std::size_t s) {
  return init_bank(s, 0.01, 3.0, 2.0, 6.3, 1.0, seed);
}

double max_abs_diff(const StltCoefficients& a, const StltCoefficients& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.re.size(); ++i) {
    m = std::max(m, std::fabs(a.re[i] - b.re[i]));
    m = std::max(m, std::fabs(a.im[i] - b.im[i]));
  }
  return m;
}

double max_rel_diff(const StltCoefficients& a, const StltCoefficients& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.re.size(); ++i) {
    const double da = std::fabs(a.re[i] - b.re[i]);
    const double db = std::fabs(a.im[i] - b.im[i]);
    const double sa = std::max({std::fabs(a.re[i]), std::fabs(b.re[i]), 1.0});
    const double sb = std::max({std::fabs(a.im[i]), std::fabs(b.im[i]), 1.0});
    m = std::max(m, std::max(da / sa, db / sb));
  }
  return m;
}

}  // namespace

TEST_CASE("softplus floor and effective parameters") {
  LaplaceNodeBank bank;
  bank.sigma_raw = {0.0, -40.0, 5.0};
  bank.omega = {0.3, -0.1, 2.0};
  bank.t_raw = inv_softplus(31.0);  // effective T = 32 with the unit floor

  const EffectiveParams eff = effective_params(bank);
  CHECK(eff.sigma[0] == doctest::Approx(std::log(2.0) + kEpsSigma).epsilon(1e-12));
  CHECK(eff.sigma[1] == doctest::Approx(kEpsSigma).epsilon(1e-9));
  // softplus(5) + 1e-4, evaluated independently
  CHECK(eff.sigma[2] == doctest::Approx(5.0068153484891179).epsilon(1e-12));
  CHECK(eff.omega == bank.omega);
  CHECK(eff.t == doctest::Approx(32.0).epsilon(1e-12));
}

TEST_CASE("init_bank log-spacing, omega range, and errors") {
  const LaplaceNodeBank bank = init_bank(4, 1e-3, 10.0, 1.5, 32.0, 1.0, 42);
  const EffectiveParams eff = effective_params(bank);
  // exp(linspace(ln 1e-3, ln 10, 4)) = 1e-3 * 10^{4k/3}
  CHECK(eff.sigma[0] == doctest::Approx(1e-3).epsilon(1e-9));
  CHECK(eff.sigma[1] == doctest::Approx(2.1544346900318867e-2).epsilon(1e-9));
  CHECK(eff.sigma[2] == doctest::Approx(4.6415888336127725e-1).epsilon(1e-9));
  CHECK(eff.sigma[3] == doctest::Approx(10.0).epsilon(1e-9));
  for (double w : bank.omega) {
    CHECK(w >= 0.0);
    CHECK(w <= 1.5);
  }
  CHECK(eff.t == doctest::Approx(32.0).epsilon(1e-12));

  const LaplaceNodeBank big = init_bank(64, 1e-3, 10.0, 1.5, 32.0, 1.0, 1);
  CHECK(big.s_max() == 64);
  CHECK(effective_params(big).t == doctest::Approx(32.0).epsilon(1e-12));

  CHECK_THROWS_AS(init_bank(1, 0.5, 0.5, 1.0, 32.0, 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(init_bank(4, 0.0, 1.0, 1.0, 32.0, 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(init_bank(4, 2.0, 1.0, 1.0, 32.0, 1.0, 1), std::invalid_argument);

  // same seed reproduces the bank bit-for-bit
  const LaplaceNodeBank again = init_bank(4, 1e-3, 10.0, 1.5, 32.0, 1.0, 42);
  CHECK(again.omega == bank.omega);
  CHECK(again.sigma_raw == bank.sigma_raw);
}

TEST_CASE("window_eval shapes") {
  WindowSpec hann{WindowKind::hann, 1.0};
  WindowSpec rect{WindowKind::rectangular, 1.0};
  WindowSpec expo{WindowKind::exponential_only, 1.0};
  const double T = 8.0, dt = 1.0;
  const double half = window_support(hann, T, dt) * dt;

  CHECK(window_eval(hann, 0.0, T, dt) == doctest::Approx(1.0));
  CHECK(window_eval(hann, half, T, dt) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(window_eval(hann, -half, T, dt) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(window_eval(rect, 1.5 * half, T, dt) == 0.0);
  CHECK(window_eval(rect, 0.3 * half, T, dt) == 1.0);
  CHECK(window_eval(expo, 1e9, T, dt) == 1.0);
  for (double t : {0.25, 1.0, 3.0, 7.0}) {
    CHECK(window_eval(hann, t, T, dt) == window_eval(hann, -t, T, dt));
    CHECK(window_eval(hann, t, T, dt) >= 0.0);
  }
  CHECK_THROWS_AS(window_eval(hann, 0.0, 0.0, dt), std::invalid_argument);
}

TEST_CASE("half_lives") {
  LaplaceNodeBank bank;
  bank.sigma_raw = {inv_softplus(std::log(2.0) - kEpsSigma),
                    inv_softplus(2.0 * std::log(2.0) - kEpsSigma),
                    inv_softplus(1e-3 - kEpsSigma)};
  bank.omega = {0, 0, 0};
  const std::vector<double> hl = half_lives(bank);
  CHECK(hl[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(hl[1] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(hl[2] == doctest::Approx(693.1471805599453).epsilon(1e-9));
}

TEST_CASE("stlt_direct: unit impulse decays as exp(-s_k (n-n0) dt)") {
  const std::size_t n = 12, n0 = 3;
  SequenceTensor x(n, 1);
  x.at(n0, 0) = 1.0;
  LaplaceNodeBank bank;
  bank.sigma_raw = {inv_softplus(0.4 - kEpsSigma)};
  bank.omega = {0.9};
  bank.t_raw = inv_softplus(100.0 - 1.0);  // support covers the whole sequence
  WindowSpec rect{WindowKind::rectangular, 1.0};

  const StltCoefficients L = stlt_direct(x, bank, rect, StltMode::unilateral);
  for (std::size_t pos = 0; pos < n; ++pos) {
    const double lag = static_cast<double>(pos) - static_cast<double>(n0);
    const double re = L.re[L.idx(pos, 0, 0)];
    const double im = L.im[L.idx(pos, 0, 0)];
    if (pos < n0) {
      CHECK(re == 0.0);
      CHECK(im == 0.0);
    } else {
      CHECK(re == doctest::Approx(std::exp(-0.4 * lag) * std::cos(0.9 * lag))
                      .epsilon(1e-12));
      CHECK(im == doctest::Approx(-std::exp(-0.4 * lag) * std::sin(0.9 * lag))
                      .epsilon(1e-12));
    }
  }
}

TEST_CASE("stlt_direct: single-sample sequence") {
  SequenceTensor x(1, 2);
  x.at(0, 0) = 1.25;
  x.at(0, 1) = -2.0;
  const LaplaceNodeBank bank = random_bank(3, 4);
  WindowSpec hann{WindowKind::hann, 1.0};
  const EffectiveParams eff = effective_params(bank);
  const StltCoefficients L = stlt_direct(x, bank, hann, StltMode::bilateral);
  const double w0 = window_eval(hann, 0.0, eff.t, bank.delta);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(L.re[L.idx(0, k, 0)] == doctest::Approx(1.25 * w0).epsilon(1e-12));
    CHECK(L.re[L.idx(0, k, 1)] == doctest::Approx(-2.0 * w0).epsilon(1e-12));
    CHECK(L.im[L.idx(0, k, 0)] == doctest::Approx(0.0).epsilon(1e-15));
  }
}

TEST_CASE("stlt_direct matches the brute-force oracle") {
  const SequenceTensor x = random_sequence(11, 64, 4);
  const LaplaceNodeBank bank = random_bank(12, 8);
  for (WindowKind kind :
       {WindowKind::hann, WindowKind::rectangular, WindowKind::exponential_only})
    for (StltMode mode : {StltMode::bilateral, StltMode::unilateral}) {
      WindowSpec spec{kind, 1.0};
      const StltCoefficients fast = stlt_direct(x, bank, spec, mode);
      const StltCoefficients slow = brute_force_stlt(x, bank, spec, mode);
      CHECK(max_abs_diff(fast, slow) <= 1e-10);
    }
}

TEST_CASE("stlt_streaming equals direct summation with exponential weighting") {
  WindowSpec expo{WindowKind::exponential_only, 1.0};
  const SequenceTensor x = random_sequence(21, 256, 3);
  const LaplaceNodeBank bank = random_bank(22, 16);
  for (StltMode mode : {StltMode::bilateral, StltMode::unilateral}) {
    const StltCoefficients a = stlt_streaming(x, bank, mode);
    const StltCoefficients b = stlt_direct(x, bank, expo, mode);
    CHECK(max_rel_diff(a, b) <= 1e-8);
  }
}

TEST_CASE("stlt_streaming limits") {
  SequenceTensor zeros(32, 2);
  const LaplaceNodeBank bank = random_bank(5, 4);
  const StltCoefficients z = stlt_streaming(zeros, bank, StltMode::bilateral);
  for (double e : z.re) CHECK(e == 0.0);
  for (double e : z.im) CHECK(e == 0.0);

  // Large sigma: r -> 0, so only the m = n term survives.
  LaplaceNodeBank stiff;
  stiff.sigma_raw = {40.0};
  stiff.omega = {1.3};
  const SequenceTensor x = random_sequence(7, 16, 2);
  const StltCoefficients L = stlt_streaming(x, stiff, StltMode::unilateral);
  for (std::size_t pos = 0; pos < x.n; ++pos)
    for (std::size_t i = 0; i < x.d; ++i) {
      CHECK(L.re[L.idx(pos, 0, i)] == doctest::Approx(x.at(pos, i)).epsilon(1e-8));
      CHECK(std::fabs(L.im[L.idx(pos, 0, i)]) <= 1e-8);
    }
}

TEST_CASE("property: randomized streaming/direct equivalence") {
  Rng meta(777);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 1 + meta.next_u64() % 128;
    const std::size_t d = 1 + meta.next_u64() % 8;
    const std::size_t s = 1 + meta.next_u64() % 16;
    const SequenceTensor x = random_sequence(meta.next_u64(), n, d);
    const LaplaceNodeBank bank = random_bank(meta.next_u64(), s);
    const StltMode mode =
        meta.uniform() < 0.5 ? StltMode::bilateral : StltMode::unilateral;
    WindowSpec expo{WindowKind::exponential_only, 1.0};
    CHECK(max_rel_diff(stlt_streaming(x, bank, mode), stlt_direct(x, bank, expo, mode)) <=
          1e-8);
  }
}

TEST_CASE("property: linearity") {
  const SequenceTensor x = random_sequence(31, 48, 3);
  const SequenceTensor y = random_sequence(32, 48, 3);
  const LaplaceNodeBank bank = random_bank(33, 6);
  const double a = 1.7, b = -0.4;
  SequenceTensor mix(48, 3);
  for (std::size_t i = 0; i < mix.v.size(); ++i) mix.v[i] = a * x.v[i] + b * y.v[i];
  const StltCoefficients lx = stlt_streaming(x, bank, StltMode::bilateral);
  const StltCoefficients ly = stlt_streaming(y, bank, StltMode::bilateral);
  const StltCoefficients lm = stlt_streaming(mix, bank, StltMode::bilateral);
  for (std::size_t i = 0; i < lm.re.size(); ++i) {
    CHECK(lm.re[i] == doctest::Approx(a * lx.re[i] + b * ly.re[i]).epsilon(1e-9));
    CHECK(lm.im[i] == doctest::Approx(a * lx.im[i] + b * ly.im[i]).epsilon(1e-9));
  }
}

TEST_CASE("property: causality of the unilateral transform is bitwise") {
  const std::size_t n = 40;
  SequenceTensor x = random_sequence(41, n, 2);
  const LaplaceNodeBank bank = random_bank(42, 5);
  WindowSpec expo{WindowKind::exponential_only, 1.0};
  Rng rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t cut = 1 + rng.next_u64() % (n - 1);
    SequenceTensor y = x;
    for (std::size_t m = cut; m < n; ++m)
      for (std::size_t i = 0; i < x.d; ++i) y.at(m, i) = rng.normal();
    for (auto compute : {+[](const SequenceTensor& s, const LaplaceNodeBank& b) {
                           return stlt_streaming(s, b, StltMode::unilateral);
                         },
                         +[](const SequenceTensor& s, const LaplaceNodeBank& b) {
                           WindowSpec e{WindowKind::exponential_only, 1.0};
                           return stlt_direct(s, b, e, StltMode::unilateral);
                         }}) {
      const StltCoefficients lx = compute(x, bank);
      const StltCoefficients ly = compute(y, bank);
      for (std::size_t pos = 0; pos < cut; ++pos)
        for (std::size_t k = 0; k < bank.s_max(); ++k)
          for (std::size_t i = 0; i < x.d; ++i) {
            CHECK(lx.re[lx.idx(pos, k, i)] == ly.re[ly.idx(pos, k, i)]);
            CHECK(lx.im[lx.idx(pos, k, i)] == ly.im[ly.idx(pos, k, i)]);
          }
    }
  }
}

TEST_CASE("property: shift covariance away from boundaries") {
  const std::size_t n = 64;
  const SequenceTensor x = random_sequence(51, n, 2);
  SequenceTensor shifted(n, 2);
  for (std::size_t i = 0; i + 1 < n; ++i)
    for (std::size_t j = 0; j < 2; ++j) shifted.at(i + 1, j) = x.at(i, j);
  LaplaceNodeBank bank = random_bank(52, 4);
  bank.t_raw = inv_softplus(8.0 - 1.0);  // window radius 8
  WindowSpec rect{WindowKind::rectangular, 1.0};
  const StltCoefficients lx = stlt_direct(x, bank, rect, StltMode::bilateral);
  const StltCoefficients ls = stlt_direct(shifted, bank, rect, StltMode::bilateral);
  // interior positions: window support well inside both sequences
  for (std::size_t pos = 9; pos + 10 < n; ++pos)
    for (std::size_t k = 0; k < bank.s_max(); ++k)
      for (std::size_t i = 0; i < 2; ++i) {
        CHECK(ls.re[ls.idx(pos + 1, k, i)] ==
              doctest::Approx(lx.re[lx.idx(pos, k, i)]).epsilon(1e-10));
        CHECK(ls.im[ls.idx(pos + 1, k, i)] ==
              doctest::Approx(lx.im[lx.idx(pos, k, i)]).epsilon(1e-10));
      }
}

TEST_CASE("property: impulse magnitude decays monotonically at rate exp(-sigma dt)") {
  const std::size_t n = 24, n0 = 2;
  SequenceTensor x(n, 1);
  x.at(n0, 0) = 1.0;
  LaplaceNodeBank bank;
  bank.sigma_raw = {inv_softplus(0.25 - kEpsSigma)};
  bank.omega = {0.0};
  const StltCoefficients L = stlt_streaming(x, bank, StltMode::unilateral);
  const double ratio = std::exp(-0.25);
  for (std::size_t pos = n0 + 1; pos < n; ++pos) {
    const double prev = std::fabs(L.re[L.idx(pos - 1, 0, 0)]);
    const double cur = std::fabs(L.re[L.idx(pos, 0, 0)]);
    CHECK(cur <= prev);
    CHECK(cur == doctest::Approx(prev * ratio).epsilon(1e-10));
  }
}

TEST_CASE("property: coefficients stay finite for extreme parameters") {
  Rng rng(61);
  for (int trial = 0; trial < 20; ++trial) {
    LaplaceNodeBank bank;
    const std::size_t s = 1 + rng.next_u64() % 4;
    for (std::size_t k = 0; k < s; ++k) {
      bank.sigma_raw.push_back(rng.uniform(-200.0, 200.0));
      bank.omega.push_back(rng.uniform(-50.0, 50.0));
    }
    bank.t_raw = rng.uniform(-100.0, 100.0);
    const SequenceTensor x = random_sequence(rng.next_u64(), 96, 2);
    const StltCoefficients a = stlt_streaming(x, bank, StltMode::bilateral);
    for (double e : a.re) CHECK(std::isfinite(e));
    for (double e : a.im) CHECK(std::isfinite(e));
    WindowSpec hann{WindowKind::hann, 1.0};
    const StltCoefficients b = stlt_direct(x, bank, hann, StltMode::unilateral);
    for (double e : b.re) CHECK(std::isfinite(e));
  }
}
