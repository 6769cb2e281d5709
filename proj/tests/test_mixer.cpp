#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "stlt/losses.hpp"
#include "stlt/mixer.hpp"
#include "stlt/rng.hpp"

using namespace stlt;

namespace {

StltCoefficients random_coeffs(std::uint64_t seed, std::size_t n, std::size_t s,
                               std::size_t d) {
  Rng rng(seed);
  StltCoefficients c(n, s, d);
  for (double& e : c.re) e = rng.normal();
  for (double& e : c.im) e = rng.normal();
  return c;
}

SequenceTensor random_seq(std::uint64_t seed, std::size_t n, std::size_t d) {
  Rng rng(seed);
  SequenceTensor x(n, d);
  for (double& e : x.v) e = rng.normal();
  return x;
}

NodeMask unit_mask(std::size_t s) {
  NodeMask m;
  m.alpha.assign(s, 0.5);
  m.gumbel.assign(s, 0.0);
  m.m_tilde.assign(s, 1.0);
  m.mode = MaskMode::deterministic_eval;
  return m;
}

// Straight-line reference for one bilateral block, written independently of
// the tape path: explicit loops, no shared helpers.
SequenceTensor reference_encoder_block(const BlockParams& p, const SequenceTensor& x,
                                       const NodeMask& mask) {
  const EffectiveParams eff = effective_params(p.bank);
  const std::size_t n = x.n, d = x.d, s = p.bank.s_max();
  // coefficients, exponential weighting, both directions
  std::vector<double> lre(n * s * d, 0.0), lim(n * s * d, 0.0);
  for (std::size_t pos = 0; pos < n; ++pos)
    for (std::size_t k = 0; k < s; ++k)
      for (std::size_t m = 0; m < n; ++m) {
        const double lag =
            std::fabs(static_cast<double>(m) - static_cast<double>(pos));
        const double decay = std::exp(-eff.sigma[k] * lag) * mask.m_tilde[k];
        for (std::size_t i = 0; i < d; ++i) {
          lre[(pos * s + k) * d + i] +=
              x.at(m, i) * decay * std::cos(eff.omega[k] * lag);
          lim[(pos * s + k) * d + i] -=
              x.at(m, i) * decay * std::sin(eff.omega[k] * lag);
        }
      }
  // relevance and row softmax
  std::vector<double> r(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < s; ++k)
        for (std::size_t e = 0; e < d; ++e)
          acc += lre[(i * s + k) * d + e] * lre[(j * s + k) * d + e] +
                 lim[(i * s + k) * d + e] * lim[(j * s + k) * d + e];
      r[i * n + j] = acc / std::sqrt(static_cast<double>(s));
    }
  // values
  std::vector<double> values(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t e = 0; e < d; ++e)
        values[i * d + j] += x.at(i, e) * p.w_value[e * d + j];
  std::vector<double> z(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double zmax = r[i * n];
    for (std::size_t j = 1; j < n; ++j) zmax = std::max(zmax, r[i * n + j]);
    double acc = 0.0;
    std::vector<double> pr(n);
    for (std::size_t j = 0; j < n; ++j) {
      pr[j] = std::exp(r[i * n + j] - zmax);
      acc += pr[j];
    }
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t e = 0; e < d; ++e)
        z[i * d + e] += pr[j] / acc * values[j * d + e];
  }
  // residual + LN, FFN with GELU, residual + LN
  auto layer_norm_row = [&](std::vector<double>& row, const Tensor& gain,
                            const Tensor& bias) {
    double mu = 0.0;
    for (double e : row) mu += e;
    mu /= row.size();
    double var = 0.0;
    for (double e : row) var += (e - mu) * (e - mu);
    var /= row.size();
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t j = 0; j < row.size(); ++j)
      row[j] = gain[j] * (row[j] - mu) * inv + bias[j];
  };
  SequenceTensor out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(d);
    for (std::size_t j = 0; j < d; ++j) row[j] = x.at(i, j) + z[i * d + j];
    layer_norm_row(row, p.ln1_gain, p.ln1_bias);
    std::vector<double> hidden(p.w1.dim(1), 0.0);
    for (std::size_t h = 0; h < hidden.size(); ++h) {
      for (std::size_t j = 0; j < d; ++j) hidden[h] += row[j] * p.w1[j * hidden.size() + h];
      hidden[h] = 0.5 * hidden[h] * (1.0 + std::erf(hidden[h] / std::sqrt(2.0)));
    }
    std::vector<double> ffn(d, 0.0);
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t h = 0; h < hidden.size(); ++h)
        ffn[j] += hidden[h] * p.w2[h * d + j];
    for (std::size_t j = 0; j < d; ++j) row[j] += ffn[j];
    layer_norm_row(row, p.ln2_gain, p.ln2_bias);
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = row[j];
  }
  return out;
}

}  // namespace

TEST_CASE("relevance closed forms") {
  // single nonzero entry
  StltCoefficients a(2, 1, 1);
  a.re[a.idx(0, 0, 0)] = 1.0;
  const RelevanceMatrix r = relevance(a, a);
  CHECK(r.at(0, 0) == 1.0);
  CHECK(r.at(0, 1) == 0.0);
  CHECK(r.at(1, 0) == 0.0);
  CHECK(r.at(1, 1) == 0.0);
}

TEST_CASE("relevance matches a brute-force triple loop") {
  const StltCoefficients a = random_coeffs(1, 16, 4, 2);
  const StltCoefficients b = random_coeffs(2, 12, 4, 2);
  const RelevanceMatrix r = relevance(a, b);
  for (std::size_t i = 0; i < a.n; ++i)
    for (std::size_t j = 0; j < b.n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t e = 0; e < 2; ++e)
          acc += a.re[a.idx(i, k, e)] * b.re[b.idx(j, k, e)] +
                 a.im[a.idx(i, k, e)] * b.im[b.idx(j, k, e)];
      CHECK(r.at(i, j) == doctest::Approx(acc).epsilon(1e-10));
    }
}

TEST_CASE("self-relevance is symmetric") {
  const StltCoefficients a = random_coeffs(3, 10, 3, 2);
  const RelevanceMatrix r = relevance(a, a);
  for (std::size_t i = 0; i < r.n; ++i)
    for (std::size_t j = 0; j < r.m; ++j)
      CHECK(r.at(i, j) == doctest::Approx(r.at(j, i)).epsilon(1e-12));
}

TEST_CASE("masked relevance equals squared-mask weighting of masked coefficients") {
  const StltCoefficients a = random_coeffs(4, 8, 3, 2);
  NodeMask m = unit_mask(3);
  m.m_tilde = {0.3, 0.9, 0.5};
  const RelevanceMatrix direct = relevance(a, a, &m);
  const StltCoefficients masked = apply_mask(a, m);
  const RelevanceMatrix via_apply = relevance(masked, masked);
  for (std::size_t i = 0; i < direct.v.size(); ++i)
    CHECK(direct.v[i] == doctest::Approx(via_apply.v[i]).epsilon(1e-10));
}

TEST_CASE("mix closed forms") {
  // zero relevance: every output row is the mean of the value rows
  RelevanceMatrix r(3, 3);
  SequenceTensor v = random_seq(5, 3, 2);
  const SequenceTensor z = mix(r, v, 4, false);
  for (std::size_t e = 0; e < 2; ++e) {
    const double mean = (v.at(0, e) + v.at(1, e) + v.at(2, e)) / 3.0;
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(z.at(i, e) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("mix: dominant entry and causal row 0") {
  SequenceTensor v = random_seq(6, 3, 2);
  RelevanceMatrix dom(3, 3);
  dom.at(0, 2) = 1e6;
  const SequenceTensor z = mix(dom, v, 3, false);
  CHECK(z.at(0, 0) == doctest::Approx(v.at(2, 0)).epsilon(1e-9));
  CHECK(z.at(0, 1) == doctest::Approx(v.at(2, 1)).epsilon(1e-9));

  RelevanceMatrix r(3, 3);
  Rng rng(7);
  for (double& e : r.v) e = rng.normal();
  const SequenceTensor zc = mix(r, v, 3, true);
  CHECK(zc.at(0, 0) == doctest::Approx(v.at(0, 0)).epsilon(1e-12));
  CHECK(zc.at(0, 1) == doctest::Approx(v.at(0, 1)).epsilon(1e-12));
}

TEST_CASE("property: softmax rows sum to one, causal rows ignore the future") {
  Rng rng(11);
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t n = 2 + rng.next_u64() % 12;
    const std::size_t s = 1 + rng.next_u64() % 6;
    StltCoefficients c = random_coeffs(rng.next_u64(), n, s, 2);
    const RelevanceMatrix r = relevance(c, c);
    for (bool causal : {false, true}) {
      // recover the softmax weights by mixing one-hot value columns
      SequenceTensor eye(n, n);
      for (std::size_t i = 0; i < n; ++i) eye.at(i, i) = 1.0;
      const SequenceTensor p = mix(r, eye, s, causal);
      for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          row += p.at(i, j);
          CHECK(p.at(i, j) >= 0.0);
          if (causal && j > i) CHECK(p.at(i, j) == 0.0);
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("row-block mixing equals the dense path") {
  const StltCoefficients c = random_coeffs(21, 300, 4, 3);
  const SequenceTensor v = random_seq(22, 300, 3);
  for (bool causal : {false, true}) {
    const SequenceTensor dense = mix(relevance(c, c), v, 4, causal);
    const SequenceTensor blocked = stlt_mix_rowblock(c, v, 4, causal, 128);
    for (std::size_t i = 0; i < dense.v.size(); ++i)
      CHECK(dense.v[i] == doctest::Approx(blocked.v[i]).epsilon(1e-10));
  }
}

TEST_CASE("encoder block: shapes, finiteness, reference match") {
  BankInit bi;
  bi.sigma_min = 0.05;
  bi.sigma_max = 2.0;
  bi.omega_max = 1.0;
  bi.t_init = 6.0;
  BlockParams p = init_block(4, 8, 3, bi, 99);
  const NodeMask mask = unit_mask(3);

  // zero input stays finite and produces the right shape
  SequenceTensor zeros(5, 4);
  const SequenceTensor zout = encoder_block(p, zeros, mask);
  CHECK(zout.n == 5);
  CHECK(zout.d == 4);
  for (double e : zout.v) CHECK(std::isfinite(e));

  for (std::size_t n : {1, 3, 8}) {
    const SequenceTensor x = random_seq(100 + n, n, 4);
    const SequenceTensor out = encoder_block(p, x, mask);
    CHECK(out.n == n);
    CHECK(out.d == 4);
  }

  // value-for-value against the straight-line reference
  NodeMask fractional = unit_mask(3);
  fractional.m_tilde = {0.8, 0.4, 1.0};
  const SequenceTensor x = random_seq(123, 8, 4);
  const SequenceTensor got = encoder_block(p, x, fractional);
  const SequenceTensor want = reference_encoder_block(p, x, fractional);
  for (std::size_t i = 0; i < got.v.size(); ++i)
    CHECK(got.v[i] == doctest::Approx(want.v[i]).epsilon(1e-9));
}

TEST_CASE("encoder block with the mixer ablated is position-wise") {
  // With Z forced to zero the block is LN2(y + FFN(y)), y = LN1(x): a pure
  // per-position map, so permuting input rows permutes output rows.
  BankInit bi;
  BlockParams p = init_block(4, 8, 2, bi, 7);
  const SequenceTensor x = random_seq(31, 6, 4);

  auto ablated = [&](const SequenceTensor& in) {
    Tape t;
    Tape::Id xid = t.leaf(Tensor({in.n, in.d}, in.v), false);
    Tape::Id g1 = t.leaf(p.ln1_gain, false), b1 = t.leaf(p.ln1_bias, false);
    Tape::Id g2 = t.leaf(p.ln2_gain, false), b2 = t.leaf(p.ln2_bias, false);
    Tape::Id w1 = t.leaf(p.w1, false), w2 = t.leaf(p.w2, false);
    Tape::Id y1 = t.layer_norm(xid, g1, b1);
    Tape::Id out = t.layer_norm(t.add(y1, t.matmul(t.gelu(t.matmul(y1, w1)), w2)), g2, b2);
    return t.val(out);
  };
  const Tensor base = ablated(x);
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  SequenceTensor shuffled(6, 4);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 4; ++j) shuffled.at(i, j) = x.at(perm[i], j);
  const Tensor permuted = ablated(shuffled);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(permuted[i * 4 + j] == doctest::Approx(base[perm[i] * 4 + j]).epsilon(1e-12));
}

TEST_CASE("decoder block: causality, single-position encoder, reference") {
  BankInit bi;
  bi.sigma_min = 0.05;
  bi.sigma_max = 2.0;
  bi.t_init = 6.0;
  BlockParams self_p = init_block(4, 8, 3, bi, 201);
  BlockParams cross_p = init_block(4, 8, 3, bi, 202);
  const NodeMask mask = unit_mask(3);

  // causality: perturbing y at position m leaves outputs before m unchanged
  const SequenceTensor enc = random_seq(210, 5, 4);
  SequenceTensor y = random_seq(211, 6, 4);
  const SequenceTensor base = decoder_block(self_p, cross_p, y, enc, mask, mask);
  SequenceTensor y2 = y;
  y2.at(4, 1) += 0.5;
  const SequenceTensor bumped = decoder_block(self_p, cross_p, y2, enc, mask, mask);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(base.at(i, j) == bumped.at(i, j));

  // encoder of length one: cross mixing can only return that value row
  const SequenceTensor enc1 = random_seq(212, 1, 4);
  const SequenceTensor out1 = decoder_block(self_p, cross_p, y, enc1, mask, mask);
  CHECK(out1.n == 6);
  for (double e : out1.v) CHECK(std::isfinite(e));
  // cross-mix output must equal the single projected encoder value at every
  // position, checked through the final FFN by comparing two y rows fed the
  // same cross context... instead verify directly on the mix:
  {
    Tape t;
    const EffectiveParams eff = effective_params(cross_p.bank);
    Tape::Id sig = t.leaf(Tensor({eff.sigma.size()}, eff.sigma), false);
    Tape::Id omg = t.leaf(Tensor({eff.omega.size()}, eff.omega), false);
    Tape::Id yid = t.leaf(Tensor({y.n, y.d}, y.v), false);
    Tape::Id eid = t.leaf(Tensor({enc1.n, enc1.d}, enc1.v), false);
    Tape::Id ld = t.stlt_streaming(yid, sig, omg, StltMode::unilateral, 1.0);
    Tape::Id le = t.stlt_streaming(eid, sig, omg, StltMode::bilateral, 1.0);
    Tape::Id r = t.relevance(ld, le);
    Tape::Id wv = t.leaf(cross_p.w_value, false);
    Tape::Id z = t.mix(r, t.matmul(eid, wv), 3.0, false);
    const Tensor& zv = t.val(z);
    const Tensor& ev = t.val(t.matmul(eid, wv));
    for (std::size_t i = 0; i < y.n; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        CHECK(zv[i * 4 + j] == doctest::Approx(ev[j]).epsilon(1e-12));
  }
}

TEST_CASE("forward_lm: shapes, causality, and init loss") {
  BankInit bi;
  bi.sigma_min = 0.05;
  bi.sigma_max = 2.0;
  bi.t_init = 6.0;
  ModelParams model = init_lm_model(16, 16, 32, 32, 2, 4, bi, 31415);
  MixerOptions o;
  o.mask_mode = MaskMode::deterministic_eval;

  // single token
  const Tensor one = forward_lm(model, {3}, o);
  CHECK(one.dim(0) == 1);
  CHECK(one.dim(1) == 16);

  // flipping the last token leaves earlier logits bit-identical
  Rng rng(8);
  std::vector<int> tokens(12);
  for (int& t : tokens) t = static_cast<int>(rng.next_u64() % 16);
  const Tensor base = forward_lm(model, tokens, o);
  std::vector<int> flipped = tokens;
  flipped.back() = (flipped.back() + 5) % 16;
  const Tensor alt = forward_lm(model, flipped, o);
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i)
    for (std::size_t j = 0; j < 16; ++j)
      CHECK(base[i * 16 + j] == alt[i * 16 + j]);

  // out-of-vocabulary token
  CHECK_THROWS_AS(forward_lm(model, {99}, o), std::out_of_range);

  // near-uniform prediction at init: loss ~ ln(vocab)
  std::vector<int> targets(tokens.begin() + 1, tokens.end());
  targets.push_back(0);
  const double loss = cross_entropy(base.v, tokens.size(), 16, targets);
  CHECK(loss == doctest::Approx(std::log(16.0)).epsilon(0.05));
}

TEST_CASE("property: end-to-end causality of forward_lm is bitwise") {
  BankInit bi;
  bi.sigma_min = 0.05;
  bi.sigma_max = 2.0;
  ModelParams model = init_lm_model(8, 8, 16, 24, 2, 4, bi, 999);
  MixerOptions o;
  o.mask_mode = MaskMode::deterministic_eval;
  Rng rng(1000);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 4 + rng.next_u64() % 12;
    std::vector<int> tokens(n);
    for (int& t : tokens) t = static_cast<int>(rng.next_u64() % 8);
    const std::size_t flip = 1 + rng.next_u64() % (n - 1);
    std::vector<int> other = tokens;
    other[flip] = (other[flip] + 1 + static_cast<int>(rng.next_u64() % 7)) % 8;
    const Tensor a = forward_lm(model, tokens, o);
    const Tensor b = forward_lm(model, other, o);
    for (std::size_t i = 0; i < flip; ++i)
      for (std::size_t j = 0; j < 8; ++j) CHECK(a[i * 8 + j] == b[i * 8 + j]);
  }
}

TEST_CASE("masked-out node makes outputs independent of its parameters") {
  BankInit bi;
  bi.sigma_min = 0.05;
  bi.sigma_max = 2.0;
  ModelParams model = init_lm_model(8, 8, 16, 16, 1, 4, bi, 555);
  // drive one gate bias very negative so the hard mask kills node 2
  model.decoder_blocks[0].gate.b_alpha = {3.0, 3.0, -30.0, 3.0};
  MixerOptions o;
  o.mask_mode = MaskMode::hard_threshold;
  std::vector<int> tokens{1, 5, 2, 7, 0, 3};
  const Tensor base = forward_lm(model, tokens, o);
  ModelParams poked = model;
  poked.decoder_blocks[0].bank.sigma_raw[2] += 17.0;
  poked.decoder_blocks[0].bank.omega[2] -= 2.5;
  const Tensor alt = forward_lm(poked, tokens, o);
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(base[i] == alt[i]);
}
