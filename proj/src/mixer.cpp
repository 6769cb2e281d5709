#include "stlt/mixer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "stlt/rng.hpp"

namespace stlt {

RelevanceMatrix relevance(const StltCoefficients& a, const StltCoefficients& b,
                          const NodeMask* mask) {
  if (a.s != b.s || a.d != b.d)
    throw std::invalid_argument("relevance: node/feature mismatch");
  if (mask && mask->m_tilde.size() != a.s)
    throw std::invalid_argument("relevance: mask size mismatch");
  const std::size_t len = a.s * a.d;
  RelevanceMatrix r(a.n, b.n);
  for (std::size_t i = 0; i < a.n; ++i)
    for (std::size_t j = 0; j < b.n; ++j) {
      double acc = 0.0;
      if (mask) {
        for (std::size_t k = 0; k < a.s; ++k) {
          const double w = mask->m_tilde[k] * mask->m_tilde[k];
          const std::size_t oa = (i * a.s + k) * a.d;
          const std::size_t ob = (j * b.s + k) * b.d;
          double dot = 0.0;
          for (std::size_t e = 0; e < a.d; ++e)
            dot += a.re[oa + e] * b.re[ob + e] + a.im[oa + e] * b.im[ob + e];
          acc += w * dot;
        }
      } else {
        const double* are = a.re.data() + i * len;
        const double* aim = a.im.data() + i * len;
        const double* bre = b.re.data() + j * len;
        const double* bim = b.im.data() + j * len;
        for (std::size_t e = 0; e < len; ++e)
          acc += are[e] * bre[e] + aim[e] * bim[e];
      }
      r.at(i, j) = acc;
    }
  return r;
}

SequenceTensor mix(const RelevanceMatrix& r, const SequenceTensor& values,
                   std::size_t s, bool causal) {
  if (r.m != values.n) throw std::invalid_argument("mix: shape mismatch");
  if (causal && r.n != r.m)
    throw std::invalid_argument("mix: causal mixing needs a square relevance");
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(s));
  SequenceTensor z(r.n, values.d);
  std::vector<double> p(r.m);
  for (std::size_t i = 0; i < r.n; ++i) {
    const std::size_t limit = causal ? i + 1 : r.m;
    double zmax = -1e300;
    for (std::size_t j = 0; j < limit; ++j)
      zmax = std::max(zmax, r.at(i, j) * inv_scale);
    double acc = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      p[j] = std::exp(r.at(i, j) * inv_scale - zmax);
      acc += p[j];
    }
    for (std::size_t j = 0; j < limit; ++j) {
      const double w = p[j] / acc;
      for (std::size_t e = 0; e < values.d; ++e)
        z.at(i, e) += w * values.at(j, e);
    }
  }
  return z;
}

SequenceTensor stlt_mix_rowblock(const StltCoefficients& coeffs,
                                 const SequenceTensor& values, std::size_t s,
                                 bool causal, std::size_t block_rows) {
  if (coeffs.n != values.n)
    throw std::invalid_argument("stlt_mix_rowblock: length mismatch");
  const std::size_t n = coeffs.n, len = coeffs.s * coeffs.d;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(s));
  SequenceTensor z(n, values.d);
  std::vector<double> row(n);
  for (std::size_t r0 = 0; r0 < n; r0 += block_rows) {
    const std::size_t r1 = std::min(n, r0 + block_rows);
    for (std::size_t i = r0; i < r1; ++i) {
      const std::size_t limit = causal ? i + 1 : n;
      const double* are = coeffs.re.data() + i * len;
      const double* aim = coeffs.im.data() + i * len;
      double zmax = -1e300;
      for (std::size_t j = 0; j < limit; ++j) {
        const double* bre = coeffs.re.data() + j * len;
        const double* bim = coeffs.im.data() + j * len;
        double acc = 0.0;
        for (std::size_t e = 0; e < len; ++e)
          acc += are[e] * bre[e] + aim[e] * bim[e];
        row[j] = acc * inv_scale;
        zmax = std::max(zmax, row[j]);
      }
      double acc = 0.0;
      for (std::size_t j = 0; j < limit; ++j) {
        row[j] = std::exp(row[j] - zmax);
        acc += row[j];
      }
      for (std::size_t j = 0; j < limit; ++j) {
        const double w = row[j] / acc;
        for (std::size_t e = 0; e < values.d; ++e)
          z.at(i, e) += w * values.at(j, e);
      }
    }
  }
  return z;
}

Tensor sinusoidal_positions(std::size_t n_ctx, std::size_t d) {
  Tensor p({n_ctx, d}, 0.0);
  for (std::size_t pos = 0; pos < n_ctx; ++pos)
    for (std::size_t i = 0; i < d; i += 2) {
      const double rate = std::exp(-std::log(10000.0) *
                                   static_cast<double>(i) / static_cast<double>(d));
      p[pos * d + i] = std::sin(static_cast<double>(pos) * rate);
      if (i + 1 < d) p[pos * d + i + 1] = std::cos(static_cast<double>(pos) * rate);
    }
  return p;
}

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
  Tensor t({rows, cols}, 0.0);
  for (double& e : t.v) e = scale * rng.normal();
  return t;
}

}  // namespace

BlockParams init_block(std::size_t d, std::size_t d_ff, std::size_t s_max,
                       const BankInit& bi, std::uint64_t seed) {
  BlockParams b;
  b.bank = init_bank(s_max, bi.sigma_min, bi.sigma_max, bi.omega_max, bi.t_init,
                     bi.delta, seed);
  b.gate = init_gate(s_max, d);
  Rng rng(substream(seed, 0x626c6b));
  b.w_value = random_matrix(d, d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  b.w1 = random_matrix(d, d_ff, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  b.w2 = random_matrix(d_ff, d, 1.0 / std::sqrt(static_cast<double>(d_ff)), rng);
  b.ln1_gain = Tensor({d}, 1.0);
  b.ln1_bias = Tensor({d}, 0.0);
  b.ln2_gain = Tensor({d}, 1.0);
  b.ln2_bias = Tensor({d}, 0.0);
  return b;
}

ModelParams init_lm_model(std::size_t vocab, std::size_t d, std::size_t d_ff,
                          std::size_t n_ctx, std::size_t n_layers, std::size_t s_max,
                          const BankInit& bi, std::uint64_t seed) {
  ModelParams p;
  p.vocab = vocab;
  p.d = d;
  p.d_ff = d_ff;
  p.n_ctx = n_ctx;
  p.s_max = s_max;
  Rng rng(substream(seed, 0x656d62));
  p.embedding = random_matrix(vocab, d, 0.1, rng);
  p.positional = sinusoidal_positions(n_ctx, d);
  for (std::size_t l = 0; l < n_layers; ++l)
    p.decoder_blocks.push_back(init_block(d, d_ff, s_max, bi, substream(seed, 0xdec0, l)));
  p.w_out = random_matrix(d, vocab, 0.02, rng);
  return p;
}

namespace {

void block_slots(std::vector<ParamSlot>& out, BlockParams& b, const std::string& prefix,
                 bool freeze_omega) {
  const std::size_t s = b.bank.s_max();
  const std::size_t d = b.gate.d;
  out.push_back({prefix + ".sigma_raw", b.bank.sigma_raw.data(), {s}, true, true});
  out.push_back({prefix + ".omega", b.bank.omega.data(), {s}, true, !freeze_omega});
  out.push_back({prefix + ".t_raw", &b.bank.t_raw, {1}, true, true});
  out.push_back({prefix + ".gate.w", b.gate.w_alpha.data(), {s, d}, false, true});
  out.push_back({prefix + ".gate.b", b.gate.b_alpha.data(), {s}, false, true});
  out.push_back({prefix + ".w_value", b.w_value.v.data(), b.w_value.shape, false, true});
  out.push_back({prefix + ".w1", b.w1.v.data(), b.w1.shape, false, true});
  out.push_back({prefix + ".w2", b.w2.v.data(), b.w2.shape, false, true});
  out.push_back({prefix + ".ln1.gain", b.ln1_gain.v.data(), b.ln1_gain.shape, false, true});
  out.push_back({prefix + ".ln1.bias", b.ln1_bias.v.data(), b.ln1_bias.shape, false, true});
  out.push_back({prefix + ".ln2.gain", b.ln2_gain.v.data(), b.ln2_gain.shape, false, true});
  out.push_back({prefix + ".ln2.bias", b.ln2_bias.v.data(), b.ln2_bias.shape, false, true});
}

}  // namespace

std::vector<ParamSlot> param_slots(ModelParams& p, bool freeze_omega) {
  std::vector<ParamSlot> out;
  out.push_back({"embedding", p.embedding.v.data(), p.embedding.shape, false, true});
  for (std::size_t l = 0; l < p.encoder_blocks.size(); ++l)
    block_slots(out, p.encoder_blocks[l], "enc" + std::to_string(l), freeze_omega);
  for (std::size_t l = 0; l < p.decoder_blocks.size(); ++l)
    block_slots(out, p.decoder_blocks[l], "dec" + std::to_string(l), freeze_omega);
  out.push_back({"w_out", p.w_out.v.data(), p.w_out.shape, false, true});
  return out;
}

ModelBinding bind_model(Tape& t, ModelParams& p, bool trainable, bool freeze_omega) {
  ModelBinding b;
  b.slots = param_slots(p, freeze_omega);
  b.ids.reserve(b.slots.size());
  for (const ParamSlot& s : b.slots) {
    Tensor value(s.shape, std::vector<double>(s.data, s.data + s.size()));
    b.ids.push_back(t.leaf(std::move(value), trainable && s.trainable));
  }
  std::size_t i = 0;
  auto take_block = [&](BlockBinding& bb) {
    bb.sigma_raw = b.ids[i++];
    bb.omega = b.ids[i++];
    bb.t_raw = b.ids[i++];
    bb.gate_w = b.ids[i++];
    bb.gate_b = b.ids[i++];
    bb.w_value = b.ids[i++];
    bb.w1 = b.ids[i++];
    bb.w2 = b.ids[i++];
    bb.ln1_gain = b.ids[i++];
    bb.ln1_bias = b.ids[i++];
    bb.ln2_gain = b.ids[i++];
    bb.ln2_bias = b.ids[i++];
  };
  b.embedding = b.ids[i++];
  b.encoder.resize(p.encoder_blocks.size());
  for (BlockBinding& bb : b.encoder) take_block(bb);
  b.decoder.resize(p.decoder_blocks.size());
  for (BlockBinding& bb : b.decoder) take_block(bb);
  b.w_out = b.ids[i++];
  return b;
}

namespace {

// Gate scores, mask sampling, masked STLT, relevance, softmax mixing.
// Returns the mixed Z node and fills the trace.
Tape::Id sequence_mix_graph(Tape& t, Tape::Id x, const BlockParams& bp,
                            const BlockBinding& bb, StltMode mode, bool causal,
                            const MixerOptions& o, std::uint64_t layer_tag,
                            BlockTrace* trace) {
  const double delta = bp.bank.delta;
  const std::size_t s_max = bp.bank.s_max();

  Tape::Id m_id;
  NodeMask mask;
  if (o.fixed_mask) {
    mask = *o.fixed_mask;
    m_id = t.leaf(Tensor({mask.m_tilde.size()}, mask.m_tilde), false);
  } else {
    Tape::Id pooled = t.mean_pool_rows(x);
    Tape::Id pre = t.add(t.matvec(bb.gate_w, pooled), bb.gate_b);
    Tape::Id alpha = t.clamp(t.sigmoid_op(pre), 1e-6, 1.0 - 1e-6);
    const std::vector<double> alpha_v = t.val(alpha).v;
    mask = sample_mask(alpha_v, o.lambda_t, substream(o.mask_seed, 0x6d61736b, layer_tag),
                       o.mask_mode);
    if (o.mask_mode == MaskMode::hard_threshold) {
      m_id = t.leaf(Tensor({mask.m_tilde.size()}, mask.m_tilde), false);
    } else {
      m_id = t.concrete_mask(alpha, mask.gumbel, o.lambda_t);
    }
  }

  Tape::Id sigma_eff = t.softplus_shift(bb.sigma_raw, kEpsSigma);
  Tape::Id coeffs;
  if (o.windowed) {
    const double t_eff = softplus(t.val(bb.t_raw)[0]) + bp.bank.t_min();
    coeffs = t.stlt_direct(x, sigma_eff, bb.omega, t_eff, o.window, mode, delta);
  } else {
    coeffs = t.stlt_streaming(x, sigma_eff, bb.omega, mode, delta);
  }
  Tape::Id masked = t.apply_node_mask(coeffs, m_id);
  Tape::Id r = t.relevance(masked, masked);
  if (o.r_perturb) r = t.add_rows_const(r, *o.r_perturb);
  Tape::Id values = t.matmul(x, bb.w_value);
  Tape::Id z = t.mix(r, values, static_cast<double>(s_max), causal);

  if (trace) {
    trace->mask = mask;
    trace->s_eff = s_eff(mask);
    trace->m_tilde = m_id;
    trace->sigma_eff = sigma_eff;
    trace->omega = bb.omega;
    trace->r = r;
  }
  return z;
}

Tape::Id ffn_graph(Tape& t, Tape::Id y, const BlockBinding& bb) {
  return t.matmul(t.gelu(t.matmul(y, bb.w1)), bb.w2);
}

}  // namespace

Tape::Id stlt_block_graph(Tape& t, Tape::Id x, const BlockParams& bp,
                          const BlockBinding& bb, StltMode mode, bool causal,
                          const MixerOptions& o, std::uint64_t layer_tag,
                          BlockTrace* trace) {
  Tape::Id z = sequence_mix_graph(t, x, bp, bb, mode, causal, o, layer_tag, trace);
  Tape::Id y1 = t.layer_norm(t.add(x, z), bb.ln1_gain, bb.ln1_bias);
  Tape::Id out = t.layer_norm(t.add(y1, ffn_graph(t, y1, bb)), bb.ln2_gain, bb.ln2_bias);
  return out;
}

Tape::Id decoder_block_graph(Tape& t, Tape::Id y, Tape::Id enc_out,
                             const BlockParams& self_p, const BlockBinding& self_b,
                             const BlockParams& cross_p, const BlockBinding& cross_b,
                             const MixerOptions& o_self, const MixerOptions& o_cross,
                             BlockTrace* self_trace, BlockTrace* cross_trace) {
  Tape::Id a = stlt_block_graph(t, y, self_p, self_b, StltMode::unilateral, true,
                                o_self, 0, self_trace);

  // Cross stage: causal coefficients over decoder states against bilateral
  // coefficients over encoder states, sharing the cross bank and mask; mixing
  // is non-causal over encoder positions.
  const double delta = cross_p.bank.delta;
  Tape::Id m_id;
  NodeMask mask;
  if (o_cross.fixed_mask) {
    mask = *o_cross.fixed_mask;
    m_id = t.leaf(Tensor({mask.m_tilde.size()}, mask.m_tilde), false);
  } else {
    Tape::Id pooled = t.mean_pool_rows(a);
    Tape::Id pre = t.add(t.matvec(cross_b.gate_w, pooled), cross_b.gate_b);
    Tape::Id alpha = t.clamp(t.sigmoid_op(pre), 1e-6, 1.0 - 1e-6);
    mask = sample_mask(t.val(alpha).v, o_cross.lambda_t,
                       substream(o_cross.mask_seed, 0x6d61736b, 1), o_cross.mask_mode);
    if (o_cross.mask_mode == MaskMode::hard_threshold)
      m_id = t.leaf(Tensor({mask.m_tilde.size()}, mask.m_tilde), false);
    else
      m_id = t.concrete_mask(alpha, mask.gumbel, o_cross.lambda_t);
  }
  Tape::Id sigma_eff = t.softplus_shift(cross_b.sigma_raw, kEpsSigma);
  Tape::Id l_dec = t.stlt_streaming(a, sigma_eff, cross_b.omega, StltMode::unilateral, delta);
  Tape::Id l_enc = t.stlt_streaming(enc_out, sigma_eff, cross_b.omega, StltMode::bilateral, delta);
  Tape::Id r = t.relevance(t.apply_node_mask(l_dec, m_id), t.apply_node_mask(l_enc, m_id));
  Tape::Id values = t.matmul(enc_out, cross_b.w_value);
  Tape::Id z = t.mix(r, values, static_cast<double>(cross_p.bank.s_max()), false);
  if (cross_trace) {
    cross_trace->mask = mask;
    cross_trace->s_eff = s_eff(mask);
    cross_trace->m_tilde = m_id;
    cross_trace->sigma_eff = sigma_eff;
    cross_trace->omega = cross_b.omega;
    cross_trace->r = r;
  }
  Tape::Id c = t.layer_norm(t.add(a, z), cross_b.ln1_gain, cross_b.ln1_bias);
  return t.layer_norm(t.add(c, ffn_graph(t, c, cross_b)), cross_b.ln2_gain,
                      cross_b.ln2_bias);
}

Tape::Id forward_lm_graph(Tape& t, const ModelParams& p, const ModelBinding& b,
                          const std::vector<int>& tokens, const MixerOptions& o,
                          LmTrace* trace) {
  const std::size_t n = tokens.size();
  if (n == 0) throw std::invalid_argument("forward_lm: empty token sequence");
  if (n > p.n_ctx) throw std::invalid_argument("forward_lm: sequence exceeds context");
  for (int id : tokens)
    if (id < 0 || static_cast<std::size_t>(id) >= p.vocab)
      throw std::out_of_range("forward_lm: token id outside vocabulary");

  Tape::Id x = t.embedding_lookup(b.embedding, tokens);
  Tensor pos({n, p.d}, 0.0);
  std::copy_n(p.positional.v.data(), n * p.d, pos.v.begin());
  x = t.add_rows_const(x, pos);

  if (trace) trace->blocks.resize(p.decoder_blocks.size());
  for (std::size_t l = 0; l < p.decoder_blocks.size(); ++l) {
    MixerOptions lo = o;
    lo.r_perturb = (o.r_perturb && o.perturb_layer == static_cast<int>(l))
                       ? o.r_perturb
                       : nullptr;
    x = stlt_block_graph(t, x, p.decoder_blocks[l], b.decoder[l],
                         StltMode::unilateral, true, lo, l,
                         trace ? &trace->blocks[l] : nullptr);
  }
  Tape::Id logits = t.matmul(x, b.w_out);
  if (trace) trace->logits = logits;
  return logits;
}

SequenceTensor encoder_block(BlockParams& p, const SequenceTensor& x,
                             const NodeMask& mask) {
  Tape t;
  ModelParams tmp;  // binding helper wants a model; bind just this block
  Tape::Id xid = t.leaf(Tensor({x.n, x.d}, x.v), false);
  // Local binding of one block's tensors.
  BlockBinding bb;
  bb.sigma_raw = t.leaf(Tensor({p.bank.s_max()}, p.bank.sigma_raw), false);
  bb.omega = t.leaf(Tensor({p.bank.s_max()}, p.bank.omega), false);
  bb.t_raw = t.leaf(Tensor({std::size_t{1}}, {p.bank.t_raw}), false);
  bb.gate_w = t.leaf(Tensor({p.gate.s_max, p.gate.d}, p.gate.w_alpha), false);
  bb.gate_b = t.leaf(Tensor({p.gate.s_max}, p.gate.b_alpha), false);
  bb.w_value = t.leaf(p.w_value, false);
  bb.w1 = t.leaf(p.w1, false);
  bb.w2 = t.leaf(p.w2, false);
  bb.ln1_gain = t.leaf(p.ln1_gain, false);
  bb.ln1_bias = t.leaf(p.ln1_bias, false);
  bb.ln2_gain = t.leaf(p.ln2_gain, false);
  bb.ln2_bias = t.leaf(p.ln2_bias, false);
  MixerOptions o;
  o.fixed_mask = &mask;
  Tape::Id out = stlt_block_graph(t, xid, p, bb, StltMode::bilateral, false, o, 0, nullptr);
  SequenceTensor y(x.n, x.d);
  y.v = t.val(out).v;
  return y;
}

SequenceTensor decoder_block(BlockParams& self_p, BlockParams& cross_p,
                             const SequenceTensor& y, const SequenceTensor& enc_out,
                             const NodeMask& self_mask, const NodeMask& cross_mask) {
  Tape t;
  auto bind_one = [&](BlockParams& p) {
    BlockBinding bb;
    bb.sigma_raw = t.leaf(Tensor({p.bank.s_max()}, p.bank.sigma_raw), false);
    bb.omega = t.leaf(Tensor({p.bank.s_max()}, p.bank.omega), false);
    bb.t_raw = t.leaf(Tensor({std::size_t{1}}, {p.bank.t_raw}), false);
    bb.gate_w = t.leaf(Tensor({p.gate.s_max, p.gate.d}, p.gate.w_alpha), false);
    bb.gate_b = t.leaf(Tensor({p.gate.s_max}, p.gate.b_alpha), false);
    bb.w_value = t.leaf(p.w_value, false);
    bb.w1 = t.leaf(p.w1, false);
    bb.w2 = t.leaf(p.w2, false);
    bb.ln1_gain = t.leaf(p.ln1_gain, false);
    bb.ln1_bias = t.leaf(p.ln1_bias, false);
    bb.ln2_gain = t.leaf(p.ln2_gain, false);
    bb.ln2_bias = t.leaf(p.ln2_bias, false);
    return bb;
  };
  Tape::Id yid = t.leaf(Tensor({y.n, y.d}, y.v), false);
  Tape::Id eid = t.leaf(Tensor({enc_out.n, enc_out.d}, enc_out.v), false);
  BlockBinding sb = bind_one(self_p);
  BlockBinding cb = bind_one(cross_p);
  MixerOptions os, oc;
  os.fixed_mask = &self_mask;
  oc.fixed_mask = &cross_mask;
  Tape::Id out = decoder_block_graph(t, yid, eid, self_p, sb, cross_p, cb, os, oc,
                                     nullptr, nullptr);
  SequenceTensor z(y.n, y.d);
  z.v = t.val(out).v;
  return z;
}

Tensor forward_lm(ModelParams& p, const std::vector<int>& tokens,
                  const MixerOptions& o) {
  Tape t;
  ModelBinding b = bind_model(t, p, false);
  Tape::Id logits = forward_lm_graph(t, p, b, tokens, o);
  return t.val(logits);
}

}  // namespace stlt
