#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stlt/adaptive.hpp"
#include "stlt/node_bank.hpp"
#include "stlt/stlt_core.hpp"
#include "stlt/tape.hpp"
#include "stlt/tensor.hpp"

namespace stlt {

struct RelevanceMatrix {
  std::size_t n = 0, m = 0;
  std::vector<double> v;
  RelevanceMatrix() = default;
  RelevanceMatrix(std::size_t n_, std::size_t m_) : n(n_), m(m_), v(n_ * m_, 0.0) {}
  double& at(std::size_t i, std::size_t j) { return v[i * m + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * m + j]; }
};

// R[n][m] = Re( sum_k w_k sum_i L_a[n][k][i] * conj(L_b[m][k][i]) ) with
// w_k = m_tilde_k^2 when a mask is given (each coefficient set carries one
// factor of m_tilde), w_k = 1 otherwise.
RelevanceMatrix relevance(const StltCoefficients& a, const StltCoefficients& b,
                          const NodeMask* mask = nullptr);

// Z = rowsoftmax(R / sqrt(s)) * values; causal mixing zeroes mass on j > i.
SequenceTensor mix(const RelevanceMatrix& r, const SequenceTensor& values,
                   std::size_t s, bool causal);

// Memory-lean equivalent of relevance+mix for long sequences: relevance rows
// are produced in row blocks and discarded, so no n x n buffer is held.
SequenceTensor stlt_mix_rowblock(const StltCoefficients& coeffs,
                                 const SequenceTensor& values, std::size_t s,
                                 bool causal, std::size_t block_rows = 128);

struct BlockParams {
  LaplaceNodeBank bank;
  GateParams gate;
  Tensor w_value;              // d x d
  Tensor w1, w2;               // d x d_ff, d_ff x d
  Tensor ln1_gain, ln1_bias;   // d
  Tensor ln2_gain, ln2_bias;   // d
};

struct ModelParams {
  std::size_t vocab = 0, d = 0, d_ff = 0, n_ctx = 0, s_max = 0;
  Tensor embedding;   // vocab x d
  Tensor positional;  // n_ctx x d, fixed sinusoidal
  std::vector<BlockParams> encoder_blocks;
  std::vector<BlockParams> decoder_blocks;
  Tensor w_out;  // d x vocab
};

Tensor sinusoidal_positions(std::size_t n_ctx, std::size_t d);

struct BankInit {
  double sigma_min = 1e-3;
  double sigma_max = 10.0;
  double omega_max = 3.141592653589793;
  double t_init = 32.0;
  double delta = 1.0;
};

BlockParams init_block(std::size_t d, std::size_t d_ff, std::size_t s_max,
                       const BankInit& bi, std::uint64_t seed);
ModelParams init_lm_model(std::size_t vocab, std::size_t d, std::size_t d_ff,
                          std::size_t n_ctx, std::size_t n_layers, std::size_t s_max,
                          const BankInit& bi, std::uint64_t seed);

// Flat registry over every learnable tensor; the order is the canonical one
// for optimizer state and checkpoints.
struct ParamSlot {
  std::string name;
  double* data = nullptr;
  std::vector<std::size_t> shape;
  bool laplace = false;  // sigma_raw / omega / t_raw: scaled lr, no weight decay
  bool trainable = true;
  std::size_t size() const { return Tensor::count(shape); }
};
std::vector<ParamSlot> param_slots(ModelParams& p, bool freeze_omega = false);

struct BlockBinding {
  Tape::Id sigma_raw = -1, omega = -1, t_raw = -1;
  Tape::Id gate_w = -1, gate_b = -1;
  Tape::Id w_value = -1, w1 = -1, w2 = -1;
  Tape::Id ln1_gain = -1, ln1_bias = -1, ln2_gain = -1, ln2_bias = -1;
};

struct ModelBinding {
  std::vector<ParamSlot> slots;
  std::vector<Tape::Id> ids;  // aligned with slots
  Tape::Id embedding = -1, w_out = -1;
  std::vector<BlockBinding> encoder, decoder;
};

ModelBinding bind_model(Tape& t, ModelParams& p, bool trainable = true,
                        bool freeze_omega = false);

struct MixerOptions {
  MaskMode mask_mode = MaskMode::deterministic_eval;
  double lambda_t = 1.0;
  std::uint64_t mask_seed = 0;
  bool windowed = false;          // direct windowed path instead of streaming
  WindowSpec window;              // used when windowed
  const NodeMask* fixed_mask = nullptr;
  const Tensor* r_perturb = nullptr;  // added to the relevance matrix
  int perturb_layer = -1;             // decoder layer index receiving r_perturb
};

// Per-layer handles the training loop and diagnostics need.
struct BlockTrace {
  NodeMask mask;
  double s_eff = 0.0;
  Tape::Id m_tilde = -1;
  Tape::Id sigma_eff = -1;
  Tape::Id omega = -1;
  Tape::Id r = -1;
};

Tape::Id stlt_block_graph(Tape& t, Tape::Id x, const BlockParams& bp,
                          const BlockBinding& bb, StltMode mode, bool causal,
                          const MixerOptions& o, std::uint64_t layer_tag,
                          BlockTrace* trace);

Tape::Id decoder_block_graph(Tape& t, Tape::Id y, Tape::Id enc_out,
                             const BlockParams& self_p, const BlockBinding& self_b,
                             const BlockParams& cross_p, const BlockBinding& cross_b,
                             const MixerOptions& o_self, const MixerOptions& o_cross,
                             BlockTrace* self_trace, BlockTrace* cross_trace);

struct LmTrace {
  std::vector<BlockTrace> blocks;
  Tape::Id logits = -1;
};

Tape::Id forward_lm_graph(Tape& t, const ModelParams& p, const ModelBinding& b,
                          const std::vector<int>& tokens, const MixerOptions& o,
                          LmTrace* trace = nullptr);

// Plain forward wrappers (run a throwaway tape with frozen parameters).
SequenceTensor encoder_block(BlockParams& p, const SequenceTensor& x,
                             const NodeMask& mask);
SequenceTensor decoder_block(BlockParams& self_p, BlockParams& cross_p,
                             const SequenceTensor& y, const SequenceTensor& enc_out,
                             const NodeMask& self_mask, const NodeMask& cross_mask);
Tensor forward_lm(ModelParams& p, const std::vector<int>& tokens,
                  const MixerOptions& o = {});

}  // namespace stlt
