#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "stlt/node_bank.hpp"
#include "stlt/stlt_core.hpp"
#include "stlt/tensor.hpp"

namespace stlt {

// Define-by-run reverse-mode tape. Values are computed eagerly; each op
// records a backward rule over whole tensors. backward() sweeps nodes in
// reverse creation order (reverse topological by construction) and
// accumulates gradients additively across fan-out.
//
// Complex STLT coefficients travel as one tensor of shape {2, n, s, d}:
// plane 0 real, plane 1 imaginary.
class Tape {
 public:
  using Id = int;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Id leaf(Tensor value, bool requires_grad = true);
  const Tensor& val(Id id) const { return nodes_[check(id)].value; }
  bool requires_grad(Id id) const { return nodes_[check(id)].requires_grad; }
  // Gradient after backward(); throws if the node never received one.
  const Tensor& grad(Id id) const;
  // nullptr when the node has no gradient (unused or grad-free).
  const Tensor* grad_ptr(Id id) const;
  std::size_t node_count() const { return nodes_.size(); }

  void backward(Id loss);

  // dense / elementwise
  Id add(Id a, Id b);
  Id mul(Id a, Id b);
  Id scale(Id a, double c);
  Id add_rows_const(Id x, const Tensor& rows);
  Id matmul(Id a, Id b);  // (p,q) x (q,r)
  Id row_bias(Id x, Id b);
  Id matvec(Id w, Id x);  // (p,q) x (q)
  Id sigmoid_op(Id a);
  Id gelu(Id a);
  Id clamp(Id a, double lo, double hi);
  Id mean_pool_rows(Id x);
  Id layer_norm(Id x, Id gain, Id bias);
  Id sum(Id a);
  Id weighted_sum(const std::vector<std::pair<Id, double>>& terms);
  Id embedding_lookup(Id table, std::vector<int> ids);
  Id softmax_cross_entropy(Id logits, std::vector<int> targets);
  Id softplus_shift(Id raw, double eps);

  // sequence-mixer ops
  Id stlt_streaming(Id x, Id sigma_eff, Id omega, StltMode mode, double delta);
  Id stlt_direct(Id x, Id sigma_eff, Id omega, double t_eff, WindowSpec spec,
                 StltMode mode, double delta);
  Id apply_node_mask(Id coeffs, Id mask);
  Id relevance(Id la, Id lb);
  Id relevance_masked(Id la, Id lb, Id mask);
  Id mix(Id r, Id values, double s_scale, bool causal);
  Id concrete_mask(Id alpha, std::vector<double> gumbel, double lambda_t);
  Id abs_weighted_sum(Id w, Id m);
  Id sigma_smoothness(Id sigma_eff, Id m);

 private:
  using BackFn = std::function<void(Tape&, Id)>;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackFn back;
  };

  std::deque<Node> nodes_;

  Id check(Id id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw std::out_of_range("Tape: bad node id");
    return id;
  }
  Id push(Tensor value, std::initializer_list<Id> parents, BackFn back);
  // Gradient accumulation buffer; nullptr when the parent needs no gradient.
  Tensor* gbuf(Id id);
  const Tensor& gval(Id id) const { return nodes_[id].grad; }
};

}  // namespace stlt
