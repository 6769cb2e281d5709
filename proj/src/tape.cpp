#include "stlt/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stlt {

namespace {
constexpr double kLnEps = 1e-5;        // layer-norm variance floor
constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;
}  // namespace

Tape::Id Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, nullptr});
  return static_cast<Id>(nodes_.size() - 1);
}

const Tensor& Tape::grad(Id id) const {
  const Node& n = nodes_[check(id)];
  if (n.grad.v.empty()) throw std::logic_error("Tape::grad: node has no gradient");
  return n.grad;
}

const Tensor* Tape::grad_ptr(Id id) const {
  const Node& n = nodes_[check(id)];
  return n.grad.v.empty() ? nullptr : &n.grad;
}

Tape::Id Tape::push(Tensor value, std::initializer_list<Id> parents, BackFn back) {
  bool rg = false;
  for (Id p : parents) rg = rg || nodes_[check(p)].requires_grad;
  nodes_.push_back(Node{std::move(value), Tensor{}, rg, rg ? std::move(back) : nullptr});
  return static_cast<Id>(nodes_.size() - 1);
}

Tensor* Tape::gbuf(Id id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.v.empty()) n.grad = Tensor(n.value.shape, 0.0);
  return &n.grad;
}

void Tape::backward(Id loss) {
  check(loss);
  if (!nodes_[loss].requires_grad)
    throw std::logic_error("Tape::backward: loss does not depend on trainable leaves");
  for (Node& n : nodes_) n.grad = Tensor{};
  nodes_[loss].grad = Tensor(nodes_[loss].value.shape, 1.0);
  for (Id id = loss; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.back && !n.grad.v.empty()) n.back(*this, id);
  }
}

Tape::Id Tape::add(Id a, Id b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (!ta.same_shape(tb)) throw std::invalid_argument("Tape::add: shape mismatch");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += tb[i];
  return push(std::move(out), {a, b}, [a, b](Tape& t, Id self) {
    const Tensor& g = t.gval(self);
    if (Tensor* ga = t.gbuf(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Tensor* gb = t.gbuf(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
  });
}

Tape::Id Tape::mul(Id a, Id b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (!ta.same_shape(tb)) throw std::invalid_argument("Tape::mul: shape mismatch");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= tb[i];
  return push(std::move(out), {a, b}, [a, b](Tape& t, Id self) {
    const Tensor& g = t.gval(self);
    const Tensor& ta = t.val(a);
    const Tensor& tb = t.val(b);
    if (Tensor* ga = t.gbuf(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * tb[i];
    if (Tensor* gb = t.gbuf(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * ta[i];
  });
}

Tape::Id Tape::scale(Id a, double c) {
  Tensor out = val(a);
  for (double& e : out.v) e *= c;
  return push(std::move(out), {a}, [a, c](Tape& t, Id self) {
    const Tensor& g = t.gval(self);
    if (Tensor* ga = t.gbuf(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += c * g[i];
  });
}

Tape::Id Tape::add_rows_const(Id x, const Tensor& rows) {
  const Tensor& tx = val(x);
  if (!tx.same_shape(rows))
    throw std::invalid_argument("Tape::add_rows_const: shape mismatch");
  Tensor out = tx;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += rows[i];
  return push(std::move(out), {x}, [x](Tape& t, Id self) {
    const Tensor& g = t.gval(self);
    if (Tensor* gx = t.gbuf(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

Tape::Id Tape::matmul(Id a, Id b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (ta.shape.size() != 2 || tb.shape.size() != 2 || ta.dim(1) != tb.dim(0))
    throw std::invalid_argument("Tape::matmul: shape mismatch");
  const std::size_t p = ta.dim(0), q = ta.dim(1), r = tb.dim(1);
  Tensor out({p, r}, 0.0);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t k = 0; k < q; ++k) {
      const double av = ta[i * q + k];
      if (av == 0.0) continue;
      const double* brow = tb.v.data() + k * r;
      double* orow = out.v.data() + i * r;
      for (std::size_t j = 0; j < r; ++j) orow[j] += av * brow[j];
    }
  return push(std::move(out), {a, b}, [a, b, p, q, r](Tape& t, Id self) {
    const Tensor& g = t.gval(self);
    const Tensor& ta = t.val(a);
    const Tensor& tb = t.val(b);
    if (Tensor* ga = t.gbuf(a)) {
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t k = 0; k < q; ++k) {
          double acc = 0.0;
          const double* grow = g.v.data() + i * r;
          const double* brow = tb.v.data() + k * r;
          for (std::size_t j = 0; j < r; ++j) acc += grow[j] * brow[j];
          (*ga)[i * q + k] += acc;
        }
    }
    if (Tensor* gb = t.gbuf(b)) {
      for (std::size_t k = 0; k < q; ++k)
        for (std::size_t i = 0; i < p; ++i) {
          const double av = ta[i * q + k];
          if (av == 0.0) continue;
          const double* grow = g.v.data() + i * r;
          double* brow = gb->v.data() + k * r;
          for (std::size_t j = 0; j < r; ++j) brow[j] += av * grow[j];
        }
    }
  });
}

Tape::Id Tape::row_bias(Id x, Id b) {
  const Tensor& tx = val(x);
  const Tensor& tb = val(b);
  if (tx.shape.size() != 2 || tb.size() != tx.dim(1))
    throw std::invalid_argument("Tape::row_bias: shape mismatch");
  const std::size_t n = tx.dim(0), d = tx.dim(1);
  Tensor out = tx;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += tb[j];
  return push(std::move(out), {x, b}, [x, b, n, d](Tape& t, Id self) {
    const Tensor& g = t.gval(self);
    if (Tensor* gx = t.gbuf(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    if (Tensor* gb = t.gbuf(b))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) (*gb)[j] += g[i * d + j];
  });
}

Tape::Id Tape::matvec(Id w, Id x) {
  const Tensor& tw = val(w);
  const Tensor& tx = val(x);
  if (tw.shape.size() != 2 || tw.dim(1) != tx.size())
    throw std::invalid_argument("Tape::matvec: shape mismatch");
  const std::size_t p = tw.dim(0), q = tw.dim(1);
  Tensor out({p}, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < q; ++j) acc += tw[i * q + j] * tx[j];
    out[i] = acc;
  }
  return push(std::move(out), {w, x}, [w, x, p, q](Tape& t, Id self) {
    const Tensor& g = t.gval(self);
    const Tensor& tw = t.val(w);
    const Tensor& tx = t.val(x);
    if (Tensor* gw = t.gbuf(w))
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) (*gw)[i * q + j] += g[i] * tx[j];
    if (Tensor* gx = t.gbuf(x))
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) (*gx)[j] += g[i] * tw[i * q + j];
  });
}

Tape::Id Tape::sigmoid_op(Id a) {
  Tensor out = val(a);
  for (double& e : out.v) e = sigmoid(e);
  std::vector<double> y = out.v;
  return push(std::move(out), {a}, [a, y = std::move(y)](Tape& t, Id self) {
    const Tensor& g = t.gval(self);
    if (Tensor* ga = t.gbuf(a))
      for (std::size_t i = 0; i < g.size(); ++i)
        (*ga)[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Tape::Id Tape::gelu(Id a) {
  const Tensor& ta = val(a);
  Tensor out = ta;
  for (double& e : out.v) e = 0.5 * e * (1.0 + std::erf(e * kInvSqrt2));
  return push(std::move(out), {a}, [a](Tape& t, Id self) {
    const Tensor& g = t.gval(self);
    const Tensor& ta = t.val(a);
    if (Tensor* ga = t.gbuf(a))
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = ta[i];
        const double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        (*ga)[i] += g[i] * (phi + x * kInvSqrt2Pi * std::exp(-0.5 * x * x));
      }
  });
}

Tape::Id Tape::clamp(Id a, double lo, double hi) {
  const Tensor& ta = val(a);
  Tensor out = ta;
  for (double& e : out.v) e = std::min(std::max(e, lo), hi);
  return push(std::move(out), {a}, [a, lo, hi](Tape& t, Id self) {
    const Tensor& g = t.gval(self);
    const Tensor& ta = t.val(a);
    if (Tensor* ga = t.gbuf(a))
      for (std::size_t i = 0; i < g.size(); ++i)
        if (ta[i] > lo && ta[i] < hi) (*ga)[i] += g[i];
  });
}

Tape::Id Tape::mean_pool_rows(Id x) {
  const Tensor& tx = val(x);
  if (tx.shape.size() != 2)
    throw std::invalid_argument("Tape::mean_pool_rows: want a matrix");
  const std::size_t n = tx.dim(0), d = tx.dim(1);
  Tensor out({d}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += tx[i * d + j];
  for (double& e : out.v) e /= static_cast<double>(n);
  return push(std::move(out), {x}, [x, n, d](Tape& t, Id self) {
    const Tensor& g = t.gval(self);
    if (Tensor* gx = t.gbuf(x)) {
      const double inv = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) (*gx)[i * d + j] += g[j] * inv;
    }
  });
}

Tape::Id Tape::layer_norm(Id x, Id gain, Id bias) {
  const Tensor& tx = val(x);
  const Tensor& tg = val(gain);
  const Tensor& tb = val(bias);
  if (tx.shape.size() != 2 || tg.size() != tx.dim(1) || tb.size() != tx.dim(1))
    throw std::invalid_argument("Tape::layer_norm: shape mismatch");
  const std::size_t n = tx.dim(0), d = tx.dim(1);
  Tensor out({n, d}, 0.0);
  std::vector<double> xhat(n * d), inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += tx[i * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = tx[i * d + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + kLnEps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (tx[i * d + j] - mu) * inv_std[i];
      out[i * d + j] = tg[j] * xhat[i * d + j] + tb[j];
    }
  }
  return push(std::move(out), {x, gain, bias},
              [x, gain, bias, n, d, xhat = std::move(xhat),
               inv_std = std::move(inv_std)](Tape& t, Id self) {
                const Tensor& g = t.gval(self);
                const Tensor& tg = t.val(gain);
                Tensor* gx = t.gbuf(x);
                Tensor* gg = t.gbuf(gain);
                Tensor* gb = t.gbuf(bias);
                for (std::size_t i = 0; i < n; ++i) {
                  double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                  for (std::size_t j = 0; j < d; ++j) {
                    const double dy = g[i * d + j];
                    const double dxh = dy * tg[j];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xhat[i * d + j];
                    if (gg) (*gg)[j] += dy * xhat[i * d + j];
                    if (gb) (*gb)[j] += dy;
                  }
                  if (gx) {
                    const double inv_d = 1.0 / static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                      const double dxh = g[i * d + j] * tg[j];
                      (*gx)[i * d + j] +=
                          inv_std[i] * (dxh - inv_d * sum_dxhat -
                                        inv_d * xhat[i * d + j] * sum_dxhat_xhat);
                    }
                  }
                }
              });
}

Tape::Id Tape::sum(Id a) {
  const Tensor& ta = val(a);
  double acc = 0.0;
  for (double e : ta.v) acc += e;
  return push(Tensor::scalar(acc), {a}, [a](Tape& t, Id self) {
    const double g = t.gval(self)[0];
    if (Tensor* ga = t.gbuf(a))
      for (double& e : ga->v) e += g;
  });
}

Tape::Id Tape::weighted_sum(const std::vector<std::pair<Id, double>>& terms) {
  double acc = 0.0;
  bool rg = false;
  for (const auto& [id, c] : terms) {
    const Tensor& tv = val(id);
    if (tv.size() != 1) throw std::invalid_argument("Tape::weighted_sum: scalar terms only");
    acc += c * tv[0];
    rg = rg || requires_grad(id);
  }
  nodes_.push_back(Node{
      Tensor::scalar(acc), Tensor{}, rg,
      rg ? BackFn([terms](Tape& t, Id self) {
        const double g = t.gval(self)[0];
        for (const auto& [id, c] : terms)
          if (Tensor* gt = t.gbuf(id)) (*gt)[0] += g * c;
      })
         : BackFn(nullptr)});
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::embedding_lookup(Id table, std::vector<int> ids) {
  const Tensor& tt = val(table);
  if (tt.shape.size() != 2)
    throw std::invalid_argument("Tape::embedding_lookup: want a matrix table");
  const std::size_t vocab = tt.dim(0), d = tt.dim(1), n = ids.size();
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw std::out_of_range("embedding_lookup: token id outside vocabulary");
  Tensor out({n, d}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(tt.v.data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.v.data() + i * d);
  return push(std::move(out), {table},
              [table, ids = std::move(ids), d](Tape& t, Id self) {
                const Tensor& g = t.gval(self);
                if (Tensor* gt = t.gbuf(table))
                  for (std::size_t i = 0; i < ids.size(); ++i) {
                    double* row = gt->v.data() + static_cast<std::size_t>(ids[i]) * d;
                    const double* grow = g.v.data() + i * d;
                    for (std::size_t j = 0; j < d; ++j) row[j] += grow[j];
                  }
              });
}

Tape::Id Tape::softmax_cross_entropy(Id logits, std::vector<int> targets) {
  const Tensor& tz = val(logits);
  if (tz.shape.size() != 2 || tz.dim(0) != targets.size())
    throw std::invalid_argument("Tape::softmax_cross_entropy: shape mismatch");
  const std::size_t n = tz.dim(0), vocab = tz.dim(1);
  std::vector<double> probs(n * vocab);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = targets[i];
    if (y < 0 || static_cast<std::size_t>(y) >= vocab)
      throw std::out_of_range("softmax_cross_entropy: target outside vocabulary");
    const double* z = tz.v.data() + i * vocab;
    const double zmax = *std::max_element(z, z + vocab);
    double acc = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) acc += std::exp(z[j] - zmax);
    const double lse = zmax + std::log(acc);
    loss += lse - z[y];
    for (std::size_t j = 0; j < vocab; ++j)
      probs[i * vocab + j] = std::exp(z[j] - lse);
  }
  loss /= static_cast<double>(n);
  return push(Tensor::scalar(loss), {logits},
              [logits, targets = std::move(targets), probs = std::move(probs), n,
               vocab](Tape& t, Id self) {
                const double g = t.gval(self)[0] / static_cast<double>(n);
                if (Tensor* gz = t.gbuf(logits))
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < vocab; ++j) {
                      double p = probs[i * vocab + j];
                      if (j == static_cast<std::size_t>(targets[i])) p -= 1.0;
                      (*gz)[i * vocab + j] += g * p;
                    }
              });
}

Tape::Id Tape::softplus_shift(Id raw, double eps) {
  const Tensor& tr = val(raw);
  Tensor out = tr;
  for (double& e : out.v) e = softplus(e) + eps;
  return push(std::move(out), {raw}, [raw](Tape& t, Id self) {
    const Tensor& g = t.gval(self);
    const Tensor& tr = t.val(raw);
    if (Tensor* gr = t.gbuf(raw))
      for (std::size_t i = 0; i < g.size(); ++i)
        (*gr)[i] += g[i] * sigmoid(tr[i]);
  });
}

}  // namespace stlt
