#pragma once

// Reverse-mode autodiff on an explicit tape. Nodes are recorded in creation
// order, which is a topological order by construction (an op's parents must
// exist before the op runs). backward() walks the tape once in reverse and
// accumulates gradients into every requires-grad node.

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <vector>

#include "xmask/tensor.hpp"

namespace xmask {

template <typename S>
class Tape;

template <typename S>
class Var {
 public:
  Var() = default;
  Var(Tape<S>* tape, std::uint32_t id) : tape_(tape), id_(id) {}
  Tape<S>* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor<S>& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape<S>* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

template <typename S>
class Tape {
 public:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    bool requires_grad = false;
    std::vector<std::uint32_t> parents;
    std::function<void(Tape&, std::uint32_t)> backward;  // pulls this node's grad into its parents
  };

  Var<S> leaf(Tensor<S> v, bool requires_grad = false) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<S>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  Var<S> constant(Tensor<S> v) { return leaf(std::move(v), false); }

  Var<S> record(Tensor<S> value, std::vector<std::uint32_t> parents,
                std::function<void(Tape&, std::uint32_t)> backward) {
    Node n;
    n.value = std::move(value);
    for (std::uint32_t p : parents)
      if (nodes_[p].requires_grad) n.requires_grad = true;
    n.parents = std::move(parents);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<S>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  const Tensor<S>& val(const Var<S>& v) const { return nodes_.at(v.id()).value; }
  Node& node(std::uint32_t id) { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  // Accumulation target for a parent's gradient; zero-allocated on first use.
  Tensor<S>& grad_buffer(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.numel() == 0) n.grad = Tensor<S>::zeros(n.value.shape());
    return n.grad;
  }

  void backward(const Var<S>& loss) {
    if (loss.tape() != this) throw std::invalid_argument("backward: loss recorded on a different tape");
    if (nodes_.empty()) throw std::invalid_argument("backward: empty tape");
    Node& top = nodes_.at(loss.id());
    if (top.value.numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(top.value.shape()));
    grad_buffer(loss.id())[0] = S(1);
    for (std::uint32_t i = static_cast<std::uint32_t>(nodes_.size()); i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.grad.numel() == 0) continue;
      n.backward(*this, i);
    }
    ran_backward_ = true;
  }

  // Gradient of the last backward() w.r.t. a leaf; zero for non-participating leaves.
  Tensor<S> grad(const Var<S>& v) const {
    if (!ran_backward_) throw std::logic_error("grad: backward() has not run on this tape");
    const Node& n = nodes_.at(v.id());
    if (n.grad.numel() == 0) return Tensor<S>::zeros(n.value.shape());
    return n.grad;
  }

 private:
  std::deque<Node> nodes_;
  bool ran_backward_ = false;
};

template <typename S>
const Tensor<S>& Var<S>::value() const {
  return tape_->val(*this);
}

namespace detail {
template <typename S>
Tape<S>& tape_of(const Var<S>& a, const Var<S>& b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("op: operands live on different tapes");
  return *a.tape();
}
template <typename S>
void accumulate(Tensor<S>& dst, const Tensor<S>& src) {
  dst.array() += src.array();
}
}  // namespace detail

// ---- recorded elementwise ops ----

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>& t = detail::tape_of(a, b);
  detail::require_same_shape(t.val(a), t.val(b), "add");
  Tensor<S> out = add(t.val(a), t.val(b));
  return t.record(std::move(out), {a.id(), b.id()}, [pa = a.id(), pb = b.id()](Tape<S>& tp, std::uint32_t id) {
    const Tensor<S>& g = tp.node(id).grad;
    if (tp.node(pa).requires_grad) detail::accumulate(tp.grad_buffer(pa), g);
    if (tp.node(pb).requires_grad) detail::accumulate(tp.grad_buffer(pb), g);
  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  Tape<S>& t = detail::tape_of(a, b);
  detail::require_same_shape(t.val(a), t.val(b), "sub");
  Tensor<S> out = sub(t.val(a), t.val(b));
  return t.record(std::move(out), {a.id(), b.id()}, [pa = a.id(), pb = b.id()](Tape<S>& tp, std::uint32_t id) {
    const Tensor<S>& g = tp.node(id).grad;
    if (tp.node(pa).requires_grad) detail::accumulate(tp.grad_buffer(pa), g);
    if (tp.node(pb).requires_grad) tp.grad_buffer(pb).array() -= g.array();
  });
}

// Hadamard product.
template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  Tape<S>& t = detail::tape_of(a, b);
  detail::require_same_shape(t.val(a), t.val(b), "mul");
  Tensor<S> out = mul(t.val(a), t.val(b));
  return t.record(std::move(out), {a.id(), b.id()}, [pa = a.id(), pb = b.id()](Tape<S>& tp, std::uint32_t id) {
    const Tensor<S>& g = tp.node(id).grad;
    if (tp.node(pa).requires_grad) tp.grad_buffer(pa).array() += g.array() * tp.node(pb).value.array();
    if (tp.node(pb).requires_grad) tp.grad_buffer(pb).array() += g.array() * tp.node(pa).value.array();
  });
}

template <typename S>
Var<S> scale(Var<S> a, S c) {
  Tape<S>& t = *a.tape();
  Tensor<S> out = scale(t.val(a), c);
  return t.record(std::move(out), {a.id()}, [pa = a.id(), c](Tape<S>& tp, std::uint32_t id) {
    tp.grad_buffer(pa).array() += tp.node(id).grad.array() * c;
  });
}

template <typename S>
Var<S> add_scalar(Var<S> a, S c) {
  Tape<S>& t = *a.tape();
  Tensor<S> out = add_scalar(t.val(a), c);
  return t.record(std::move(out), {a.id()}, [pa = a.id()](Tape<S>& tp, std::uint32_t id) {
    detail::accumulate(tp.grad_buffer(pa), tp.node(id).grad);
  });
}

template <typename S>
Var<S> neg(Var<S> a) {
  return scale(a, S(-1));
}

template <typename S>
Var<S> relu(Var<S> a) {
  Tape<S>& t = *a.tape();
  const Tensor<S>& x = t.val(a);
  Tensor<S> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > S(0) ? x[i] : S(0);
  return t.record(std::move(out), {a.id()}, [pa = a.id()](Tape<S>& tp, std::uint32_t id) {
    const Tensor<S>& g = tp.node(id).grad;
    const Tensor<S>& x = tp.node(pa).value;
    Tensor<S>& gx = tp.grad_buffer(pa);
    for (std::size_t i = 0; i < x.numel(); ++i)
      if (x[i] > S(0)) gx[i] += g[i];  // derivative at 0 taken as 0
  });
}

// max(0, x) + a*sin(x); derivative [x>0] + a*cos(x) with [x>0] = 0 at x = 0.
template <typename S>
Var<S> slu(Var<S> v, S a) {
  Tape<S>& t = *v.tape();
  const Tensor<S>& x = t.val(v);
  Tensor<S> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = (x[i] > S(0) ? x[i] : S(0)) + a * std::sin(x[i]);
  return t.record(std::move(out), {v.id()}, [pv = v.id(), a](Tape<S>& tp, std::uint32_t id) {
    const Tensor<S>& g = tp.node(id).grad;
    const Tensor<S>& x = tp.node(pv).value;
    Tensor<S>& gx = tp.grad_buffer(pv);
    for (std::size_t i = 0; i < x.numel(); ++i)
      gx[i] += g[i] * ((x[i] > S(0) ? S(1) : S(0)) + a * std::cos(x[i]));
  });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  Tape<S>& t = *a.tape();
  const Tensor<S>& x = t.val(a);
  Tensor<S> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const S v = x[i];
    out[i] = v >= S(0) ? S(1) / (S(1) + std::exp(-v)) : std::exp(v) / (S(1) + std::exp(v));
  }
  return t.record(std::move(out), {a.id()}, [pa = a.id()](Tape<S>& tp, std::uint32_t id) {
    const Tensor<S>& g = tp.node(id).grad;
    const Tensor<S>& y = tp.node(id).value;
    Tensor<S>& gx = tp.grad_buffer(pa);
    for (std::size_t i = 0; i < y.numel(); ++i) gx[i] += g[i] * y[i] * (S(1) - y[i]);
  });
}

// |x| with subgradient 0 at x = 0.
template <typename S>
Var<S> abs(Var<S> a) {
  Tape<S>& t = *a.tape();
  const Tensor<S>& x = t.val(a);
  Tensor<S> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = std::abs(x[i]);
  return t.record(std::move(out), {a.id()}, [pa = a.id()](Tape<S>& tp, std::uint32_t id) {
    const Tensor<S>& g = tp.node(id).grad;
    const Tensor<S>& x = tp.node(pa).value;
    Tensor<S>& gx = tp.grad_buffer(pa);
    for (std::size_t i = 0; i < x.numel(); ++i)
      gx[i] += g[i] * (x[i] > S(0) ? S(1) : (x[i] < S(0) ? S(-1) : S(0)));
  });
}

// Elementwise clamp against constant per-element bounds. Gradient passes
// wherever the input was inside [lo, hi] (output equals input) and is cut
// where the bound took over.
template <typename S>
Var<S> clamp(Var<S> a, const Tensor<S>& lo, const Tensor<S>& hi) {
  Tape<S>& t = *a.tape();
  const Tensor<S>& x = t.val(a);
  detail::require_same_shape(x, lo, "clamp");
  detail::require_same_shape(x, hi, "clamp");
  Tensor<S> out = clamp(x, lo, hi);
  return t.record(std::move(out), {a.id()}, [pa = a.id(), lo, hi](Tape<S>& tp, std::uint32_t id) {
    const Tensor<S>& g = tp.node(id).grad;
    const Tensor<S>& x = tp.node(pa).value;
    Tensor<S>& gx = tp.grad_buffer(pa);
    for (std::size_t i = 0; i < x.numel(); ++i)
      if (x[i] >= lo[i] && x[i] <= hi[i]) gx[i] += g[i];
  });
}

template <typename S>
Var<S> sum(Var<S> a) {
  Tape<S>& t = *a.tape();
  Tensor<S> out = Tensor<S>::scalar(sum_value(t.val(a)));
  return t.record(std::move(out), {a.id()}, [pa = a.id()](Tape<S>& tp, std::uint32_t id) {
    const S g = tp.node(id).grad[0];
    tp.grad_buffer(pa).array() += g;
  });
}

template <typename S>
Var<S> mean(Var<S> a) {
  Tape<S>& t = *a.tape();
  const std::size_t n = t.val(a).numel();
  Tensor<S> out = Tensor<S>::scalar(mean_value(t.val(a)));
  return t.record(std::move(out), {a.id()}, [pa = a.id(), n](Tape<S>& tp, std::uint32_t id) {
    const S g = tp.node(id).grad[0] / static_cast<S>(n);
    tp.grad_buffer(pa).array() += g;
  });
}

template <typename S>
Var<S> reshape(Var<S> a, Shape s) {
  Tape<S>& t = *a.tape();
  Tensor<S> out = t.val(a).reshaped(s);
  const Shape orig = t.val(a).shape();
  return t.record(std::move(out), {a.id()}, [pa = a.id(), orig](Tape<S>& tp, std::uint32_t id) {
    tp.grad_buffer(pa).array() += tp.node(id).grad.array();
  });
}

// 2-D matrix product: dA = G * B^T, dB = A^T * G.
template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>& t = detail::tape_of(a, b);
  const Tensor<S>& A = t.val(a);
  const Tensor<S>& B = t.val(b);
  detail::require(A.rank() == 2 && B.rank() == 2,
                  "matmul: rank-2 tensors expected, got " + shape_str(A.shape()) + " and " + shape_str(B.shape()));
  detail::require(A.dim(1) == B.dim(0),
                  "matmul: inner dimensions disagree, " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor<S> out({m, n});
  out.mat(m, n).noalias() = A.mat(m, k) * B.mat(k, n);
  return t.record(std::move(out), {a.id(), b.id()},
                  [pa = a.id(), pb = b.id(), m, k, n](Tape<S>& tp, std::uint32_t id) {
                    const Tensor<S>& G = tp.node(id).grad;
                    const Tensor<S>& A = tp.node(pa).value;
                    const Tensor<S>& B = tp.node(pb).value;
                    if (tp.node(pa).requires_grad)
                      tp.grad_buffer(pa).mat(m, k).noalias() += G.mat(m, n) * B.mat(k, n).transpose();
                    if (tp.node(pb).requires_grad)
                      tp.grad_buffer(pb).mat(k, n).noalias() += A.mat(m, k).transpose() * G.mat(m, n);
                  });
}

// Adds a row-broadcast bias [K] to a [N, K] matrix.
template <typename S>
Var<S> add_row_bias(Var<S> a, Var<S> bias) {
  Tape<S>& t = detail::tape_of(a, bias);
  const Tensor<S>& A = t.val(a);
  const Tensor<S>& b = t.val(bias);
  detail::require(A.rank() == 2 && b.rank() == 1 && A.dim(1) == b.dim(0),
                  "add_row_bias: need [N,K] + [K], got " + shape_str(A.shape()) + " and " + shape_str(b.shape()));
  const std::size_t n = A.dim(0), k = A.dim(1);
  Tensor<S> out(A.shape());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) out[r * k + c] = A[r * k + c] + b[c];
  return t.record(std::move(out), {a.id(), bias.id()},
                  [pa = a.id(), pb = bias.id(), n, k](Tape<S>& tp, std::uint32_t id) {
                    const Tensor<S>& G = tp.node(id).grad;
                    if (tp.node(pa).requires_grad) detail::accumulate(tp.grad_buffer(pa), G);
                    if (tp.node(pb).requires_grad) {
                      Tensor<S>& gb = tp.grad_buffer(pb);
                      for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t c = 0; c < k; ++c) gb[c] += G[r * k + c];
                    }
                  });
}

// Row softmax on [N, K] logits.
template <typename S>
Var<S> softmax(Var<S> a) {
  Tape<S>& t = *a.tape();
  const Tensor<S>& x = t.val(a);
  detail::require(x.rank() == 2, "softmax: rank-2 tensor expected");
  Tensor<S> out = softmax_rows(x);
  const std::size_t n = x.dim(0), k = x.dim(1);
  return t.record(std::move(out), {a.id()}, [pa = a.id(), n, k](Tape<S>& tp, std::uint32_t id) {
    const Tensor<S>& g = tp.node(id).grad;
    const Tensor<S>& s = tp.node(id).value;
    Tensor<S>& gx = tp.grad_buffer(pa);
    for (std::size_t r = 0; r < n; ++r) {
      S dot = S(0);
      for (std::size_t c = 0; c < k; ++c) dot += g[r * k + c] * s[r * k + c];
      for (std::size_t c = 0; c < k; ++c) gx[r * k + c] += s[r * k + c] * (g[r * k + c] - dot);
    }
  });
}

// Picks element [n, labels[n]] per row -> [N].
template <typename S>
Var<S> select_class(Var<S> a, const std::vector<int>& labels) {
  Tape<S>& t = *a.tape();
  const Tensor<S>& x = t.val(a);
  detail::require(x.rank() == 2 && labels.size() == x.dim(0), "select_class: [N,K] tensor with N labels expected");
  const std::size_t n = x.dim(0), k = x.dim(1);
  Tensor<S> out({n});
  for (std::size_t r = 0; r < n; ++r) {
    detail::require(labels[r] >= 0 && static_cast<std::size_t>(labels[r]) < k, "select_class: label out of range");
    out[r] = x[r * k + static_cast<std::size_t>(labels[r])];
  }
  return t.record(std::move(out), {a.id()}, [pa = a.id(), labels, k](Tape<S>& tp, std::uint32_t id) {
    const Tensor<S>& g = tp.node(id).grad;
    Tensor<S>& gx = tp.grad_buffer(pa);
    for (std::size_t r = 0; r < g.numel(); ++r) gx[r * k + static_cast<std::size_t>(labels[r])] += g[r];
  });
}

// Mean cross-entropy of [N, K] logits against integer labels (fused with
// log-sum-exp for stability). dlogits = (softmax - onehot) / N.
template <typename S>
Var<S> cross_entropy(Var<S> logits, const std::vector<int>& labels) {
  Tape<S>& t = *logits.tape();
  const Tensor<S>& x = t.val(logits);
  detail::require(x.rank() == 2 && labels.size() == x.dim(0), "cross_entropy: [N,K] logits with N labels expected");
  const std::size_t n = x.dim(0), k = x.dim(1);
  S loss = S(0);
  for (std::size_t r = 0; r < n; ++r) {
    const S* row = x.data() + r * k;
    S m = row[0];
    for (std::size_t c = 1; c < k; ++c) m = std::max(m, row[c]);
    S z = S(0);
    for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - m);
    loss += (m + std::log(z)) - row[static_cast<std::size_t>(labels[r])];
  }
  loss /= static_cast<S>(n);
  return t.record(Tensor<S>::scalar(loss), {logits.id()},
                  [pl = logits.id(), labels, n, k](Tape<S>& tp, std::uint32_t id) {
                    const S g = tp.node(id).grad[0];
                    Tensor<S> sm = softmax_rows(tp.node(pl).value);
                    Tensor<S>& gx = tp.grad_buffer(pl);
                    for (std::size_t r = 0; r < n; ++r) {
                      for (std::size_t c = 0; c < k; ++c) gx[r * k + c] += g * sm[r * k + c] / static_cast<S>(n);
                      gx[r * k + static_cast<std::size_t>(labels[r])] -= g / static_cast<S>(n);
                    }
                  });
}

}  // namespace xmask
