#pragma once

// Pixelwise attribution for classifier graphs: plain gradient saliency,
// Integrated Gradients (right-point Riemann path integral from a baseline),
// and epsilon-rule relevance propagation. Attributions keep the input
// image's shape, one map per batch row.

#include <memory>
#include <vector>

#include "xmask/models.hpp"

namespace xmask {

enum class XaiMethod : std::uint8_t { gradient, ig, lrp };

inline const char* xai_method_name(XaiMethod m) {
  switch (m) {
    case XaiMethod::gradient: return "gradient";
    case XaiMethod::ig: return "ig";
    case XaiMethod::lrp: return "lrp";
  }
  return "?";
}

template <typename S>
struct Explanation {
  Tensor<S> attribution;     // [N, C, H, W], same shape as the explained batch
  XaiMethod method = XaiMethod::gradient;
  std::vector<int> targets;  // explained class per row
  std::size_t ig_steps = 0;  // metadata: step count (ig)
  double lrp_eps = 0.0;      // metadata: stabilizer (lrp)

  Tensor<S> sample(std::size_t i) const { return slice_outer(attribution, i); }
};

// Row i of an [N, ...] tensor as a [...]-shaped tensor.
template <typename S>
Tensor<S> slice_outer(const Tensor<S>& t, std::size_t i) {
  detail::require(t.rank() >= 2 && i < t.dim(0), "slice_outer: index out of range");
  Shape s(t.shape().begin() + 1, t.shape().end());
  const std::size_t stride = shape_numel(s);
  Tensor<S> out(s);
  std::copy(t.data() + i * stride, t.data() + (i + 1) * stride, out.data());
  return out;
}

template <typename S>
void write_outer(Tensor<S>& dst, std::size_t i, const Tensor<S>& row) {
  const std::size_t stride = row.numel();
  detail::require(dst.numel() >= (i + 1) * stride, "write_outer: index out of range");
  std::copy(row.data(), row.data() + stride, dst.data() + i * stride);
}

// d logit[target] / d input, one backward pass per batch.
template <typename S>
Explanation<S> gradient_saliency(const ModelGraph<S>& model, const Tensor<S>& x, const std::vector<int>& targets) {
  detail::require(x.rank() == 4 && targets.size() == x.dim(0), "gradient_saliency: [N,C,H,W] batch expected");
  Tape<S> tape;
  Var<S> xv = tape.leaf(x, true);
  Var<S> logits = model.forward(tape, xv);
  Var<S> loss = sum(select_class(logits, targets));
  tape.backward(loss);
  Explanation<S> e;
  e.attribution = tape.grad(xv);
  e.method = XaiMethod::gradient;
  e.targets = targets;
  return e;
}

// IG_i = (x_i - x'_i) * (1/m) * sum_{k=1..m} dF_target(x' + (k/m)(x - x')) / dx_i.
// Path points are evaluated in chunks as one batch per chunk.
template <typename S>
Explanation<S> integrated_gradients(const ModelGraph<S>& model, const Tensor<S>& x, const std::vector<int>& targets,
                                    const Tensor<S>& baseline, std::size_t steps, std::size_t chunk = 64) {
  detail::require(x.rank() == 4 && targets.size() == x.dim(0), "integrated_gradients: [N,C,H,W] batch expected");
  Shape img_shape(x.shape().begin() + 1, x.shape().end());
  detail::require(same_shape(baseline.shape(), img_shape),
                  "integrated_gradients: baseline shape " + shape_str(baseline.shape()) + " does not match image " +
                      shape_str(img_shape));
  detail::require(steps >= 1, "integrated_gradients: steps must be >= 1");
  const std::size_t n = x.dim(0), d = baseline.numel();
  Explanation<S> e;
  e.attribution = Tensor<S>::zeros(x.shape());
  e.method = XaiMethod::ig;
  e.targets = targets;
  e.ig_steps = steps;
  for (std::size_t i = 0; i < n; ++i) {
    const S* xi = x.data() + i * d;
    Tensor<S> grad_sum({d});
    for (std::size_t k0 = 1; k0 <= steps; k0 += chunk) {
      const std::size_t b = std::min(chunk, steps - k0 + 1);
      Shape batch_shape;
      batch_shape.push_back(b);
      for (std::size_t dd : img_shape) batch_shape.push_back(dd);
      Tensor<S> pts(batch_shape);
      for (std::size_t j = 0; j < b; ++j) {
        const S t = static_cast<S>(k0 + j) / static_cast<S>(steps);
        for (std::size_t p = 0; p < d; ++p) pts[j * d + p] = baseline[p] + t * (xi[p] - baseline[p]);
      }
      Tape<S> tape;
      Var<S> pv = tape.leaf(std::move(pts), true);
      Var<S> logits = model.forward(tape, pv);
      std::vector<int> tgt(b, targets[i]);
      tape.backward(sum(select_class(logits, tgt)));
      const Tensor<S> g = tape.grad(pv);
      for (std::size_t j = 0; j < b; ++j)
        for (std::size_t p = 0; p < d; ++p) grad_sum[p] += g[j * d + p];
    }
    S* out = e.attribution.data() + i * d;
    for (std::size_t p = 0; p < d; ++p) out[p] = (xi[p] - baseline[p]) * grad_sum[p] / static_cast<S>(steps);
  }
  return e;
}

template <typename S>
Explanation<S> integrated_gradients(const ModelGraph<S>& model, const Tensor<S>& x, const std::vector<int>& targets,
                                    std::size_t steps = 64) {
  Shape img_shape(x.shape().begin() + 1, x.shape().end());
  return integrated_gradients(model, x, targets, Tensor<S>::zeros(img_shape), steps);
}

namespace detail {
template <typename S>
void stabilize(Tensor<S>& z, S eps) {
  for (std::size_t i = 0; i < z.numel(); ++i) z[i] += (z[i] >= S(0) ? eps : -eps);
}
}  // namespace detail

// Epsilon-rule relevance propagation through dense/conv/relu/maxpool/flatten
// stacks. Relevance seeds at the target logit and is redistributed by
// R_j = sum_k (z_jk / (sum_j' z_j'k + eps*sign)) R_k; pooling routes to the
// argmax input. Layers outside that set are rejected.
template <typename S>
Explanation<S> lrp_epsilon(const ModelGraph<S>& model, const Tensor<S>& x, const std::vector<int>& targets, S eps) {
  detail::require(x.rank() == 4 && targets.size() == x.dim(0), "lrp_epsilon: [N,C,H,W] batch expected");
  detail::require(eps > S(0), "lrp_epsilon: eps must be positive");
  for (const LayerSpec& L : model.layers())
    if (L.kind != LayerKind::dense && L.kind != LayerKind::conv2d && L.kind != LayerKind::maxpool2d &&
        L.kind != LayerKind::relu && L.kind != LayerKind::flatten)
      throw std::invalid_argument(std::string("lrp_epsilon: unsupported layer kind '") + layer_kind_name(L.kind) +
                                  "' (no relevance rule defined)");
  const std::vector<Tensor<S>> acts = model.forward_activations(x);
  const Tensor<S>& logits = acts.back();
  const std::size_t n = x.dim(0), classes = logits.dim(1);
  Tensor<S> rel(logits.shape());
  for (std::size_t i = 0; i < n; ++i)
    rel[i * classes + static_cast<std::size_t>(targets[i])] = logits[i * classes + static_cast<std::size_t>(targets[i])];
  for (std::size_t li = model.layers().size(); li-- > 0;) {
    const LayerSpec& L = model.layers()[li];
    const Tensor<S>& a = acts[li];
    switch (L.kind) {
      case LayerKind::dense: {
        const Tensor<S>& w = model.params()[li].weight;
        Tensor<S> flat = a.rank() == 2 ? a : a.reshaped({n, a.numel() / n});
        const std::size_t in = w.dim(0), out = w.dim(1);
        Tensor<S> z({n, out});
        z.mat(n, out).noalias() = flat.mat(n, in) * w.mat(in, out);
        detail::stabilize(z, eps);
        Tensor<S> s({n, out});
        s.array() = rel.array() / z.array();
        Tensor<S> next({n, in});
        next.mat(n, in).noalias() = s.mat(n, out) * w.mat(in, out).transpose();
        next.array() *= flat.array();
        rel = next.reshaped(a.shape());
        break;
      }
      case LayerKind::conv2d: {
        const Tensor<S>& w = model.params()[li].weight;
        Tensor<S> z = conv2d_fwd(a, w, static_cast<const Tensor<S>*>(nullptr), L.stride, L.pad);
        detail::stabilize(z, eps);
        Tensor<S> s(z.shape());
        s.array() = rel.array() / z.array();
        Tensor<S> next = Tensor<S>::zeros(a.shape());
        conv2d_bwd(a, w, s, L.stride, L.pad, &next, static_cast<Tensor<S>*>(nullptr),
                   static_cast<Tensor<S>*>(nullptr));
        next.array() *= a.array();
        rel = std::move(next);
        break;
      }
      case LayerKind::maxpool2d: {
        std::vector<std::size_t> argmax;
        maxpool2x2_fwd(a, &argmax);
        Tensor<S> next = Tensor<S>::zeros(a.shape());
        for (std::size_t i = 0; i < rel.numel(); ++i) next[argmax[i]] += rel[i];
        rel = std::move(next);
        break;
      }
      case LayerKind::relu: break;  // relevance passes through the positive support unchanged
      case LayerKind::flatten: rel = rel.reshaped(a.shape()); break;
      default: throw std::logic_error("lrp_epsilon: unreachable layer kind");
    }
  }
  Explanation<S> e;
  e.attribution = std::move(rel);
  e.method = XaiMethod::lrp;
  e.targets = targets;
  e.lrp_eps = static_cast<double>(eps);
  return e;
}

template <typename S>
Explanation<S> explain(const ModelGraph<S>& model, const Tensor<S>& x, const std::vector<int>& targets,
                       XaiMethod method, std::size_t ig_steps = 64, S lrp_eps = S(1e-6)) {
  switch (method) {
    case XaiMethod::gradient: return gradient_saliency(model, x, targets);
    case XaiMethod::ig: return integrated_gradients(model, x, targets, ig_steps);
    case XaiMethod::lrp: return lrp_epsilon(model, x, targets, lrp_eps);
  }
  throw std::logic_error("explain: unknown method");
}

// (v - min) / (max - min); a constant map yields all 0.5.
template <typename S>
Tensor<S> normalize01(const Tensor<S>& t) {
  const S lo = min_value(t), hi = max_value(t);
  Tensor<S> out(t.shape());
  if (hi == lo) {
    out.array() = S(0.5);
    return out;
  }
  out.array() = (t.array() - lo) / (hi - lo);
  return out;
}

// Per-row normalization of an [N, ...] batch.
template <typename S>
Tensor<S> normalize01_rows(const Tensor<S>& t) {
  detail::require(t.rank() >= 2, "normalize01_rows: batch tensor expected");
  Tensor<S> out(t.shape());
  for (std::size_t i = 0; i < t.dim(0); ++i) write_outer(out, i, normalize01(slice_outer(t, i)));
  return out;
}

}  // namespace xmask
