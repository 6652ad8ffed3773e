#pragma once

// Sequential layer graphs with optional skip concatenations, weight init
// drawn from Normal(0, 1 / (((inC+outC)/2) * kh*kw)), and the three model
// builders used by the pipeline: the MNIST-scale MLP, a compact convnet for
// CIFAR-shaped inputs, and the mask-generating UNet (SLU activations,
// transposed-conv decoder, sigmoid head).

#include <cstdint>
#include <string>
#include <vector>

#include "xmask/autodiff.hpp"
#include "xmask/layers.hpp"
#include "xmask/rng.hpp"
#include "xmask/tensor.hpp"

namespace xmask {

enum class LayerKind : std::uint8_t {
  dense,
  conv2d,
  deconv2d,
  maxpool2d,
  relu,
  slu,
  sigmoid,
  flatten,
  skip_concat,
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::deconv2d: return "deconv2d";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::relu: return "relu";
    case LayerKind::slu: return "slu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::flatten: return "flatten";
    case LayerKind::skip_concat: return "skip_concat";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind;
  std::size_t in_c = 0, out_c = 0;   // features for dense, channels for conv
  std::size_t kh = 0, kw = 0;
  std::size_t stride = 1, pad = 0;
  double slu_a = 0.5;
  int skip_from = -1;  // producing layer index for skip_concat

  static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::dense, in, out}; }
  static LayerSpec conv(std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t stride, std::size_t pad) {
    return {LayerKind::conv2d, in_c, out_c, k, k, stride, pad};
  }
  static LayerSpec deconv(std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t stride) {
    return {LayerKind::deconv2d, in_c, out_c, k, k, stride, 0};
  }
  static LayerSpec maxpool() { return {LayerKind::maxpool2d}; }
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec slu(double a) {
    LayerSpec s{LayerKind::slu};
    s.slu_a = a;
    return s;
  }
  static LayerSpec sigmoid() { return {LayerKind::sigmoid}; }
  static LayerSpec flatten() { return {LayerKind::flatten}; }
  static LayerSpec skip(int from) {
    LayerSpec s{LayerKind::skip_concat};
    s.skip_from = from;
    return s;
  }
};

// Variance rule for a kernel of kh*kw spatial taps between inC and outC
// channels; dense layers use KernelSize = 1.
inline double init_variance(std::size_t in_c, std::size_t out_c, std::size_t kh, std::size_t kw) {
  detail::require(in_c >= 1 && out_c >= 1 && kh >= 1 && kw >= 1, "init_variance: dimensions must be >= 1");
  return 1.0 / ((static_cast<double>(in_c + out_c) / 2.0) * static_cast<double>(kh * kw));
}

// Weights ~ Normal(0, init_variance), biases zero.
template <typename S>
Tensor<S> init_conv(std::size_t in_c, std::size_t out_c, std::size_t kh, std::size_t kw, Rng& rng) {
  const double stddev = std::sqrt(init_variance(in_c, out_c, kh, kw));
  return rng_normal<S>(rng, {out_c, in_c, kh, kw}, 0.0, stddev);
}

enum class OutputKind : std::uint8_t { logits, mask };

template <typename S>
struct LayerParams {
  Tensor<S> weight;  // empty when the layer has no parameters
  Tensor<S> bias;
  bool has() const { return weight.numel() > 0; }
};

template <typename S>
class ModelGraph {
 public:
  ModelGraph() = default;
  ModelGraph(Shape input_shape, OutputKind out, std::string kind)
      : input_shape_(std::move(input_shape)), output_(out), kind_(std::move(kind)) {}

  const Shape& input_shape() const { return input_shape_; }
  OutputKind output_kind() const { return output_; }
  const std::string& kind() const { return kind_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::vector<LayerParams<S>>& params() const { return params_; }
  std::vector<LayerParams<S>>& params() { return params_; }

  void add(LayerSpec spec, LayerParams<S> p = {}) {
    layers_.push_back(spec);
    params_.push_back(std::move(p));
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p.has()) n += p.weight.numel() + p.bias.numel();
    return n;
  }

  // Handles to the parameter leaves a forward() call planted on the tape;
  // trainers read gradients through these after backward().
  struct ParamVars {
    std::size_t layer;
    Var<S> weight, bias;
  };

  // Forward under a tape. x is [N, ...input_shape].
  Var<S> forward(Tape<S>& tape, Var<S> x, bool train_params = false,
                 std::vector<ParamVars>* param_vars = nullptr) const {
    std::vector<Var<S>> outs;
    outs.reserve(layers_.size());
    Var<S> cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      cur = apply_layer(tape, cur, i, outs, train_params, param_vars);
      outs.push_back(cur);
    }
    return cur;
  }

  // Plain forward without gradient bookkeeping.
  Tensor<S> forward(const Tensor<S>& x) const {
    Tape<S> tape;
    return tape.val(forward(tape, tape.constant(x)));
  }

  // Forward that records every layer output; acts[0] is the input, acts[i+1]
  // the output of layer i. Used by relevance propagation.
  std::vector<Tensor<S>> forward_activations(const Tensor<S>& x) const {
    Tape<S> tape;
    std::vector<Var<S>> outs;
    Var<S> cur = tape.constant(x);
    std::vector<Tensor<S>> acts;
    acts.push_back(x);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      cur = apply_layer(tape, cur, i, outs, false, nullptr);
      outs.push_back(cur);
      acts.push_back(tape.val(cur));
    }
    return acts;
  }

  // FNV-1a over the raw parameter bytes; bitwise change detector.
  std::uint64_t param_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto eat = [&h](const void* p, std::size_t n) {
      const unsigned char* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& p : params_) {
      if (!p.has()) continue;
      eat(p.weight.data(), p.weight.numel() * sizeof(S));
      eat(p.bias.data(), p.bias.numel() * sizeof(S));
    }
    return h;
  }

  template <typename T>
  ModelGraph<T> cast() const {
    ModelGraph<T> out(input_shape_, output_, kind_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      LayerParams<T> p;
      if (params_[i].has()) {
        p.weight = params_[i].weight.template cast<T>();
        p.bias = params_[i].bias.template cast<T>();
      }
      out.add(layers_[i], std::move(p));
    }
    return out;
  }

 private:
  template <typename T>
  friend class ModelGraph;

  Var<S> apply_layer(Tape<S>& tape, Var<S> cur, std::size_t i, const std::vector<Var<S>>& outs, bool train_params,
                     std::vector<ParamVars>* param_vars = nullptr) const {
    const LayerSpec& L = layers_[i];
    auto plant = [&](Var<S>& w, Var<S>& b) {
      w = tape.leaf(params_[i].weight, train_params);
      b = tape.leaf(params_[i].bias, train_params);
      if (param_vars) param_vars->push_back({i, w, b});
    };
    switch (L.kind) {
      case LayerKind::dense: {
        const Tensor<S>& in = tape.val(cur);
        const std::size_t n = in.dim(0);
        Var<S> flat = in.rank() == 2 ? cur : reshape(cur, {n, in.numel() / n});
        Var<S> w, b;
        plant(w, b);
        return add_row_bias(matmul(flat, w), b);
      }
      case LayerKind::conv2d: {
        Var<S> w, b;
        plant(w, b);
        return conv2d(cur, w, b, L.stride, L.pad);
      }
      case LayerKind::deconv2d: {
        Var<S> w, b;
        plant(w, b);
        return deconv2d(cur, w, b, L.stride);
      }
      case LayerKind::maxpool2d: return maxpool2x2(cur);
      case LayerKind::relu: return relu(cur);
      case LayerKind::slu: return slu(cur, static_cast<S>(L.slu_a));
      case LayerKind::sigmoid: return sigmoid(cur);
      case LayerKind::flatten: {
        const Tensor<S>& in = tape.val(cur);
        return reshape(cur, {in.dim(0), in.numel() / in.dim(0)});
      }
      case LayerKind::skip_concat:
        detail::require(L.skip_from >= 0 && static_cast<std::size_t>(L.skip_from) < i,
                        "skip_concat: source layer index out of range");
        return concat_channels(cur, outs[static_cast<std::size_t>(L.skip_from)]);
    }
    throw std::logic_error("apply_layer: unknown layer kind");
  }

  Shape input_shape_;
  OutputKind output_ = OutputKind::logits;
  std::string kind_ = "custom";
  std::vector<LayerSpec> layers_;
  std::vector<LayerParams<S>> params_;
};

namespace detail {
template <typename S>
LayerParams<S> dense_params(std::size_t in, std::size_t out, Rng& rng) {
  LayerParams<S> p;
  const double stddev = std::sqrt(init_variance(in, out, 1, 1));
  p.weight = rng_normal<S>(rng, {in, out}, 0.0, stddev);
  p.bias = Tensor<S>::zeros({out});
  return p;
}
template <typename S>
LayerParams<S> conv_params(std::size_t in_c, std::size_t out_c, std::size_t k, Rng& rng) {
  LayerParams<S> p;
  p.weight = init_conv<S>(in_c, out_c, k, k, rng);
  p.bias = Tensor<S>::zeros({out_c});
  return p;
}
template <typename S>
LayerParams<S> deconv_params(std::size_t in_c, std::size_t out_c, std::size_t k, Rng& rng) {
  LayerParams<S> p;
  const double stddev = std::sqrt(init_variance(in_c, out_c, k, k));
  p.weight = rng_normal<S>(rng, {in_c, out_c, k, k}, 0.0, stddev);
  p.bias = Tensor<S>::zeros({out_c});
  return p;
}
}  // namespace detail

// flatten -> dense/ReLU stack -> class logits.
template <typename S>
ModelGraph<S> build_mlp(Shape input_shape, const std::vector<std::size_t>& hidden, std::size_t classes, Rng& rng) {
  ModelGraph<S> m(input_shape, OutputKind::logits, "mlp");
  m.add(LayerSpec::flatten());
  std::size_t prev = shape_numel(input_shape);
  for (std::size_t hsz : hidden) {
    m.add(LayerSpec::dense(prev, hsz), detail::dense_params<S>(prev, hsz, rng));
    m.add(LayerSpec::relu());
    prev = hsz;
  }
  m.add(LayerSpec::dense(prev, classes), detail::dense_params<S>(prev, classes, rng));
  return m;
}

template <typename S>
ModelGraph<S> build_mlp(Rng& rng) {
  return build_mlp<S>({1, 28, 28}, {256, 128}, 10, rng);
}

// Three conv/pool blocks and two dense layers for 3x32x32 inputs.
template <typename S>
ModelGraph<S> build_convnet(Shape input_shape, std::size_t classes, Rng& rng) {
  detail::require(input_shape.size() == 3, "build_convnet: CHW input shape expected");
  const std::size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
  detail::require(h % 8 == 0 && w % 8 == 0, "build_convnet: spatial dims must be divisible by 8");
  ModelGraph<S> m(input_shape, OutputKind::logits, "convnet");
  const std::size_t widths[3] = {16, 32, 64};
  std::size_t prev = c;
  for (std::size_t blk = 0; blk < 3; ++blk) {
    m.add(LayerSpec::conv(prev, widths[blk], 3, 1, 1), detail::conv_params<S>(prev, widths[blk], 3, rng));
    m.add(LayerSpec::relu());
    m.add(LayerSpec::maxpool());
    prev = widths[blk];
  }
  const std::size_t feat = prev * (h / 8) * (w / 8);
  m.add(LayerSpec::flatten());
  m.add(LayerSpec::dense(feat, 128), detail::dense_params<S>(feat, 128, rng));
  m.add(LayerSpec::relu());
  m.add(LayerSpec::dense(128, classes), detail::dense_params<S>(128, classes, rng));
  return m;
}

template <typename S>
ModelGraph<S> build_convnet(Rng& rng) {
  return build_convnet<S>({3, 32, 32}, 10, rng);
}

// Mask generator: 3-level encoder (conv+SLU+maxpool) / decoder (deconv+SLU)
// with skip concatenations and a sigmoid head. Output is one channel at the
// input's spatial size, values in [0, 1].
template <typename S>
ModelGraph<S> build_xunet(Shape input_shape, Rng& rng, double slu_a = 0.5) {
  detail::require(input_shape.size() == 3, "build_xunet: CHW input shape expected");
  const std::size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
  detail::require(h % 4 == 0 && w % 4 == 0,
                  "build_xunet: spatial dims must be divisible by 4, got " + shape_str(input_shape));
  ModelGraph<S> m(input_shape, OutputKind::mask, "xunet");
  // encoder
  m.add(LayerSpec::conv(c, 16, 3, 1, 1), detail::conv_params<S>(c, 16, 3, rng));   // 0
  m.add(LayerSpec::slu(slu_a));                                                    // 1: e1
  m.add(LayerSpec::maxpool());                                                     // 2
  m.add(LayerSpec::conv(16, 32, 3, 1, 1), detail::conv_params<S>(16, 32, 3, rng)); // 3
  m.add(LayerSpec::slu(slu_a));                                                    // 4: e2
  m.add(LayerSpec::maxpool());                                                     // 5
  m.add(LayerSpec::conv(32, 64, 3, 1, 1), detail::conv_params<S>(32, 64, 3, rng)); // 6
  m.add(LayerSpec::slu(slu_a));                                                    // 7
  // decoder
  m.add(LayerSpec::deconv(64, 32, 2, 2), detail::deconv_params<S>(64, 32, 2, rng));  // 8
  m.add(LayerSpec::slu(slu_a));                                                      // 9
  m.add(LayerSpec::skip(4));                                                         // 10: cat e2 -> 64
  m.add(LayerSpec::conv(64, 32, 3, 1, 1), detail::conv_params<S>(64, 32, 3, rng));   // 11
  m.add(LayerSpec::slu(slu_a));                                                      // 12
  m.add(LayerSpec::deconv(32, 16, 2, 2), detail::deconv_params<S>(32, 16, 2, rng));  // 13
  m.add(LayerSpec::slu(slu_a));                                                      // 14
  m.add(LayerSpec::skip(1));                                                         // 15: cat e1 -> 32
  m.add(LayerSpec::conv(32, 16, 3, 1, 1), detail::conv_params<S>(32, 16, 3, rng));   // 16
  m.add(LayerSpec::slu(slu_a));                                                      // 17
  m.add(LayerSpec::conv(16, 1, 1, 1, 0), detail::conv_params<S>(16, 1, 1, rng));     // 18
  m.add(LayerSpec::sigmoid());                                                       // 19
  return m;
}

}  // namespace xmask
