#pragma once

// Attention masks in [0, 1] that gate attack steps via Hadamard product.
// The mixture rule draws one weight pair per sample, convexly blends the
// normalized relevance and path-integral attributions, and inverts the
// blend so high-saliency pixels end up suppressed.

#include <cstdint>
#include <string>

#include "xmask/explain.hpp"
#include "xmask/rng.hpp"
#include "xmask/tensor.hpp"

namespace xmask {

enum class MaskProvenance : std::uint8_t { mute, xunet, constant };

inline const char* mask_provenance_name(MaskProvenance p) {
  switch (p) {
    case MaskProvenance::mute: return "mute";
    case MaskProvenance::xunet: return "xunet";
    case MaskProvenance::constant: return "constant";
  }
  return "?";
}

template <typename S>
struct AttentionMask {
  Tensor<S> values;  // image-shaped, in [0, 1]
  MaskProvenance provenance = MaskProvenance::constant;
};

struct MuteConfig {
  double thresh = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(thresh >= 0.0 && thresh <= 1.0,
                    "mute: thresh must be in [0,1], got " + std::to_string(thresh));
  }
};

// Mixing weights after the draw: b = 1-a, and if a < thresh both flip to
// their complements. a + b stays exactly 1.
struct MuteWeights {
  double a, b;
};

inline MuteWeights mute_weights(double a_drawn, double thresh) {
  double a = a_drawn;
  double b = 1.0 - a;
  if (a < thresh) {
    a = 1.0 - a;
    b = 1.0 - b;
  }
  return {a, b};
}

// Deterministic core of the mixture: mix = 1 - (b * norm(lrp) + a * norm(ig)).
// Both attributions are normalized to [0,1] before blending.
template <typename S>
Tensor<S> mute_mix(const Tensor<S>& lrp, const Tensor<S>& ig, double a_drawn, double thresh) {
  detail::require_same_shape(lrp, ig, "mute");
  const MuteWeights w = mute_weights(a_drawn, thresh);
  Tensor<S> ln = normalize01(lrp);
  Tensor<S> in = normalize01(ig);
  Tensor<S> out(lrp.shape());
  out.array() = S(1) - (static_cast<S>(w.b) * ln.array() + static_cast<S>(w.a) * in.array());
  return out;
}

// One weight draw per sample; sample i uses the seed's substream i so the
// result is independent of any cross-sample parallelism.
template <typename S>
AttentionMask<S> mute(const Explanation<S>& lrp, const Explanation<S>& ig, const MuteConfig& cfg) {
  cfg.validate();
  detail::require_same_shape(lrp.attribution, ig.attribution, "mute");
  detail::require(lrp.attribution.rank() >= 2, "mute: batch attributions expected");
  const std::size_t n = lrp.attribution.dim(0);
  AttentionMask<S> m;
  m.values = Tensor<S>(lrp.attribution.shape());
  m.provenance = MaskProvenance::mute;
  Rng root(cfg.seed);
  for (std::size_t i = 0; i < n; ++i) {
    Rng stream = root.substream(i);
    const double a = stream.uniform();
    write_outer(m.values, i, mute_mix(slice_outer(lrp.attribution, i), slice_outer(ig.attribution, i), a, cfg.thresh));
  }
  return m;
}

template <typename S>
AttentionMask<S> constant_mask(Shape shape, S value) {
  detail::require(value >= S(0) && value <= S(1),
                  "constant_mask: value must be in [0,1], got " + std::to_string(static_cast<double>(value)));
  AttentionMask<S> m;
  m.values = Tensor<S>::full(std::move(shape), value);
  m.provenance = MaskProvenance::constant;
  return m;
}

// Replicates a single-channel mask across C image channels so 1-channel
// generator output can gate multichannel images.
template <typename S>
Tensor<S> expand_mask_channels(const Tensor<S>& mask, std::size_t channels) {
  detail::require(mask.rank() == 3 && mask.dim(0) == 1, "expand_mask_channels: [1,H,W] mask expected");
  if (channels == 1) return mask;
  Tensor<S> out({channels, mask.dim(1), mask.dim(2)});
  for (std::size_t c = 0; c < channels; ++c)
    std::copy(mask.data(), mask.data() + mask.numel(), out.data() + c * mask.numel());
  return out;
}

}  // namespace xmask
