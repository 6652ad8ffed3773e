#pragma once

// NCHW convolution kernels (im2col + Eigen GEMM), transposed convolution,
// 2x2 max pooling and channel concatenation, each exposed both as a plain
// kernel and as a recorded autodiff op.

#include <Eigen/Core>

#include "xmask/autodiff.hpp"
#include "xmask/tensor.hpp"

namespace xmask {

struct ConvGeom {
  std::size_t in_c, in_h, in_w;
  std::size_t out_c, kh, kw;
  std::size_t stride, pad;
  std::size_t out_h() const { return (in_h + 2 * pad - kh) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kw) / stride + 1; }
};

namespace detail {

template <typename S>
using ColMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;  // column-major scratch

// One sample [C,H,W] -> [C*kh*kw, OH*OW].
template <typename S>
void im2col(const S* im, const ConvGeom& g, ColMatrix<S>& col) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  col.setZero(static_cast<Eigen::Index>(g.in_c * g.kh * g.kw), static_cast<Eigen::Index>(oh * ow));
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const std::size_t row = (c * g.kh + ky) * g.kw + kx;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t x = 0; x < ow; ++x) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(x * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            col(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(y * ow + x)) =
                im[(c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

// Scatter-add of a column matrix back into one sample image.
template <typename S>
void col2im(const ColMatrix<S>& col, const ConvGeom& g, S* im) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const std::size_t row = (c * g.kh + ky) * g.kw + kx;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t x = 0; x < ow; ++x) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(x * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            im[(c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + static_cast<std::size_t>(ix)] +=
                col(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(y * ow + x));
          }
        }
      }
    }
  }
}

template <typename S>
using RowMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using CRowMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace detail

// x [N,C,H,W], w [OC,C,kh,kw], b [OC] or null -> [N,OC,OH,OW]
template <typename S>
Tensor<S> conv2d_fwd(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* b, std::size_t stride,
                     std::size_t pad) {
  detail::require(x.rank() == 4 && w.rank() == 4, "conv2d: NCHW input and OIHW weights expected");
  detail::require(x.dim(1) == w.dim(1), "conv2d: channel mismatch, input " + shape_str(x.shape()) +
                                            " vs weights " + shape_str(w.shape()));
  const ConvGeom g{x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), stride, pad};
  const std::size_t n = x.dim(0), oh = g.out_h(), ow = g.out_w(), ckk = g.in_c * g.kh * g.kw;
  Tensor<S> out({n, g.out_c, oh, ow});
  detail::CRowMap<S> wm(w.data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(ckk));
  detail::ColMatrix<S> col;
  for (std::size_t i = 0; i < n; ++i) {
    detail::im2col(x.data() + i * g.in_c * g.in_h * g.in_w, g, col);
    detail::RowMap<S> om(out.data() + i * g.out_c * oh * ow, static_cast<Eigen::Index>(g.out_c),
                         static_cast<Eigen::Index>(oh * ow));
    om.noalias() = wm * col;
    if (b)
      for (std::size_t oc = 0; oc < g.out_c; ++oc) om.row(static_cast<Eigen::Index>(oc)).array() += (*b)[oc];
  }
  return out;
}

template <typename S>
void conv2d_bwd(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& gout, std::size_t stride, std::size_t pad,
                Tensor<S>* gx, Tensor<S>* gw, Tensor<S>* gb) {
  const ConvGeom g{x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), stride, pad};
  const std::size_t n = x.dim(0), oh = g.out_h(), ow = g.out_w(), ckk = g.in_c * g.kh * g.kw;
  detail::CRowMap<S> wm(w.data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(ckk));
  detail::ColMatrix<S> col, colg;
  for (std::size_t i = 0; i < n; ++i) {
    detail::CRowMap<S> gom(gout.data() + i * g.out_c * oh * ow, static_cast<Eigen::Index>(g.out_c),
                           static_cast<Eigen::Index>(oh * ow));
    if (gw || gb) {
      if (gw) {
        detail::im2col(x.data() + i * g.in_c * g.in_h * g.in_w, g, col);
        detail::RowMap<S> gwm(gw->data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(ckk));
        gwm.noalias() += gom * col.transpose();
      }
      if (gb)
        for (std::size_t oc = 0; oc < g.out_c; ++oc) (*gb)[oc] += gom.row(static_cast<Eigen::Index>(oc)).sum();
    }
    if (gx) {
      colg.noalias() = wm.transpose() * gom;
      detail::col2im(colg, g, gx->data() + i * g.in_c * g.in_h * g.in_w);
    }
  }
}

// Transposed convolution. x [N,IC,H,W], w [IC,OC,kh,kw], b [OC] or null;
// output [N,OC,(H-1)*stride+kh, (W-1)*stride+kw] (pad 0).
template <typename S>
Tensor<S> deconv2d_fwd(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* b, std::size_t stride) {
  detail::require(x.rank() == 4 && w.rank() == 4, "deconv2d: NCHW input and IOHW weights expected");
  detail::require(x.dim(1) == w.dim(0), "deconv2d: channel mismatch, input " + shape_str(x.shape()) +
                                            " vs weights " + shape_str(w.shape()));
  const std::size_t n = x.dim(0), ic = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t oc = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h - 1) * stride + kh, ow = (wd - 1) * stride + kw;
  // The output plays the image role of a conv whose output positions are our
  // input pixels, so col2im over that geometry materializes the result.
  const ConvGeom g{oc, oh, ow, ic, kh, kw, stride, 0};
  Tensor<S> out({n, oc, oh, ow});
  detail::CRowMap<S> wm(w.data(), static_cast<Eigen::Index>(ic), static_cast<Eigen::Index>(oc * kh * kw));
  detail::ColMatrix<S> colg;
  for (std::size_t i = 0; i < n; ++i) {
    detail::CRowMap<S> xm(x.data() + i * ic * h * wd, static_cast<Eigen::Index>(ic),
                          static_cast<Eigen::Index>(h * wd));
    colg.noalias() = wm.transpose() * xm;
    detail::col2im(colg, g, out.data() + i * oc * oh * ow);
    if (b) {
      S* base = out.data() + i * oc * oh * ow;
      for (std::size_t c = 0; c < oc; ++c)
        for (std::size_t p = 0; p < oh * ow; ++p) base[c * oh * ow + p] += (*b)[c];
    }
  }
  return out;
}

template <typename S>
void deconv2d_bwd(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& gout, std::size_t stride, Tensor<S>* gx,
                  Tensor<S>* gw, Tensor<S>* gb) {
  const std::size_t n = x.dim(0), ic = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t oc = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = gout.dim(2), ow = gout.dim(3);
  const ConvGeom g{oc, oh, ow, ic, kh, kw, stride, 0};
  detail::CRowMap<S> wm(w.data(), static_cast<Eigen::Index>(ic), static_cast<Eigen::Index>(oc * kh * kw));
  detail::ColMatrix<S> col;
  for (std::size_t i = 0; i < n; ++i) {
    detail::im2col(gout.data() + i * oc * oh * ow, g, col);
    if (gx) {
      detail::RowMap<S> gxm(gx->data() + i * ic * h * wd, static_cast<Eigen::Index>(ic),
                            static_cast<Eigen::Index>(h * wd));
      gxm.noalias() += wm * col;
    }
    if (gw) {
      detail::CRowMap<S> xm(x.data() + i * ic * h * wd, static_cast<Eigen::Index>(ic),
                            static_cast<Eigen::Index>(h * wd));
      detail::RowMap<S> gwm(gw->data(), static_cast<Eigen::Index>(ic), static_cast<Eigen::Index>(oc * kh * kw));
      gwm.noalias() += xm * col.transpose();
    }
    if (gb) {
      const S* base = gout.data() + i * oc * oh * ow;
      for (std::size_t c = 0; c < oc; ++c)
        for (std::size_t p = 0; p < oh * ow; ++p) (*gb)[c] += base[c * oh * ow + p];
    }
  }
}

// 2x2 stride-2 max pooling; argmax holds the flat input offset of each
// winner (first maximum wins ties) for backward and relevance routing.
template <typename S>
Tensor<S> maxpool2x2_fwd(const Tensor<S>& x, std::vector<std::size_t>* argmax) {
  detail::require(x.rank() == 4, "maxpool2x2: NCHW input expected");
  detail::require(x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0,
                  "maxpool2x2: spatial dims must be even, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<S> out({n, c, oh, ow});
  if (argmax) argmax->assign(out.numel(), 0);
  std::size_t oi = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const S* plane = x.data() + (i * c + ch) * h * w;
      const std::size_t plane_off = (i * c + ch) * h * w;
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx, ++oi) {
          std::size_t best = (2 * y) * w + 2 * xx;
          S bv = plane[best];
          const std::size_t cands[3] = {(2 * y) * w + 2 * xx + 1, (2 * y + 1) * w + 2 * xx,
                                        (2 * y + 1) * w + 2 * xx + 1};
          for (std::size_t cd : cands)
            if (plane[cd] > bv) {
              bv = plane[cd];
              best = cd;
            }
          out[oi] = bv;
          if (argmax) (*argmax)[oi] = plane_off + best;
        }
      }
    }
  }
  return out;
}

// ---- recorded ops ----

template <typename S>
Var<S> conv2d(Var<S> x, Var<S> w, Var<S> b, std::size_t stride, std::size_t pad) {
  Tape<S>& t = detail::tape_of(x, w);
  Tensor<S> out = conv2d_fwd(t.val(x), t.val(w), &t.val(b), stride, pad);
  return t.record(std::move(out), {x.id(), w.id(), b.id()},
                  [px = x.id(), pw = w.id(), pb = b.id(), stride, pad](Tape<S>& tp, std::uint32_t id) {
                    const Tensor<S>& g = tp.node(id).grad;
                    const Tensor<S>& xv = tp.node(px).value;
                    const Tensor<S>& wv = tp.node(pw).value;
                    Tensor<S>* gx = tp.node(px).requires_grad ? &tp.grad_buffer(px) : nullptr;
                    Tensor<S>* gw = tp.node(pw).requires_grad ? &tp.grad_buffer(pw) : nullptr;
                    Tensor<S>* gb = tp.node(pb).requires_grad ? &tp.grad_buffer(pb) : nullptr;
                    conv2d_bwd(xv, wv, g, stride, pad, gx, gw, gb);
                  });
}

template <typename S>
Var<S> deconv2d(Var<S> x, Var<S> w, Var<S> b, std::size_t stride) {
  Tape<S>& t = detail::tape_of(x, w);
  Tensor<S> out = deconv2d_fwd(t.val(x), t.val(w), &t.val(b), stride);
  return t.record(std::move(out), {x.id(), w.id(), b.id()},
                  [px = x.id(), pw = w.id(), pb = b.id(), stride](Tape<S>& tp, std::uint32_t id) {
                    const Tensor<S>& g = tp.node(id).grad;
                    const Tensor<S>& xv = tp.node(px).value;
                    const Tensor<S>& wv = tp.node(pw).value;
                    Tensor<S>* gx = tp.node(px).requires_grad ? &tp.grad_buffer(px) : nullptr;
                    Tensor<S>* gw = tp.node(pw).requires_grad ? &tp.grad_buffer(pw) : nullptr;
                    Tensor<S>* gb = tp.node(pb).requires_grad ? &tp.grad_buffer(pb) : nullptr;
                    deconv2d_bwd(xv, wv, g, stride, gx, gw, gb);
                  });
}

template <typename S>
Var<S> maxpool2x2(Var<S> x) {
  Tape<S>& t = *x.tape();
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  Tensor<S> out = maxpool2x2_fwd(t.val(x), argmax.get());
  return t.record(std::move(out), {x.id()}, [px = x.id(), argmax](Tape<S>& tp, std::uint32_t id) {
    const Tensor<S>& g = tp.node(id).grad;
    Tensor<S>& gx = tp.grad_buffer(px);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[(*argmax)[i]] += g[i];
  });
}

// Replicates a single channel across `channels` output channels; backward
// sums the replicas. Lets a 1-channel mask gate a C-channel image on tape.
template <typename S>
Var<S> repeat_channels(Var<S> a, std::size_t channels) {
  Tape<S>& t = *a.tape();
  const Tensor<S>& x = t.val(a);
  detail::require(x.rank() == 4 && x.dim(1) == 1, "repeat_channels: [N,1,H,W] input expected");
  if (channels == 1) return a;
  const std::size_t n = x.dim(0), hw = x.dim(2) * x.dim(3);
  Tensor<S> out({n, channels, x.dim(2), x.dim(3)});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < channels; ++c)
      std::copy(x.data() + i * hw, x.data() + (i + 1) * hw, out.data() + (i * channels + c) * hw);
  return t.record(std::move(out), {a.id()}, [pa = a.id(), n, channels, hw](Tape<S>& tp, std::uint32_t id) {
    const Tensor<S>& g = tp.node(id).grad;
    Tensor<S>& gx = tp.grad_buffer(pa);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] += g[(i * channels + c) * hw + j];
  });
}

// Channelwise concatenation of two NCHW tensors.
template <typename S>
Var<S> concat_channels(Var<S> a, Var<S> b) {
  Tape<S>& t = detail::tape_of(a, b);
  const Tensor<S>& A = t.val(a);
  const Tensor<S>& B = t.val(b);
  detail::require(A.rank() == 4 && B.rank() == 4 && A.dim(0) == B.dim(0) && A.dim(2) == B.dim(2) &&
                      A.dim(3) == B.dim(3),
                  "concat_channels: incompatible shapes " + shape_str(A.shape()) + " and " + shape_str(B.shape()));
  const std::size_t n = A.dim(0), ca = A.dim(1), cb = B.dim(1), hw = A.dim(2) * A.dim(3);
  Tensor<S> out({n, ca + cb, A.dim(2), A.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(A.data() + i * ca * hw, A.data() + (i + 1) * ca * hw, out.data() + i * (ca + cb) * hw);
    std::copy(B.data() + i * cb * hw, B.data() + (i + 1) * cb * hw, out.data() + i * (ca + cb) * hw + ca * hw);
  }
  return t.record(std::move(out), {a.id(), b.id()},
                  [pa = a.id(), pb = b.id(), n, ca, cb, hw](Tape<S>& tp, std::uint32_t id) {
                    const Tensor<S>& g = tp.node(id).grad;
                    for (std::size_t i = 0; i < n; ++i) {
                      if (tp.node(pa).requires_grad) {
                        Tensor<S>& ga = tp.grad_buffer(pa);
                        for (std::size_t j = 0; j < ca * hw; ++j) ga[i * ca * hw + j] += g[i * (ca + cb) * hw + j];
                      }
                      if (tp.node(pb).requires_grad) {
                        Tensor<S>& gb = tp.grad_buffer(pb);
                        for (std::size_t j = 0; j < cb * hw; ++j)
                          gb[i * cb * hw + j] += g[i * (ca + cb) * hw + ca * hw + j];
                      }
                    }
                  });
}

}  // namespace xmask
