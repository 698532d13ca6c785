#pragma once

#include "fusedepth/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace fusedepth {

// ---------------------------------------------------------------------------
// Broadcasting. The right operand of a binary op may match the left exactly,
// or be a single plane (1,H,W), a per-channel vector (C,1,1) or a scalar.

enum class Broadcast { none, plane, channel, scalar };

inline Broadcast classify_broadcast(const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::none;
  if (b.channels == 1 && b.height == a.height && b.width == a.width) return Broadcast::plane;
  if (b.channels == a.channels && b.height == 1 && b.width == 1) return Broadcast::channel;
  if (b.size() == 1) return Broadcast::scalar;
  throw ShapeError("cannot broadcast " + to_string(b) + " onto " + to_string(a));
}

namespace detail {

template <typename Scalar>
ArrayRM<Scalar> expand(const ArrayRM<Scalar>& b, Broadcast kind, const Shape& target) {
  switch (kind) {
    case Broadcast::none:
      return b;
    case Broadcast::plane:
      return b.row(0).replicate(target.channels, 1);
    case Broadcast::channel:
      return b.col(0).replicate(1, target.plane());
    case Broadcast::scalar:
      return ArrayRM<Scalar>::Constant(target.channels, target.plane(), b(0, 0));
  }
  return b;
}

template <typename Scalar>
ArrayRM<Scalar> reduce(const ArrayRM<Scalar>& g, Broadcast kind) {
  switch (kind) {
    case Broadcast::none:
      return g;
    case Broadcast::plane:
      return g.colwise().sum();
    case Broadcast::channel:
      return g.rowwise().sum();
    case Broadcast::scalar:
      return ArrayRM<Scalar>::Constant(1, 1, g.sum());
  }
  return g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic.

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  const Broadcast kind = classify_broadcast(a.shape(), b.shape());
  Tensor<Scalar> out(a.shape(), a.value().values() + detail::expand(b.value().values(), kind, a.shape()));
  return make_node<Scalar>(std::move(out), {a.node(), b.node()}, [kind](Node<Scalar>& n) {
    const auto& g = n.grad.values();
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(g);
    if (n.parents[1]->requires_grad) n.parents[1]->accumulate(detail::reduce<Scalar>(g, kind));
  });
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) {
  const Broadcast kind = classify_broadcast(a.shape(), b.shape());
  Tensor<Scalar> out(a.shape(), a.value().values() - detail::expand(b.value().values(), kind, a.shape()));
  return make_node<Scalar>(std::move(out), {a.node(), b.node()}, [kind](Node<Scalar>& n) {
    const auto& g = n.grad.values();
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(g);
    if (n.parents[1]->requires_grad) n.parents[1]->accumulate(-detail::reduce<Scalar>(g, kind));
  });
}

template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) {
  const Broadcast kind = classify_broadcast(a.shape(), b.shape());
  ArrayRM<Scalar> bx = detail::expand(b.value().values(), kind, a.shape());
  Tensor<Scalar> out(a.shape(), a.value().values() * bx);
  return make_node<Scalar>(std::move(out), {a.node(), b.node()},
                           [kind, bx = std::move(bx)](Node<Scalar>& n) {
                             const auto& g = n.grad.values();
                             if (n.parents[0]->requires_grad) n.parents[0]->accumulate(g * bx);
                             if (n.parents[1]->requires_grad)
                               n.parents[1]->accumulate(detail::reduce<Scalar>(
                                   ArrayRM<Scalar>(g * n.parents[0]->value.values()), kind));
                           });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a.shape(), a.value().values() * s);
  return make_node<Scalar>(std::move(out), {a.node()}, [s](Node<Scalar>& n) {
    n.parents[0]->accumulate(n.grad.values() * s);
  });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a.shape(), a.value().values() + s);
  return make_node<Scalar>(std::move(out), {a.node()},
                           [](Node<Scalar>& n) { n.parents[0]->accumulate(n.grad.values()); });
}

/// s - a, elementwise.
template <typename Scalar>
Var<Scalar> rsub_scalar(Scalar s, const Var<Scalar>& a) {
  Tensor<Scalar> out(a.shape(), s - a.value().values());
  return make_node<Scalar>(std::move(out), {a.node()},
                           [](Node<Scalar>& n) { n.parents[0]->accumulate(-n.grad.values()); });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities.

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
  Tensor<Scalar> out(a.shape(), Scalar(1) / (Scalar(1) + (-a.value().values()).exp()));
  return make_node<Scalar>(std::move(out), {a.node()}, [](Node<Scalar>& n) {
    const auto& y = n.value.values();
    n.parents[0]->accumulate(n.grad.values() * y * (Scalar(1) - y));
  });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& a) {
  Tensor<Scalar> out(a.shape(), a.value().values().tanh());
  return make_node<Scalar>(std::move(out), {a.node()}, [](Node<Scalar>& n) {
    const auto& y = n.value.values();
    n.parents[0]->accumulate(n.grad.values() * (Scalar(1) - y.square()));
  });
}

/// Exponential linear unit with alpha = 1 (continuously differentiable).
template <typename Scalar>
Var<Scalar> elu(const Var<Scalar>& a) {
  const auto& x = a.value().values();
  Tensor<Scalar> out(a.shape(), (x > Scalar(0)).select(x, x.exp() - Scalar(1)));
  return make_node<Scalar>(std::move(out), {a.node()}, [](Node<Scalar>& n) {
    const auto& x = n.parents[0]->value.values();
    const auto& y = n.value.values();
    n.parents[0]->accumulate(n.grad.values() * (x > Scalar(0)).select(ArrayRM<Scalar>::Ones(y.rows(), y.cols()), y + Scalar(1)));
  });
}

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& a) {
  Tensor<Scalar> out(a.shape(), a.value().values().exp());
  return make_node<Scalar>(std::move(out), {a.node()}, [](Node<Scalar>& n) {
    n.parents[0]->accumulate(n.grad.values() * n.value.values());
  });
}

template <typename Scalar>
Var<Scalar> abs(const Var<Scalar>& a) {
  Tensor<Scalar> out(a.shape(), a.value().values().abs());
  return make_node<Scalar>(std::move(out), {a.node()}, [](Node<Scalar>& n) {
    n.parents[0]->accumulate(n.grad.values() * n.parents[0]->value.values().sign());
  });
}

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& a) {
  Tensor<Scalar> out(a.shape(), a.value().values().square());
  return make_node<Scalar>(std::move(out), {a.node()}, [](Node<Scalar>& n) {
    n.parents[0]->accumulate(n.grad.values() * Scalar(2) * n.parents[0]->value.values());
  });
}

// ---------------------------------------------------------------------------
// Reductions.

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Tensor<Scalar> out = Tensor<Scalar>::constant({1, 1, 1}, a.value().values().sum());
  return make_node<Scalar>(std::move(out), {a.node()}, [](Node<Scalar>& n) {
    n.parents[0]->grad_buffer() += n.grad.values()(0, 0);
  });
}

/// Mean over the positions where `valid` (1,H,W) is nonzero, across all
/// channels. Returns zero when nothing is valid.
template <typename Scalar>
Var<Scalar> masked_mean(const Var<Scalar>& a, const Tensor<Scalar>& valid) {
  if (valid.channels() != 1 || valid.height() != a.shape().height || valid.width() != a.shape().width)
    throw ShapeError("masked_mean: validity " + to_string(valid.shape()) + " vs " + to_string(a.shape()));
  ArrayRM<Scalar> weights = (valid.values() != Scalar(0)).template cast<Scalar>();
  const Scalar count = weights.sum() * Scalar(a.shape().channels);
  if (count > Scalar(0)) weights /= count;
  ArrayRM<Scalar> w = weights.row(0).replicate(a.shape().channels, 1);
  Tensor<Scalar> out = Tensor<Scalar>::constant({1, 1, 1}, (a.value().values() * w).sum());
  return make_node<Scalar>(std::move(out), {a.node()}, [w = std::move(w)](Node<Scalar>& n) {
    n.parents[0]->accumulate(w * n.grad.values()(0, 0));
  });
}

/// Per-channel spatial mean, (C,H,W) -> (C,1,1).
template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& a) {
  const Shape s = a.shape();
  Tensor<Scalar> out({s.channels, 1, 1}, a.value().values().rowwise().mean());
  return make_node<Scalar>(std::move(out), {a.node()}, [s](Node<Scalar>& n) {
    n.parents[0]->accumulate(n.grad.values().col(0).replicate(1, s.plane()) / Scalar(s.plane()));
  });
}

// ---------------------------------------------------------------------------
// Channel bookkeeping.

template <typename Scalar>
Var<Scalar> concat_channels(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Shape s = parts.front().shape();
  s.channels = 0;
  for (const auto& p : parts) {
    if (p.shape().height != s.height || p.shape().width != s.width)
      throw ShapeError("concat_channels: spatial mismatch " + to_string(p.shape()));
    s.channels += p.shape().channels;
  }
  Tensor<Scalar> out(s);
  std::vector<std::shared_ptr<Node<Scalar>>> parents;
  int row = 0;
  for (const auto& p : parts) {
    out.values().middleRows(row, p.shape().channels) = p.value().values();
    row += p.shape().channels;
    parents.push_back(p.node());
  }
  return make_node<Scalar>(std::move(out), std::move(parents), [](Node<Scalar>& n) {
    int r = 0;
    for (auto& p : n.parents) {
      const int c = p->value.channels();
      if (p->requires_grad) p->accumulate(n.grad.values().middleRows(r, c));
      r += c;
    }
  });
}

template <typename Scalar>
Var<Scalar> slice_channels(const Var<Scalar>& a, int first, int count) {
  const Shape s = a.shape();
  if (first < 0 || count <= 0 || first + count > s.channels)
    throw ShapeError("slice_channels: range out of bounds for " + to_string(s));
  Tensor<Scalar> out({count, s.height, s.width}, a.value().values().middleRows(first, count));
  return make_node<Scalar>(std::move(out), {a.node()}, [first, count](Node<Scalar>& n) {
    n.parents[0]->grad_buffer().middleRows(first, count) += n.grad.values();
  });
}

// ---------------------------------------------------------------------------
// Convolution via im2col. Weights are stored as (out, in, k*k).

struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

namespace detail {

template <typename Scalar>
MatrixRM<Scalar> im2col(const Tensor<Scalar>& x, const ConvGeometry& g, int out_h, int out_w) {
  const int k = g.kernel;
  MatrixRM<Scalar> cols = MatrixRM<Scalar>::Zero(x.channels() * k * k, out_h * out_w);
  for (int c = 0; c < x.channels(); ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const int row = (c * k + ky) * k + kx;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= x.height()) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < x.width()) cols(row, oy * out_w + ox) = x(c, iy, ix);
          }
        }
      }
  return cols;
}

template <typename Scalar>
void col2im(const MatrixRM<Scalar>& cols, const ConvGeometry& g, int out_h, int out_w, Tensor<Scalar>& dx) {
  const int k = g.kernel;
  for (int c = 0; c < dx.channels(); ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const int row = (c * k + ky) * k + kx;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= dx.height()) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < dx.width()) dx(c, iy, ix) += cols(row, oy * out_w + ox);
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution with zero padding. `weight` is (out, in, k*k), `bias` is
/// (out, 1, 1).
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                   ConvGeometry geo) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.width != geo.kernel * geo.kernel || ws.height != xs.channels)
    throw ShapeError("conv2d: weight " + to_string(ws) + " incompatible with input " + to_string(xs));
  if (bias.shape() != Shape{ws.channels, 1, 1}) throw ShapeError("conv2d: bias shape " + to_string(bias.shape()));
  const int out_h = geo.out_size(xs.height);
  const int out_w = geo.out_size(xs.width);
  if (out_h <= 0 || out_w <= 0) throw ShapeError("conv2d: input too small " + to_string(xs));

  const bool pointwise = geo.kernel == 1 && geo.stride == 1 && geo.pad == 0;
  MatrixRM<Scalar> cols = pointwise ? MatrixRM<Scalar>(x.value().values().matrix())
                                    : detail::im2col(x.value(), geo, out_h, out_w);
  const Eigen::Map<const MatrixRM<Scalar>> w(weight.value().data(), ws.channels, ws.height * ws.width);

  Tensor<Scalar> out({ws.channels, out_h, out_w});
  out.values().matrix().noalias() = w * cols;
  out.values().colwise() += bias.value().values().col(0);

  return make_node<Scalar>(
      std::move(out), {x.node(), weight.node(), bias.node()},
      [geo, out_h, out_w, pointwise, cols = std::move(cols)](Node<Scalar>& n) {
        auto& xn = *n.parents[0];
        auto& wn = *n.parents[1];
        auto& bn = *n.parents[2];
        const auto gy = n.grad.values().matrix();
        const Shape ws = wn.value.shape();
        if (wn.requires_grad) {
          Eigen::Map<MatrixRM<Scalar>> gw(wn.grad_buffer().data(), ws.channels, ws.height * ws.width);
          gw.noalias() += gy * cols.transpose();
        }
        if (bn.requires_grad) bn.accumulate(n.grad.values().rowwise().sum());
        if (xn.requires_grad) {
          const Eigen::Map<const MatrixRM<Scalar>> w(wn.value.data(), ws.channels, ws.height * ws.width);
          MatrixRM<Scalar> gcols = w.transpose() * gy;
          if (pointwise) {
            xn.accumulate(gcols.array());
          } else {
            xn.grad_buffer();
            detail::col2im(gcols, geo, out_h, out_w, xn.grad);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Resampling.

namespace detail {

/// Half-pixel-centre linear interpolation table for one axis.
struct LinearTaps {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

inline LinearTaps linear_taps(int in, int out) {
  LinearTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double scale = double(in) / double(out);
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, double(in - 1));
    const int lo = std::min(int(std::floor(src)), in - 1);
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - lo;
  }
  return t;
}

}  // namespace detail

/// Bilinear resize of every channel to (out_h, out_w); edges clamp.
template <typename Scalar>
Var<Scalar> resize_bilinear(const Var<Scalar>& a, int out_h, int out_w) {
  const Shape s = a.shape();
  if (s.height == out_h && s.width == out_w) return a;
  auto ty = detail::linear_taps(s.height, out_h);
  auto tx = detail::linear_taps(s.width, out_w);
  Tensor<Scalar> out({s.channels, out_h, out_w});
  const auto& in = a.value();
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < out_h; ++y) {
      const Scalar fy = Scalar(ty.frac[y]);
      for (int x = 0; x < out_w; ++x) {
        const Scalar fx = Scalar(tx.frac[x]);
        out(c, y, x) = (1 - fy) * ((1 - fx) * in(c, ty.lo[y], tx.lo[x]) + fx * in(c, ty.lo[y], tx.hi[x])) +
                       fy * ((1 - fx) * in(c, ty.hi[y], tx.lo[x]) + fx * in(c, ty.hi[y], tx.hi[x]));
      }
    }
  return make_node<Scalar>(std::move(out), {a.node()}, [ty, tx](Node<Scalar>& n) {
    auto& p = *n.parents[0];
    p.grad_buffer();
    auto& gin = p.grad;
    const auto& g = n.grad;
    for (int c = 0; c < g.channels(); ++c)
      for (int y = 0; y < g.height(); ++y) {
        const Scalar fy = Scalar(ty.frac[y]);
        for (int x = 0; x < g.width(); ++x) {
          const Scalar fx = Scalar(tx.frac[x]);
          const Scalar v = g(c, y, x);
          gin(c, ty.lo[y], tx.lo[x]) += (1 - fy) * (1 - fx) * v;
          gin(c, ty.lo[y], tx.hi[x]) += (1 - fy) * fx * v;
          gin(c, ty.hi[y], tx.lo[x]) += fy * (1 - fx) * v;
          gin(c, ty.hi[y], tx.hi[x]) += fy * fx * v;
        }
      }
  });
}

/// 2x2 average pooling with stride 2. Odd trailing rows/columns are dropped.
template <typename Scalar>
Var<Scalar> avg_pool2(const Var<Scalar>& a) {
  const Shape s = a.shape();
  const Shape o{s.channels, s.height / 2, s.width / 2};
  if (o.height == 0 || o.width == 0) throw ShapeError("avg_pool2: input too small " + to_string(s));
  Tensor<Scalar> out(o);
  const auto& in = a.value();
  for (int c = 0; c < o.channels; ++c)
    for (int y = 0; y < o.height; ++y)
      for (int x = 0; x < o.width; ++x)
        out(c, y, x) = Scalar(0.25) * (in(c, 2 * y, 2 * x) + in(c, 2 * y, 2 * x + 1) +
                                       in(c, 2 * y + 1, 2 * x) + in(c, 2 * y + 1, 2 * x + 1));
  return make_node<Scalar>(std::move(out), {a.node()}, [](Node<Scalar>& n) {
    auto& p = *n.parents[0];
    p.grad_buffer();
    const auto& g = n.grad;
    for (int c = 0; c < g.channels(); ++c)
      for (int y = 0; y < g.height(); ++y)
        for (int x = 0; x < g.width(); ++x) {
          const Scalar v = Scalar(0.25) * g(c, y, x);
          p.grad(c, 2 * y, 2 * x) += v;
          p.grad(c, 2 * y, 2 * x + 1) += v;
          p.grad(c, 2 * y + 1, 2 * x) += v;
          p.grad(c, 2 * y + 1, 2 * x + 1) += v;
        }
  });
}

// ---------------------------------------------------------------------------
// Sobel filtering with replicate padding.

enum class Axis { x, y };

namespace detail {

/// out(y,x) += sum_k K(k) in(clamp(y+dy), clamp(x+dx)); with `adjoint` the
/// transpose is applied, scattering `in` into `out`.
template <typename Scalar>
void sobel_plane(const Scalar* in, Scalar* out, int h, int w, Axis axis, bool adjoint) {
  static constexpr int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static constexpr int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  const auto& k = axis == Axis::x ? kx : ky;
  if (!adjoint) {
    // Paired differences, so flat regions give exactly zero.
    static constexpr int smooth[3] = {1, 2, 1};
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        Scalar acc(0);
        for (int d = -1; d <= 1; ++d) {
          if (axis == Axis::x) {
            const int yy = std::clamp(y + d, 0, h - 1);
            acc += Scalar(smooth[d + 1]) * (in[yy * w + std::min(x + 1, w - 1)] - in[yy * w + std::max(x - 1, 0)]);
          } else {
            const int xx = std::clamp(x + d, 0, w - 1);
            acc += Scalar(smooth[d + 1]) * (in[std::min(y + 1, h - 1) * w + xx] - in[std::max(y - 1, 0) * w + xx]);
          }
        }
        out[y * w + x] += acc;
      }
    return;
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int dy = -1; dy <= 1; ++dy) {
        const int yy = std::clamp(y + dy, 0, h - 1);
        for (int dx = -1; dx <= 1; ++dx) {
          const int coef = k[dy + 1][dx + 1];
          if (coef == 0) continue;
          const int xx = std::clamp(x + dx, 0, w - 1);
          out[yy * w + xx] += Scalar(coef) * in[y * w + x];
        }
      }
}

}  // namespace detail

/// Plain-value Sobel response of every channel.
template <typename Scalar>
Tensor<Scalar> sobel(const Tensor<Scalar>& t, Axis axis) {
  Tensor<Scalar> out = Tensor<Scalar>::zeros(t.shape());
  for (int c = 0; c < t.channels(); ++c)
    detail::sobel_plane(t.values().row(c).data(), out.values().row(c).data(), t.height(), t.width(), axis, false);
  return out;
}

template <typename Scalar>
Var<Scalar> sobel(const Var<Scalar>& a, Axis axis) {
  Tensor<Scalar> out = sobel(a.value(), axis);
  return make_node<Scalar>(std::move(out), {a.node()}, [axis](Node<Scalar>& n) {
    auto& p = *n.parents[0];
    p.grad_buffer();
    const auto& g = n.grad;
    for (int c = 0; c < g.channels(); ++c)
      detail::sobel_plane(g.values().row(c).data(), p.grad.values().row(c).data(), g.height(), g.width(), axis,
                          true);
  });
}

}  // namespace fusedepth
