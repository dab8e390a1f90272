#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "epcdepth/gemm.hpp"
#include "epcdepth/tensor.hpp"

namespace epc {

namespace detail {

template <class T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  EPC_CHECK(a.shape() == b.shape(), op, ": shape mismatch ", shape_str(a.shape()), " vs ",
            shape_str(b.shape()));
}

template <class T>
void check_rank4(const TensorT<T>& t, const char* op) {
  EPC_CHECK(t.rank() == 4, op, ": expected NCHW tensor, got ", shape_str(t.shape()));
}

// Fixed-chunk split for elementwise kernels; single call below the
// threshold. body(i0, i1). Elementwise work is memory-bound, so the pool
// only pays off for very large tensors.
constexpr int64_t kEltChunk = 1 << 21;

template <class Body>
void for_range(int64_t n, const Body& body) {
  if (n < kEltChunk + kEltChunk / 2) {
    body(int64_t{0}, n);
    return;
  }
  parallel_chunks(n, kEltChunk, body);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

namespace detail {

// Shared skeleton for same-shape binary ops: `fwd(i)` computes the output,
// `da(g, i)` / `db(g, i)` give the input adjoints.
template <class T, class Fwd, class Da, class Db>
TensorT<T> binary_op(const char* name, const TensorT<T>& a, const TensorT<T>& b, Fwd fwd, Da da,
                     Db db) {
  check_same_shape(a, b, name);
  TensorT<T> out(a.shape());
  const int64_t n = a.numel();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for_range(n, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) po[i] = fwd(pa[i], pb[i]);
  });
  if (record_op<T>({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    TapeT<T>::active().emit(oi, [ai, bi, oi, n, da, db] {
      const double* g = oi->grad.data();
      const T* pa2 = ai->data.data();
      const T* pb2 = bi->data.data();
      if (ai->requires_grad) {
        double* ga = grad_buffer(ai).data();
        for_range(n, [&](int64_t i0, int64_t i1) {
          for (int64_t i = i0; i < i1; ++i) ga[i] += da(g[i], pa2[i], pb2[i]);
        });
      }
      if (bi->requires_grad) {
        double* gb = grad_buffer(bi).data();
        for_range(n, [&](int64_t i0, int64_t i1) {
          for (int64_t i = i0; i < i1; ++i) gb[i] += db(g[i], pa2[i], pb2[i]);
        });
      }
    });
  }
  return out;
}

}  // namespace detail

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_op(
      "add", a, b, [](T x, T y) { return x + y; }, [](double g, T, T) { return g; },
      [](double g, T, T) { return g; });
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_op(
      "sub", a, b, [](T x, T y) { return x - y; }, [](double g, T, T) { return g; },
      [](double g, T, T) { return -g; });
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_op(
      "mul", a, b, [](T x, T y) { return x * y; }, [](double g, T, T y) { return g * y; },
      [](double g, T x, T) { return g * x; });
}

template <class T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_op(
      "div", a, b, [](T x, T y) { return x / y; }, [](double g, T, T y) { return g / y; },
      [](double g, T x, T y) { return -g * x / (static_cast<double>(y) * y); });
}

// ---------------------------------------------------------------------------
// Scalar ops
// ---------------------------------------------------------------------------

namespace detail {

// Shared skeleton for unary ops. `fwd(x)` computes the output, `dx(g, x, o)`
// the input adjoint (o = forward output, handy for sigmoid/elu).
template <class T, class Fwd, class Dx>
TensorT<T> unary_op(const TensorT<T>& a, Fwd fwd, Dx dx) {
  TensorT<T> out(a.shape());
  const int64_t n = a.numel();
  const T* pa = a.data();
  T* po = out.data();
  for_range(n, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) po[i] = fwd(pa[i]);
  });
  if (record_op<T>({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    TapeT<T>::active().emit(oi, [ai, oi, n, dx] {
      const double* g = oi->grad.data();
      const T* pa2 = ai->data.data();
      const T* po2 = oi->data.data();
      double* ga = grad_buffer(ai).data();
      for_range(n, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) ga[i] += dx(g[i], pa2[i], po2[i]);
      });
    });
  }
  return out;
}

}  // namespace detail

template <class T>
TensorT<T> add_scalar(const TensorT<T>& a, T c) {
  return detail::unary_op(
      a, [c](T x) { return x + c; }, [](double g, T, T) { return g; });
}

template <class T>
TensorT<T> mul_scalar(const TensorT<T>& a, T c) {
  return detail::unary_op(
      a, [c](T x) { return x * c; }, [c](double g, T, T) { return c * g; });
}

// c - a
template <class T>
TensorT<T> rsub_scalar(T c, const TensorT<T>& a) {
  return detail::unary_op(
      a, [c](T x) { return c - x; }, [](double g, T, T) { return -g; });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> abs(const TensorT<T>& a) {
  // subgradient 0 at the kink
  return detail::unary_op(
      a, [](T x) { return std::fabs(x); },
      [](double g, T x, T) { return x > T(0) ? g : (x < T(0) ? -g : 0.0); });
}

/// Natural logarithm.
template <class T>
TensorT<T> log(const TensorT<T>& a) {
  return detail::unary_op(
      a, [](T x) { return std::log(x); }, [](double g, T x, T) { return g / x; });
}

template <class T>
TensorT<T> sigmoid(const TensorT<T>& a) {
  return detail::unary_op(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](double g, T, T s) { return g * s * (T(1) - s); });
}

template <class T>
TensorT<T> elu(const TensorT<T>& a) {
  return detail::unary_op(
      a, [](T x) { return x > T(0) ? x : std::expm1(x); },
      [](double g, T x, T o) { return x > T(0) ? g : g * (o + T(1)); });
}

// ---------------------------------------------------------------------------
// Min / max with "first argument wins ties"
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> minimum(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_op(
      "minimum", a, b, [](T x, T y) { return x <= y ? x : y; },
      [](double g, T x, T y) { return x <= y ? g : 0.0; },
      [](double g, T x, T y) { return x <= y ? 0.0 : g; });
}

template <class T>
TensorT<T> maximum(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_op(
      "maximum", a, b, [](T x, T y) { return x >= y ? x : y; },
      [](double g, T x, T y) { return x >= y ? g : 0.0; },
      [](double g, T x, T y) { return x >= y ? 0.0 : g; });
}

// ---------------------------------------------------------------------------
// Mask select; the mask is a constant in the backward pass.
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> where_mask(const TensorT<T>& mask, const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "where_mask");
  detail::check_same_shape(mask, a, "where_mask");
  TensorT<T> out(a.shape());
  const int64_t n = a.numel();
  const T* pm = mask.data();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  detail::for_range(n, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) po[i] = pm[i] > T(0.5) ? pa[i] : pb[i];
  });
  if (detail::record_op<T>({&a, &b})) {
    out.set_requires_grad(true);
    auto mi = mask.impl(), ai = a.impl(), bi = b.impl(), oi = out.impl();
    TapeT<T>::active().emit(oi, [mi, ai, bi, oi, n] {
      const double* g = oi->grad.data();
      const T* m = mi->data.data();
      if (ai->requires_grad) {
        double* ga = detail::grad_buffer(ai).data();
        detail::for_range(n, [&](int64_t i0, int64_t i1) {
          for (int64_t i = i0; i < i1; ++i)
            if (m[i] > T(0.5)) ga[i] += g[i];
        });
      }
      if (bi->requires_grad) {
        double* gb = detail::grad_buffer(bi).data();
        detail::for_range(n, [&](int64_t i0, int64_t i1) {
          for (int64_t i = i0; i < i1; ++i)
            if (!(m[i] > T(0.5))) gb[i] += g[i];
        });
      }
    });
  }
  return out;
}

/// Constant 0/1 mask with 1 where a < b. Never on the tape.
template <class T>
TensorT<T> lt_mask(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "lt_mask");
  TensorT<T> out(a.shape());
  const int64_t n = a.numel();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] < pb[i] ? T(1) : T(0);
  return out;
}

// ---------------------------------------------------------------------------
// Reductions (64-bit accumulation)
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> sum(const TensorT<T>& a) {
  const int64_t n = a.numel();
  double acc = 0.0;
  const T* pa = a.data();
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(pa[i]);
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc));
  if (detail::record_op<T>({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    TapeT<T>::active().emit(oi, [ai, oi, n] {
      const double g = oi->grad[0];
      auto& ga = detail::grad_buffer(ai);
      for (int64_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}

template <class T>
TensorT<T> mean(const TensorT<T>& a) {
  const int64_t n = a.numel();
  double acc = 0.0;
  const T* pa = a.data();
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(pa[i]);
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
  if (detail::record_op<T>({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    TapeT<T>::active().emit(oi, [ai, oi, n] {
      const double g = oi->grad[0] / static_cast<double>(n);
      auto& ga = detail::grad_buffer(ai);
      for (int64_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}

namespace detail {

template <class T>
TensorT<T> reduce_axis(const TensorT<T>& a, int axis, bool take_mean) {
  EPC_CHECK(axis >= 0 && axis < a.rank(), "reduce_axis: axis ", axis, " out of range for ",
            shape_str(a.shape()));
  Shape out_shape = a.shape();
  const int64_t mid = out_shape[static_cast<size_t>(axis)];
  out_shape[static_cast<size_t>(axis)] = 1;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);

  TensorT<T> out(out_shape);
  const T* pa = a.data();
  T* po = out.data();
  const double scale = take_mean ? 1.0 / static_cast<double>(mid) : 1.0;
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      double acc = 0.0;
      for (int64_t m = 0; m < mid; ++m) acc += static_cast<double>(pa[(o * mid + m) * inner + i]);
      po[o * inner + i] = static_cast<T>(acc * scale);
    }
  }
  if (record_op<T>({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    const double gscale = scale;
    TapeT<T>::active().emit(oi, [ai, oi, outer, mid, inner, gscale] {
      auto& ga = grad_buffer(ai);
      const auto& g = oi->grad;
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t m = 0; m < mid; ++m)
          for (int64_t i = 0; i < inner; ++i)
            ga[(o * mid + m) * inner + i] += g[o * inner + i] * gscale;
    });
  }
  return out;
}

}  // namespace detail

/// Sum over one axis; the reduced axis is kept with size 1.
template <class T>
TensorT<T> sum_axis(const TensorT<T>& a, int axis) {
  return detail::reduce_axis(a, axis, false);
}

template <class T>
TensorT<T> mean_axis(const TensorT<T>& a, int axis) {
  return detail::reduce_axis(a, axis, true);
}

// ---------------------------------------------------------------------------
// Resizing (pixel centers at (i + 0.5) / N)
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> resize_nearest(const TensorT<T>& a, int out_h, int out_w) {
  detail::check_rank4(a, "resize_nearest");
  EPC_CHECK(out_h > 0 && out_w > 0, "resize_nearest: bad target size");
  const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  if (out_h == H && out_w == W) return a;
  TensorT<T> out({N, C, out_h, out_w});
  std::vector<int> sy(static_cast<size_t>(out_h)), sx(static_cast<size_t>(out_w));
  const double hscale = static_cast<double>(H) / out_h;
  const double wscale = static_cast<double>(W) / out_w;
  for (int y = 0; y < out_h; ++y)
    sy[static_cast<size_t>(y)] = std::min(H - 1, static_cast<int>((y + 0.5) * hscale));
  for (int x = 0; x < out_w; ++x)
    sx[static_cast<size_t>(x)] = std::min(W - 1, static_cast<int>((x + 0.5) * wscale));
  const T* pa = a.data();
  T* po = out.data();
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const T* src = pa + nc * H * W;
    T* dst = po + nc * static_cast<int64_t>(out_h) * out_w;
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x)
        dst[static_cast<int64_t>(y) * out_w + x] =
            src[static_cast<int64_t>(sy[static_cast<size_t>(y)]) * W + sx[static_cast<size_t>(x)]];
  }
  if (detail::record_op<T>({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    TapeT<T>::active().emit(oi, [ai, oi, N, C, H, W, out_h, out_w, sy, sx] {
      double* ga = detail::grad_buffer(ai).data();
      const double* g = oi->grad.data();
      for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
        double* gsrc = ga + nc * H * W;
        const double* gdst = g + nc * static_cast<int64_t>(out_h) * out_w;
        for (int y = 0; y < out_h; ++y)
          for (int x = 0; x < out_w; ++x)
            gsrc[static_cast<int64_t>(sy[static_cast<size_t>(y)]) * W +
                 sx[static_cast<size_t>(x)]] += gdst[static_cast<int64_t>(y) * out_w + x];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> resize_bilinear(const TensorT<T>& a, int out_h, int out_w) {
  detail::check_rank4(a, "resize_bilinear");
  EPC_CHECK(out_h > 0 && out_w > 0, "resize_bilinear: bad target size");
  const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  if (out_h == H && out_w == W) return a;
  TensorT<T> out({N, C, out_h, out_w});

  struct Tap {
    int i0, i1;
    T w1;  // weight of i1; weight of i0 is 1 - w1
  };
  auto make_taps = [](int in, int out_n) {
    std::vector<Tap> taps(static_cast<size_t>(out_n));
    const double scale = static_cast<double>(in) / out_n;
    for (int i = 0; i < out_n; ++i) {
      const double src = (i + 0.5) * scale - 0.5;
      int i0 = static_cast<int>(std::floor(src));
      const double frac = src - i0;
      int i1 = i0 + 1;
      i0 = std::clamp(i0, 0, in - 1);
      i1 = std::clamp(i1, 0, in - 1);
      taps[static_cast<size_t>(i)] = {i0, i1, static_cast<T>(frac)};
    }
    return taps;
  };
  const std::vector<Tap> ty = make_taps(H, out_h);
  const std::vector<Tap> tx = make_taps(W, out_w);

  const T* pa = a.data();
  T* po = out.data();
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const T* src = pa + nc * H * W;
    T* dst = po + nc * static_cast<int64_t>(out_h) * out_w;
    for (int y = 0; y < out_h; ++y) {
      const Tap& a_y = ty[static_cast<size_t>(y)];
      const T wy1 = a_y.w1, wy0 = T(1) - a_y.w1;
      const T* r0 = src + static_cast<int64_t>(a_y.i0) * W;
      const T* r1 = src + static_cast<int64_t>(a_y.i1) * W;
      for (int x = 0; x < out_w; ++x) {
        const Tap& a_x = tx[static_cast<size_t>(x)];
        const T wx1 = a_x.w1, wx0 = T(1) - a_x.w1;
        dst[static_cast<int64_t>(y) * out_w + x] =
            wy0 * (wx0 * r0[a_x.i0] + wx1 * r0[a_x.i1]) +
            wy1 * (wx0 * r1[a_x.i0] + wx1 * r1[a_x.i1]);
      }
    }
  }
  if (detail::record_op<T>({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    TapeT<T>::active().emit(oi, [ai, oi, N, C, H, W, out_h, out_w, ty, tx] {
      double* ga = detail::grad_buffer(ai).data();
      const double* g = oi->grad.data();
      for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
        double* gsrc = ga + nc * H * W;
        const double* gdst = g + nc * static_cast<int64_t>(out_h) * out_w;
        for (int y = 0; y < out_h; ++y) {
          const Tap& a_y = ty[static_cast<size_t>(y)];
          const double wy1 = a_y.w1, wy0 = 1.0 - a_y.w1;
          for (int x = 0; x < out_w; ++x) {
            const Tap& a_x = tx[static_cast<size_t>(x)];
            const double gv = gdst[static_cast<int64_t>(y) * out_w + x];
            const double wx1 = a_x.w1, wx0 = 1.0 - a_x.w1;
            gsrc[static_cast<int64_t>(a_y.i0) * W + a_x.i0] += gv * wy0 * wx0;
            gsrc[static_cast<int64_t>(a_y.i0) * W + a_x.i1] += gv * wy0 * wx1;
            gsrc[static_cast<int64_t>(a_y.i1) * W + a_x.i0] += gv * wy1 * wx0;
            gsrc[static_cast<int64_t>(a_y.i1) * W + a_x.i1] += gv * wy1 * wx1;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Channel concatenation
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> concat_channels(const std::vector<TensorT<T>>& parts) {
  EPC_CHECK(!parts.empty(), "concat_channels: empty input list");
  detail::check_rank4(parts[0], "concat_channels");
  const int N = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
  int C = 0;
  for (const auto& p : parts) {
    detail::check_rank4(p, "concat_channels");
    EPC_CHECK(p.dim(0) == N && p.dim(2) == H && p.dim(3) == W,
              "concat_channels: incompatible shapes ", shape_str(parts[0].shape()), " vs ",
              shape_str(p.shape()));
    C += p.dim(1);
  }
  TensorT<T> out({N, C, H, W});
  const int64_t plane = static_cast<int64_t>(H) * W;
  T* po = out.data();
  int c_off = 0;
  for (const auto& p : parts) {
    const int pc = p.dim(1);
    const T* pp = p.data();
    for (int n = 0; n < N; ++n) {
      std::copy(pp + static_cast<int64_t>(n) * pc * plane,
                pp + static_cast<int64_t>(n + 1) * pc * plane,
                po + (static_cast<int64_t>(n) * C + c_off) * plane);
    }
    c_off += pc;
  }
  bool any_grad = false;
  for (const auto& p : parts)
    if (p.requires_grad()) any_grad = true;
  if (any_grad && TapeT<T>::active().recording()) {
    std::vector<const TensorT<T>*> ptrs;
    for (const auto& p : parts) ptrs.push_back(&p);
    // record_op wants an initializer_list; reproduce its logic here
    auto& tape = TapeT<T>::active();
    for (const auto& p : parts)
      if (p.requires_grad() && !tape.on_current_epoch(p.impl())) tape.ensure_leaf(p.impl());
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorImplT<T>>> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    auto oi = out.impl();
    tape.emit(oi, [impls, oi, N, C, plane] {
      const auto& g = oi->grad;
      int c_off2 = 0;
      for (const auto& pi : impls) {
        const int pc = static_cast<int>(pi->shape[1]);
        if (pi->requires_grad) {
          auto& gp = detail::grad_buffer(pi);
          for (int n = 0; n < N; ++n) {
            const double* gs = g.data() + (static_cast<int64_t>(n) * C + c_off2) * plane;
            double* gd = gp.data() + static_cast<int64_t>(n) * pc * plane;
            for (int64_t i = 0; i < pc * plane; ++i) gd[i] += gs[i];
          }
        }
        c_off2 += pc;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Box filter: k x k mean with zero padding (constant divisor k^2)
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void box_filter_apply(const T* src, T* dst, int N, int C, int H, int W, int k) {
  const int r = k / 2;
  const T inv = T(1) / static_cast<T>(k * k);
  std::vector<T> rowsum(static_cast<size_t>(H) * W);
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const T* in = src + nc * H * W;
    T* out = dst + nc * H * W;
    // horizontal window sums with zero padding
    for (int y = 0; y < H; ++y) {
      const T* row = in + static_cast<int64_t>(y) * W;
      T* rs = rowsum.data() + static_cast<int64_t>(y) * W;
      T acc = T(0);
      for (int x = 0; x < std::min(r, W); ++x) acc += row[x];
      for (int x = 0; x < W; ++x) {
        if (x + r < W) acc += row[x + r];
        rs[x] = acc;
        if (x - r >= 0) acc -= row[x - r];
      }
    }
    // vertical window sums
    for (int x = 0; x < W; ++x) {
      T acc = T(0);
      for (int y = 0; y < std::min(r, H); ++y) acc += rowsum[static_cast<size_t>(y) * W + x];
      for (int y = 0; y < H; ++y) {
        if (y + r < H) acc += rowsum[static_cast<size_t>(y + r) * W + x];
        out[static_cast<int64_t>(y) * W + x] = acc * inv;
        if (y - r >= 0) acc -= rowsum[static_cast<size_t>(y - r) * W + x];
      }
    }
  }
}

}  // namespace detail

template <class T>
TensorT<T> box_filter(const TensorT<T>& a, int k) {
  detail::check_rank4(a, "box_filter");
  EPC_CHECK(k >= 1 && k % 2 == 1, "box_filter: window must be odd, got ", k);
  EPC_CHECK(k <= a.dim(2) && k <= a.dim(3), "box_filter: window ", k, " larger than image ",
            a.dim(2), "x", a.dim(3));
  const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  TensorT<T> out(a.shape());
  detail::box_filter_apply(a.data(), out.data(), N, C, H, W, k);
  if (detail::record_op<T>({&a})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    // symmetric kernel with zero padding: the adjoint is the same filter
    TapeT<T>::active().emit(oi, [ai, oi, N, C, H, W, k] {
      std::vector<double> tmp(oi->grad.size());
      detail::box_filter_apply(oi->grad.data(), tmp.data(), N, C, H, W, k);
      auto& ga = detail::grad_buffer(ai);
      for (size_t i = 0; i < tmp.size(); ++i) ga[i] += tmp[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// 2-D convolution (im2col + GEMM)
// ---------------------------------------------------------------------------

namespace detail {

// Direct 3x3 kernels (pad 1, stride 1 or 2); everything else goes through
// im2col + GEMM. The direct forms skip the column-matrix memory traffic,
// which dominates at these image sizes.

template <class T>
void conv3x3_fwd(const T* in, const T* k, T* out, int C, int H, int W, int O, int stride,
                 int oh, int ow) {
  for (int o = 0; o < O; ++o) {
    T* op = out + static_cast<int64_t>(o) * oh * ow;
    std::fill(op, op + static_cast<int64_t>(oh) * ow, T(0));
    for (int ci = 0; ci < C; ++ci) {
      const T* ip = in + static_cast<int64_t>(ci) * H * W;
      const T* kp = k + (static_cast<int64_t>(o) * C + ci) * 9;
      for (int y = 0; y < oh; ++y) {
        T* orow = op + static_cast<int64_t>(y) * ow;
        for (int dy = -1; dy <= 1; ++dy) {
          const int sy = y * stride + dy;
          if (sy < 0 || sy >= H) continue;
          const T* irow = ip + static_cast<int64_t>(sy) * W;
          const T k0 = kp[(dy + 1) * 3], k1 = kp[(dy + 1) * 3 + 1], k2 = kp[(dy + 1) * 3 + 2];
          if (stride == 1) {
            orow[0] += k1 * irow[0] + k2 * irow[1];
            for (int x = 1; x < ow - 1; ++x)
              orow[x] += k0 * irow[x - 1] + k1 * irow[x] + k2 * irow[x + 1];
            if (ow > 1) orow[ow - 1] += k0 * irow[W - 2] + k1 * irow[W - 1];
          } else {
            for (int x = 0; x < ow; ++x) {
              const int sx = x * stride - 1;
              T acc = T(0);
              if (sx >= 0) acc += k0 * irow[sx];
              if (sx + 1 < W) acc += k1 * irow[sx + 1];
              if (sx + 2 < W) acc += k2 * irow[sx + 2];
              orow[x] += acc;
            }
          }
        }
      }
    }
  }
}

// dIn += correlation of the output gradient with the flipped kernel.
template <class T>
void conv3x3_bwd_input(const T* g, const T* k, T* gin, int C, int H, int W, int O, int stride,
                       int oh, int ow) {
  if (stride == 1) {
    for (int ci = 0; ci < C; ++ci) {
      T* gp = gin + static_cast<int64_t>(ci) * H * W;
      for (int o = 0; o < O; ++o) {
        const T* gr = g + static_cast<int64_t>(o) * oh * ow;
        const T* kp = k + (static_cast<int64_t>(o) * C + ci) * 9;
        for (int y = 0; y < H; ++y) {
          T* grow = gp + static_cast<int64_t>(y) * W;
          for (int dy = -1; dy <= 1; ++dy) {
            const int gy = y - dy;
            if (gy < 0 || gy >= oh) continue;
            const T* grad_row = gr + static_cast<int64_t>(gy) * ow;
            // flipped taps
            const T k0 = kp[(dy + 1) * 3], k1 = kp[(dy + 1) * 3 + 1], k2 = kp[(dy + 1) * 3 + 2];
            grow[0] += k1 * grad_row[0] + k0 * grad_row[1];
            for (int x = 1; x < W - 1; ++x)
              grow[x] += k2 * grad_row[x - 1] + k1 * grad_row[x] + k0 * grad_row[x + 1];
            if (W > 1) grow[W - 1] += k2 * grad_row[W - 2] + k1 * grad_row[W - 1];
          }
        }
      }
    }
    return;
  }
  for (int o = 0; o < O; ++o) {
    const T* gr = g + static_cast<int64_t>(o) * oh * ow;
    for (int ci = 0; ci < C; ++ci) {
      T* gp = gin + static_cast<int64_t>(ci) * H * W;
      const T* kp = k + (static_cast<int64_t>(o) * C + ci) * 9;
      for (int y = 0; y < oh; ++y) {
        const T* grad_row = gr + static_cast<int64_t>(y) * ow;
        for (int dy = -1; dy <= 1; ++dy) {
          const int sy = y * stride + dy;
          if (sy < 0 || sy >= H) continue;
          T* grow = gp + static_cast<int64_t>(sy) * W;
          const T* kt = kp + (dy + 1) * 3;
          for (int x = 0; x < ow; ++x) {
            const int sx = x * stride - 1;
            const T gv = grad_row[x];
            if (sx >= 0) grow[sx] += kt[0] * gv;
            if (sx + 1 < W) grow[sx + 1] += kt[1] * gv;
            if (sx + 2 < W) grow[sx + 2] += kt[2] * gv;
          }
        }
      }
    }
  }
}

template <class T>
void im2col(const T* in, T* col, int C, int H, int W, int kh, int kw, int stride, int pad,
            int oh, int ow) {
  const int64_t ohw = static_cast<int64_t>(oh) * ow;
  for (int c = 0; c < C; ++c) {
    const T* plane = in + static_cast<int64_t>(c) * H * W;
    for (int dy = 0; dy < kh; ++dy) {
      for (int dx = 0; dx < kw; ++dx) {
        T* dst = col + ((static_cast<int64_t>(c) * kh + dy) * kw + dx) * ohw;
        for (int y = 0; y < oh; ++y) {
          const int sy = y * stride - pad + dy;
          T* drow = dst + static_cast<int64_t>(y) * ow;
          if (sy < 0 || sy >= H) {
            std::fill(drow, drow + ow, T(0));
            continue;
          }
          const T* srow = plane + static_cast<int64_t>(sy) * W;
          for (int x = 0; x < ow; ++x) {
            const int sx = x * stride - pad + dx;
            drow[x] = (sx >= 0 && sx < W) ? srow[sx] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, T* in_grad, int C, int H, int W, int kh, int kw, int stride,
                int pad, int oh, int ow) {
  const int64_t ohw = static_cast<int64_t>(oh) * ow;
  for (int c = 0; c < C; ++c) {
    T* plane = in_grad + static_cast<int64_t>(c) * H * W;
    for (int dy = 0; dy < kh; ++dy) {
      for (int dx = 0; dx < kw; ++dx) {
        const T* src = col + ((static_cast<int64_t>(c) * kh + dy) * kw + dx) * ohw;
        for (int y = 0; y < oh; ++y) {
          const int sy = y * stride - pad + dy;
          if (sy < 0 || sy >= H) continue;
          const T* srow = src + static_cast<int64_t>(y) * ow;
          T* drow = plane + static_cast<int64_t>(sy) * W;
          for (int x = 0; x < ow; ++x) {
            const int sx = x * stride - pad + dx;
            if (sx >= 0 && sx < W) drow[sx] += srow[x];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// conv2d over NCHW input with an [out_ch, in_ch, kh, kw] kernel and an
/// optional [out_ch] bias. Zero padding, floor output size.
template <class T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel, const TensorT<T>& bias,
                  int stride, int pad) {
  detail::check_rank4(input, "conv2d input");
  detail::check_rank4(kernel, "conv2d kernel");
  EPC_CHECK(stride >= 1, "conv2d: stride must be positive, got ", stride);
  EPC_CHECK(pad >= 0, "conv2d: padding must be non-negative, got ", pad);
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int O = kernel.dim(0), KC = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  EPC_CHECK(KC == C, "conv2d: kernel expects ", KC, " input channels, input has ", C, " (input ",
            shape_str(input.shape()), ", kernel ", shape_str(kernel.shape()), ")");
  const int oh = (H + 2 * pad - kh) / stride + 1;
  const int ow = (W + 2 * pad - kw) / stride + 1;
  EPC_CHECK(H + 2 * pad >= kh && W + 2 * pad >= kw && oh >= 1 && ow >= 1,
            "conv2d: kernel ", kh, "x", kw, " does not fit padded input ", H + 2 * pad, "x",
            W + 2 * pad);
  if (bias.defined()) {
    EPC_CHECK(bias.rank() == 1 && bias.dim(0) == O, "conv2d: bias shape ",
              shape_str(bias.shape()), " does not match ", O, " output channels");
  }

  const int64_t ckk = static_cast<int64_t>(C) * kh * kw;
  const int64_t ohw = static_cast<int64_t>(oh) * ow;
  const bool unit = (kh == 1 && kw == 1 && stride == 1 && pad == 0);
  const bool direct3 = (kh == 3 && kw == 3 && pad == 1 && (stride == 1 || stride == 2) &&
                        H >= 2 && W >= 2);

  TensorT<T> out({N, O, oh, ow});
  {
    const T* pb = bias.defined() ? bias.data() : nullptr;
    // batch items are independent
    ThreadPool::instance().run(N, [&](int64_t n) {
      const T* in_n = input.data() + n * C * H * W;
      T* out_n = out.data() + n * O * ohw;
      if (direct3) {
        detail::conv3x3_fwd(in_n, kernel.data(), out_n, C, H, W, O, stride, oh, ow);
      } else if (unit) {
        detail::gemm_nn(kernel.data(), in_n, out_n, O, ckk, ohw, /*accum=*/false);
      } else {
        std::vector<T> col(static_cast<size_t>(ckk * ohw));
        detail::im2col(in_n, col.data(), C, H, W, kh, kw, stride, pad, oh, ow);
        detail::gemm_nn(kernel.data(), col.data(), out_n, O, ckk, ohw, /*accum=*/false);
      }
      if (pb != nullptr) {
        for (int o = 0; o < O; ++o) {
          const T bv = pb[o];
          T* row = out_n + static_cast<int64_t>(o) * ohw;
          for (int64_t i = 0; i < ohw; ++i) row[i] += bv;
        }
      }
    });
  }

  const bool has_bias = bias.defined();
  bool rec = has_bias ? detail::record_op<T>({&input, &kernel, &bias})
                      : detail::record_op<T>({&input, &kernel});
  if (rec) {
    out.set_requires_grad(true);
    auto ii = input.impl(), ki = kernel.impl(), oi = out.impl();
    auto bi = has_bias ? bias.impl() : nullptr;
    TapeT<T>::active().emit(oi, [ii, ki, bi, oi, N, C, H, W, O, kh, kw, stride, pad, oh, ow,
                                 ckk, ohw, unit, direct3] {
      const auto& g = oi->grad;
      const bool want_bias = bi != nullptr && bi->requires_grad;
      const bool want_kernel = ki->requires_grad;
      const bool want_input = ii->requires_grad;
      double* gi = want_input ? detail::grad_buffer(ii).data() : nullptr;

      // per-batch-item scratch so items can run in parallel; reduced in a
      // fixed order afterwards
      std::vector<std::vector<T>> gk_parts(want_kernel ? static_cast<size_t>(N) : 0);
      std::vector<std::vector<double>> gb_parts(want_bias ? static_cast<size_t>(N) : 0);
      ThreadPool::instance().run(N, [&](int64_t n) {
        const double* g_n = g.data() + n * O * ohw;
        const T* in_n = ii->data.data() + n * C * H * W;
        std::vector<T> g_cast(static_cast<size_t>(O * ohw));
        for (int64_t i = 0; i < O * ohw; ++i) g_cast[static_cast<size_t>(i)] = static_cast<T>(g_n[i]);
        if (want_bias) {
          auto& part = gb_parts[static_cast<size_t>(n)];
          part.assign(static_cast<size_t>(O), 0.0);
          for (int o = 0; o < O; ++o) {
            double acc = 0.0;
            const double* row = g_n + static_cast<int64_t>(o) * ohw;
            for (int64_t i = 0; i < ohw; ++i) acc += row[i];
            part[static_cast<size_t>(o)] = acc;
          }
        }
        if (want_kernel) {
          auto& part = gk_parts[static_cast<size_t>(n)];
          part.assign(static_cast<size_t>(O * ckk), T(0));
          if (unit) {
            detail::gemm_nt(g_cast.data(), in_n, part.data(), O, ohw, ckk, /*accum=*/false);
          } else {
            // GEMM keeps the tap reductions vectorized
            std::vector<T> col(static_cast<size_t>(ckk * ohw));
            detail::im2col(in_n, col.data(), C, H, W, kh, kw, stride, pad, oh, ow);
            detail::gemm_nt(g_cast.data(), col.data(), part.data(), O, ohw, ckk, /*accum=*/false);
          }
        }
        if (gi != nullptr) {
          std::vector<T> gin_n(static_cast<size_t>(C) * H * W, T(0));
          if (direct3) {
            detail::conv3x3_bwd_input(g_cast.data(), ki->data.data(), gin_n.data(), C, H, W, O,
                                      stride, oh, ow);
          } else if (unit) {
            detail::gemm_tn(ki->data.data(), g_cast.data(), gin_n.data(), ckk, O, ohw,
                            /*accum=*/false);
          } else {
            std::vector<T> dcol(static_cast<size_t>(ckk * ohw));
            detail::gemm_tn(ki->data.data(), g_cast.data(), dcol.data(), ckk, O, ohw,
                            /*accum=*/false);
            detail::col2im_add(dcol.data(), gin_n.data(), C, H, W, kh, kw, stride, pad, oh, ow);
          }
          double* dst = gi + n * C * H * W;
          for (size_t i = 0; i < gin_n.size(); ++i) dst[i] += gin_n[i];
        }
      });
      if (want_kernel) {
        double* gk = detail::grad_buffer(ki).data();
        for (int n = 0; n < N; ++n) {
          const auto& part = gk_parts[static_cast<size_t>(n)];
          for (int64_t i = 0; i < O * ckk; ++i) gk[i] += part[static_cast<size_t>(i)];
        }
      }
      if (want_bias) {
        auto& gb = detail::grad_buffer(bi);
        for (int n = 0; n < N; ++n)
          for (int o = 0; o < O; ++o)
            gb[static_cast<size_t>(o)] += gb_parts[static_cast<size_t>(n)][static_cast<size_t>(o)];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel, int stride, int pad) {
  return conv2d(input, kernel, TensorT<T>(), stride, pad);
}

// ---------------------------------------------------------------------------
// Non-differentiable data utilities
// ---------------------------------------------------------------------------

/// Horizontal flip (x axis). Data-level utility, never on the tape.
template <class T>
TensorT<T> hflip(const TensorT<T>& a) {
  detail::check_rank4(a, "hflip");
  const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  TensorT<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  for (int64_t r = 0; r < static_cast<int64_t>(N) * C * H; ++r) {
    const T* src = pa + r * W;
    T* dst = po + r * W;
    for (int x = 0; x < W; ++x) dst[x] = src[W - 1 - x];
  }
  return out;
}

/// Stacks [C,H,W] tensors into one [N,C,H,W] batch (constant data).
template <class T>
TensorT<T> stack_batch(const std::vector<TensorT<T>>& items) {
  EPC_CHECK(!items.empty(), "stack_batch: empty list");
  EPC_CHECK(items[0].rank() == 3, "stack_batch: expected [C,H,W] items, got ",
            shape_str(items[0].shape()));
  Shape s = items[0].shape();
  TensorT<T> out({static_cast<int>(items.size()), s[0], s[1], s[2]});
  const int64_t stride = items[0].numel();
  for (size_t n = 0; n < items.size(); ++n) {
    EPC_CHECK(items[n].shape() == s, "stack_batch: inconsistent item shapes");
    std::copy(items[n].data(), items[n].data() + stride,
              out.data() + static_cast<int64_t>(n) * stride);
  }
  return out;
}

}  // namespace epc
