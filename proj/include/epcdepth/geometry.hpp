#pragma once

#include <cmath>

#include "epcdepth/ops.hpp"

namespace epc {

/// Which view the warp samples from. The target is always the other view.
enum class WarpSource { Right, Left };

/// Horizontal view synthesis for rectified stereo: samples `source` along
/// each row at x - d (source right, target left) or x + d (source left).
/// Out-of-range samples clamp to the border column; gradients reach the
/// disparity through the bilinear weights and the source through the taps.
template <class T>
TensorT<T> warp(const TensorT<T>& source, const TensorT<T>& disparity, WarpSource dir) {
  detail::check_rank4(source, "warp source");
  detail::check_rank4(disparity, "warp disparity");
  const int N = source.dim(0), C = source.dim(1), H = source.dim(2), W = source.dim(3);
  EPC_CHECK(disparity.dim(0) == N && disparity.dim(1) == 1 && disparity.dim(2) == H &&
                disparity.dim(3) == W,
            "warp: disparity shape ", shape_str(disparity.shape()),
            " does not match source ", shape_str(source.shape()));
  const T sgn = dir == WarpSource::Right ? T(-1) : T(1);

  TensorT<T> out(source.shape());
  const T* src = source.data();
  const T* dsp = disparity.data();
  T* po = out.data();
  const int64_t plane = static_cast<int64_t>(H) * W;
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const int64_t n = nc / C;
    const T* drow = dsp + n * plane;
    const T* sp = src + nc * plane;
    T* op = po + nc * plane;
    for (int y = 0; y < H; ++y) {
      const T* srow = sp + static_cast<int64_t>(y) * W;
      for (int x = 0; x < W; ++x) {
        T xs = static_cast<T>(x) + sgn * drow[static_cast<int64_t>(y) * W + x];
        xs = std::clamp(xs, T(0), static_cast<T>(W - 1));
        const int x0 = std::min(static_cast<int>(xs), W - 1);
        const int x1 = std::min(x0 + 1, W - 1);
        const T f = xs - static_cast<T>(x0);
        op[static_cast<int64_t>(y) * W + x] = (T(1) - f) * srow[x0] + f * srow[x1];
      }
    }
  }

  if (detail::record_op<T>({&source, &disparity})) {
    out.set_requires_grad(true);
    auto si = source.impl(), di = disparity.impl(), oi = out.impl();
    TapeT<T>::active().emit(oi, [si, di, oi, N, C, H, W, sgn, plane] {
      const auto& g = oi->grad;
      double* gd = nullptr;
      if (di->requires_grad) gd = detail::grad_buffer(di).data();
      double* gs = nullptr;
      if (si->requires_grad) gs = detail::grad_buffer(si).data();
      // per-batch-item jobs: disparity grads are shared across channels of
      // the same item, never across items
      ThreadPool::instance().run(N, [&](int64_t n) {
        const T* drow = di->data.data() + n * plane;
        for (int c = 0; c < C; ++c) {
          const T* sp = si->data.data() + (n * C + c) * plane;
          const double* gp = g.data() + (n * C + c) * plane;
          for (int y = 0; y < H; ++y) {
            const T* srow = sp + static_cast<int64_t>(y) * W;
            for (int x = 0; x < W; ++x) {
              const int64_t idx = static_cast<int64_t>(y) * W + x;
              const double gv = gp[idx];
              if (gv == 0.0) continue;
              const T xs_raw = static_cast<T>(x) + sgn * drow[idx];
              const bool clamped = xs_raw <= T(0) || xs_raw >= static_cast<T>(W - 1);
              const T xs = std::clamp(xs_raw, T(0), static_cast<T>(W - 1));
              const int x0 = std::min(static_cast<int>(xs), W - 1);
              const int x1 = std::min(x0 + 1, W - 1);
              const double f = xs - static_cast<T>(x0);
              if (gd != nullptr && !clamped) {
                gd[n * plane + idx] +=
                    gv * sgn * (static_cast<double>(srow[x1]) - srow[x0]);
              }
              if (gs != nullptr) {
                double* gsrow = gs + (n * C + c) * plane + static_cast<int64_t>(y) * W;
                gsrow[x0] += gv * (1.0 - f);
                gsrow[x1] += gv * f;
              }
            }
          }
        }
      });
    });
  }
  return out;
}

/// z = baseline * focal / max(d, min_disp), elementwise.
inline Grid disparity_to_depth(const Grid& disparity, const CameraRig& rig, float min_disp) {
  EPC_CHECK(min_disp > 0, "disparity_to_depth: min_disp must be positive, got ", min_disp);
  EPC_CHECK(rig.baseline > 0 && rig.focal > 0, "disparity_to_depth: invalid rig b=",
            rig.baseline, " f=", rig.focal);
  Grid depth(disparity.h, disparity.w);
  const float bf = rig.baseline * rig.focal;
  for (size_t i = 0; i < disparity.v.size(); ++i)
    depth.v[i] = bf / std::max(disparity.v[i], min_disp);
  return depth;
}

inline Grid depth_to_disparity(const Grid& depth, const CameraRig& rig) {
  Grid disp(depth.h, depth.w);
  const float bf = rig.baseline * rig.focal;
  for (size_t i = 0; i < depth.v.size(); ++i) disp.v[i] = bf / depth.v[i];
  return disp;
}

/// Ramp weight for flip post-processing: mirrored columns sum to 1, the map
/// averages both predictions in the middle and blends fully toward the
/// non-occluded prediction inside the leftmost/rightmost 5% of columns.
inline float flip_pp_weight(int x, int width) {
  if (width <= 1) return 0.5f;
  const float u = static_cast<float>(x) / static_cast<float>(width - 1);
  if (u < 0.05f) return 10.0f * u;
  if (u > 0.95f) return 1.0f - 10.0f * (1.0f - u);
  return 0.5f;
}

/// Blends a disparity map with the back-flipped prediction on the flipped
/// input (the second argument must already be flipped back).
inline Grid flip_post_process(const Grid& disp, const Grid& disp_of_flipped_input) {
  EPC_CHECK(disp.h == disp_of_flipped_input.h && disp.w == disp_of_flipped_input.w,
            "flip_post_process: shape mismatch ", disp.h, "x", disp.w, " vs ",
            disp_of_flipped_input.h, "x", disp_of_flipped_input.w);
  Grid out(disp.h, disp.w);
  for (int y = 0; y < disp.h; ++y) {
    for (int x = 0; x < disp.w; ++x) {
      const float w = flip_pp_weight(x, disp.w);
      // w*a + (1-w)*b, written so that equal inputs pass through exactly
      const float b = disp_of_flipped_input.at(y, x);
      out.at(y, x) = b + w * (disp.at(y, x) - b);
    }
  }
  return out;
}

}  // namespace epc
