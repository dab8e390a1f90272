#pragma once

#include "epcdepth/tensor.hpp"

namespace epc {

inline Tensor grid_to_tensor(const Grid& g) {
  Tensor t({1, 1, g.h, g.w});
  std::copy(g.v.begin(), g.v.end(), t.data());
  return t;
}

/// Extracts batch element n of a single-channel [N,1,H,W] tensor.
inline Grid tensor_to_grid(const Tensor& t, int n = 0) {
  EPC_CHECK(t.rank() == 4 && t.dim(1) == 1, "tensor_to_grid: expected [N,1,H,W], got ",
            shape_str(t.shape()));
  EPC_CHECK(n >= 0 && n < t.dim(0), "tensor_to_grid: batch index out of range");
  Grid g(t.dim(2), t.dim(3));
  const int64_t plane = static_cast<int64_t>(g.h) * g.w;
  std::copy(t.data() + n * plane, t.data() + (n + 1) * plane, g.v.begin());
  return g;
}

/// Rec.601 luma of an RGB image tensor ([3,H,W] or [N,3,H,W], batch 0).
inline Grid luma_grid(const Tensor& img) {
  int h = 0, w = 0;
  const float* base = nullptr;
  if (img.rank() == 3) {
    EPC_CHECK(img.dim(0) == 3, "luma_grid: expected 3 channels, got ", shape_str(img.shape()));
    h = img.dim(1);
    w = img.dim(2);
    base = img.data();
  } else {
    EPC_CHECK(img.rank() == 4 && img.dim(1) == 3, "luma_grid: expected [N,3,H,W], got ",
              shape_str(img.shape()));
    h = img.dim(2);
    w = img.dim(3);
    base = img.data();
  }
  Grid g(h, w);
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int64_t i = 0; i < plane; ++i)
    g.v[static_cast<size_t>(i)] =
        0.299f * base[i] + 0.587f * base[plane + i] + 0.114f * base[2 * plane + i];
  return g;
}

/// Wraps a [C,H,W] image as a batch-1 NCHW tensor (shares no storage).
inline Tensor to_batch1(const Tensor& chw) {
  EPC_CHECK(chw.rank() == 3, "to_batch1: expected [C,H,W], got ", shape_str(chw.shape()));
  Tensor t({1, chw.dim(0), chw.dim(1), chw.dim(2)});
  std::copy(chw.data(), chw.data() + chw.numel(), t.data());
  return t;
}

}  // namespace epc
