#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "epcdepth/common.hpp"

namespace epc {

/// The seven standard depth numbers. abs_rel/sq_rel/rmse/rmse_log: lower is
/// better; delta1..3 in [0,1]: higher is better.
struct DepthMetrics {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
};

/// Fractional crop rectangle (unit square coordinates, row/col fractions).
struct CropRect {
  float top = 0.0f, bottom = 1.0f, left = 0.0f, right = 1.0f;
};

/// Community-standard fractional crop for driving imagery.
inline CropRect garg_crop() {
  return CropRect{0.40810811f, 0.99189189f, 0.03594771f, 0.96405229f};
}

struct EvalOptions {
  float depth_cap = 80.0f;  // meters
  float depth_floor = 1e-3f;
  std::optional<CropRect> crop;
  bool median_scale = false;
};

/// Standard protocol: valid pixels (gt > 0) inside the optional crop,
/// optional median scaling of the prediction, both maps clamped to
/// [depth_floor, depth_cap], then the seven metrics with strict-< delta
/// thresholds.
inline DepthMetrics compute_metrics(const Grid& pred_depth, const Grid& gt_depth,
                                    const EvalOptions& opts) {
  EPC_CHECK(pred_depth.h == gt_depth.h && pred_depth.w == gt_depth.w,
            "compute_metrics: shape mismatch ", pred_depth.h, "x", pred_depth.w, " vs ",
            gt_depth.h, "x", gt_depth.w);
  EPC_CHECK(opts.depth_cap > 0, "compute_metrics: invalid depth cap ", opts.depth_cap);
  int y0 = 0, y1 = gt_depth.h, x0 = 0, x1 = gt_depth.w;
  if (opts.crop) {
    EPC_CHECK(opts.crop->top >= 0 && opts.crop->bottom <= 1 && opts.crop->left >= 0 &&
                  opts.crop->right <= 1 && opts.crop->top < opts.crop->bottom &&
                  opts.crop->left < opts.crop->right,
              "compute_metrics: crop outside the unit square");
    y0 = static_cast<int>(opts.crop->top * gt_depth.h);
    y1 = static_cast<int>(opts.crop->bottom * gt_depth.h);
    x0 = static_cast<int>(opts.crop->left * gt_depth.w);
    x1 = static_cast<int>(opts.crop->right * gt_depth.w);
  }

  std::vector<float> pred, gt;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      if (gt_depth.at(y, x) > 0.0f) {
        pred.push_back(pred_depth.at(y, x));
        gt.push_back(gt_depth.at(y, x));
      }
    }
  }
  EPC_CHECK(!pred.empty(), "compute_metrics: no valid ground-truth pixels");

  if (opts.median_scale) {
    auto median = [](std::vector<float> v) {
      const size_t mid = v.size() / 2;
      std::nth_element(v.begin(), v.begin() + static_cast<ptrdiff_t>(mid), v.end());
      return v[mid];
    };
    const float scale = median(gt) / median(pred);
    for (float& p : pred) p *= scale;
  }

  const double thr1 = 1.25, thr2 = 1.25 * 1.25, thr3 = 1.25 * 1.25 * 1.25;
  double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0;
  int64_t n1 = 0, n2 = 0, n3 = 0;
  const int64_t n = static_cast<int64_t>(pred.size());
  for (int64_t i = 0; i < n; ++i) {
    const double p = std::clamp(pred[static_cast<size_t>(i)], opts.depth_floor, opts.depth_cap);
    const double g = std::clamp(gt[static_cast<size_t>(i)], opts.depth_floor, opts.depth_cap);
    const double diff = p - g;
    abs_rel += std::fabs(diff) / g;
    sq_rel += diff * diff / g;
    sq += diff * diff;
    const double dl = std::log(p) - std::log(g);
    sq_log += dl * dl;
    const double ratio = std::max(p / g, g / p);
    n1 += ratio < thr1;
    n2 += ratio < thr2;
    n3 += ratio < thr3;
  }
  DepthMetrics m;
  m.abs_rel = abs_rel / static_cast<double>(n);
  m.sq_rel = sq_rel / static_cast<double>(n);
  m.rmse = std::sqrt(sq / static_cast<double>(n));
  m.rmse_log = std::sqrt(sq_log / static_cast<double>(n));
  m.delta1 = static_cast<double>(n1) / static_cast<double>(n);
  m.delta2 = static_cast<double>(n2) / static_cast<double>(n);
  m.delta3 = static_cast<double>(n3) / static_cast<double>(n);
  return m;
}

}  // namespace epc
