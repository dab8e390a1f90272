#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "epcdepth/losses.hpp"
#include "epcdepth/tensor_grid.hpp"
#include "epcdepth/tensor_io.hpp"

namespace epc {

struct SgmParams {
  int max_disp = 0;            // 0 -> ceil(0.3 * width)
  int p1 = 8;                  // small-jump penalty
  int p2 = 96;                 // large-jump penalty
  int path_count = 8;          // 4 or 8
  int census_window = 5;       // odd, 3..11
  float lr_threshold = 1.0f;   // left-right consistency, pixels
  int uniqueness_margin = -1;  // < 0 -> path_count
  float texture_threshold = 0.01f;  // min luma range inside the census window
};

inline int resolve_max_disp(const SgmParams& p, int width) {
  const int md = p.max_disp > 0 ? p.max_disp : (3 * width + 9) / 10;
  EPC_CHECK(md < width, "sgm: max_disp ", md, " must be smaller than image width ", width);
  return md;
}

struct CostVolume {
  int h = 0, w = 0, d = 0;  // d = disparity levels, 0..d-1
  std::vector<uint16_t> c;

  uint16_t at(int y, int x, int disp) const {
    return c[(static_cast<size_t>(y) * w + x) * d + disp];
  }
};

struct AggregatedVolume {
  int h = 0, w = 0, d = 0;
  std::vector<uint32_t> c;

  uint32_t at(int y, int x, int disp) const {
    return c[(static_cast<size_t>(y) * w + x) * d + disp];
  }
};

/// Stereo-matched disparity with per-pixel validity. Invalid pixels carry
/// disparity 0.
struct HintMap {
  Grid disparity;
  std::vector<uint8_t> valid;

  float validity_ratio() const {
    if (valid.empty()) return 0.0f;
    size_t n = 0;
    for (uint8_t v : valid) n += v;
    return static_cast<float>(n) / static_cast<float>(valid.size());
  }
};

namespace detail {

struct Census {
  uint64_t lo = 0, hi = 0;
};

inline int hamming(const Census& a, const Census& b) {
  return std::popcount(a.lo ^ b.lo) + std::popcount(a.hi ^ b.hi);
}

// Luma range within the census window; pixels below the texture threshold
// carry no matching evidence (flat patches match every disparity equally).
inline std::vector<float> local_contrast(const Grid& img, int window) {
  const int r = window / 2;
  std::vector<float> out(static_cast<size_t>(img.h) * img.w);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      float lo = img.at(y, x), hi = lo;
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = std::clamp(y + dy, 0, img.h - 1);
        for (int dx = -r; dx <= r; ++dx) {
          const int xx = std::clamp(x + dx, 0, img.w - 1);
          const float v = img.at(yy, xx);
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      }
      out[static_cast<size_t>(y) * img.w + x] = hi - lo;
    }
  }
  return out;
}

// Census transform with border replication; up to 11x11 (120 comparison bits).
inline std::vector<Census> census_transform(const Grid& img, int window) {
  EPC_CHECK(window % 2 == 1 && window >= 3 && window <= 11,
            "sgm: census window must be odd in [3, 11], got ", window);
  EPC_CHECK(window <= img.h && window <= img.w, "sgm: census window ", window,
            " does not fit image ", img.h, "x", img.w);
  const int r = window / 2;
  std::vector<Census> out(static_cast<size_t>(img.h) * img.w);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const float center = img.at(y, x);
      Census cen;
      int bit = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = std::clamp(y + dy, 0, img.h - 1);
        for (int dx = -r; dx <= r; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const int xx = std::clamp(x + dx, 0, img.w - 1);
          const uint64_t b = img.at(yy, xx) < center ? 1u : 0u;
          if (bit < 64)
            cen.lo |= b << bit;
          else
            cen.hi |= b << (bit - 64);
          ++bit;
        }
      }
      out[static_cast<size_t>(y) * img.w + x] = cen;
    }
  }
  return out;
}

// Generic matching-cost volume: cost(y,x,d) = hamming(ref(x), other(x + sign*d)),
// saturated to the bit count when the match column falls outside the image.
inline CostVolume build_volume(const std::vector<Census>& ref, const std::vector<Census>& other,
                               int h, int w, int levels, int sign, int max_cost) {
  CostVolume cv;
  cv.h = h;
  cv.w = w;
  cv.d = levels;
  cv.c.assign(static_cast<size_t>(h) * w * levels, 0);
  parallel_chunks(h, 8, [&](int64_t y0, int64_t y1) {
    for (int y = static_cast<int>(y0); y < static_cast<int>(y1); ++y) {
      for (int x = 0; x < w; ++x) {
        const Census& a = ref[static_cast<size_t>(y) * w + x];
        uint16_t* dst = cv.c.data() + (static_cast<size_t>(y) * w + x) * levels;
        for (int d = 0; d < levels; ++d) {
          const int xm = x + sign * d;
          dst[d] = (xm >= 0 && xm < w)
                       ? static_cast<uint16_t>(hamming(a, other[static_cast<size_t>(y) * w + xm]))
                       : static_cast<uint16_t>(max_cost);
        }
      }
    }
  });
  return cv;
}

}  // namespace detail

/// Census/Hamming matching cost for the left image against the right,
/// cost(y,x,d) over d in [0, max_disp].
inline CostVolume cost_volume(const Grid& left, const Grid& right, const SgmParams& params) {
  EPC_CHECK(left.h == right.h && left.w == right.w, "cost_volume: image sizes differ");
  const int md = resolve_max_disp(params, left.w);
  const int bits = params.census_window * params.census_window - 1;
  const auto cl = detail::census_transform(left, params.census_window);
  const auto cr = detail::census_transform(right, params.census_window);
  return detail::build_volume(cl, cr, left.h, left.w, md + 1, -1, bits);
}

/// Eight-direction (or four-direction) scanline aggregation:
///   L_r(p,d) = C(p,d) + min(L_r(q,d), L_r(q,d+-1)+P1, min_d' L_r(q,d')+P2)
///              - min_d' L_r(q,d')
/// summed over directions. Integer arithmetic, deterministic for any
/// thread count.
inline AggregatedVolume aggregate_paths(const CostVolume& cv, const SgmParams& params) {
  EPC_CHECK(params.path_count == 4 || params.path_count == 8,
            "aggregate_paths: path_count must be 4 or 8, got ", params.path_count);
  EPC_CHECK(params.p1 >= 0 && params.p2 >= params.p1,
            "aggregate_paths: need 0 <= P1 <= P2, got P1=", params.p1, " P2=", params.p2);
  const int h = cv.h, w = cv.w, d = cv.d;
  AggregatedVolume agg;
  agg.h = h;
  agg.w = w;
  agg.d = d;
  agg.c.assign(cv.c.size(), 0);

  static constexpr std::array<std::array<int, 2>, 8> kDirs = {{
      {1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, -1}, {-1, 1}, {1, -1}}};

  const uint32_t p1 = static_cast<uint32_t>(params.p1);
  const uint32_t p2 = static_cast<uint32_t>(params.p2);

  for (int dir = 0; dir < params.path_count; ++dir) {
    const int dx = kDirs[static_cast<size_t>(dir)][0];
    const int dy = kDirs[static_cast<size_t>(dir)][1];
    // line starts: pixels whose predecessor lies outside the image
    std::vector<std::pair<int, int>> starts;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int px = x - dx, py = y - dy;
        if (px < 0 || px >= w || py < 0 || py >= h) starts.emplace_back(x, y);
      }
    parallel_chunks(static_cast<int64_t>(starts.size()), 8, [&](int64_t b, int64_t e) {
      std::vector<uint32_t> prev(static_cast<size_t>(d));
      std::vector<uint32_t> cur(static_cast<size_t>(d));
      for (int64_t s = b; s < e; ++s) {
        int x = starts[static_cast<size_t>(s)].first;
        int y = starts[static_cast<size_t>(s)].second;
        bool first = true;
        uint32_t prev_min = 0;
        while (x >= 0 && x < w && y >= 0 && y < h) {
          const size_t base = (static_cast<size_t>(y) * w + x) * static_cast<size_t>(d);
          uint32_t cur_min = UINT32_MAX;
          for (int k = 0; k < d; ++k) {
            const uint32_t c = cv.c[base + static_cast<size_t>(k)];
            uint32_t v;
            if (first) {
              v = c;
            } else {
              uint32_t best = prev[static_cast<size_t>(k)];
              if (k > 0) best = std::min(best, prev[static_cast<size_t>(k) - 1] + p1);
              if (k + 1 < d) best = std::min(best, prev[static_cast<size_t>(k) + 1] + p1);
              best = std::min(best, prev_min + p2);
              v = c + best - prev_min;
            }
            cur[static_cast<size_t>(k)] = v;
            cur_min = std::min(cur_min, v);
          }
          for (int k = 0; k < d; ++k) agg.c[base + static_cast<size_t>(k)] += cur[static_cast<size_t>(k)];
          std::swap(prev, cur);
          prev_min = cur_min;
          first = false;
          x += dx;
          y += dy;
        }
      }
    });
  }
  return agg;
}

namespace detail {

struct WtaResult {
  Grid disp;                  // subpixel-refined winner
  std::vector<uint8_t> ok;    // passed the uniqueness test
};

inline WtaResult winner_take_all(const AggregatedVolume& agg, int uniqueness_margin) {
  WtaResult r;
  r.disp = Grid(agg.h, agg.w);
  r.ok.assign(static_cast<size_t>(agg.h) * agg.w, 0);
  parallel_chunks(agg.h, 8, [&](int64_t y0, int64_t y1) {
    for (int y = static_cast<int>(y0); y < static_cast<int>(y1); ++y) {
      for (int x = 0; x < agg.w; ++x) {
        const uint32_t* col = agg.c.data() + (static_cast<size_t>(y) * agg.w + x) * agg.d;
        int best = 0;
        for (int k = 1; k < agg.d; ++k)
          if (col[k] < col[best]) best = k;
        // second-best outside the refinement neighborhood of the winner
        uint32_t second = UINT32_MAX;
        for (int k = 0; k < agg.d; ++k) {
          if (std::abs(k - best) <= 1) continue;
          second = std::min(second, col[k]);
        }
        const bool unique =
            second == UINT32_MAX || second > col[best] + static_cast<uint32_t>(uniqueness_margin);
        float dsub = static_cast<float>(best);
        if (best > 0 && best + 1 < agg.d) {
          const float cm = static_cast<float>(col[best - 1]);
          const float c0 = static_cast<float>(col[best]);
          const float cp = static_cast<float>(col[best + 1]);
          const float denom = cm - 2.0f * c0 + cp;
          if (denom > 0)
            dsub += std::clamp(0.5f * (cm - cp) / denom, -0.5f, 0.5f);
        }
        r.disp.at(y, x) = dsub;
        r.ok[static_cast<size_t>(y) * agg.w + x] = unique ? 1 : 0;
      }
    }
  });
  return r;
}

}  // namespace detail

/// Full matcher: census cost + path aggregation + winner-take-all with
/// parabolic subpixel refinement, a uniqueness test and a left-right
/// consistency check. Deterministic for identical inputs and parameters.
inline HintMap compute_hint(const Tensor& left, const Tensor& right, const SgmParams& params) {
  const Grid gl = luma_grid(left);
  const Grid gr = luma_grid(right);
  EPC_CHECK(gl.h == gr.h && gl.w == gr.w, "compute_hint: image sizes differ");
  const int md = resolve_max_disp(params, gl.w);
  const int bits = params.census_window * params.census_window - 1;
  const int margin = params.uniqueness_margin >= 0 ? params.uniqueness_margin : params.path_count;
  EPC_CHECK(params.p1 > 0 && params.p2 > params.p1,
            "compute_hint: need 0 < P1 < P2, got P1=", params.p1, " P2=", params.p2);

  const auto cl = detail::census_transform(gl, params.census_window);
  const auto cr = detail::census_transform(gr, params.census_window);
  const CostVolume vol_l = detail::build_volume(cl, cr, gl.h, gl.w, md + 1, -1, bits);
  const CostVolume vol_r = detail::build_volume(cr, cl, gl.h, gl.w, md + 1, +1, bits);
  const detail::WtaResult wl = detail::winner_take_all(aggregate_paths(vol_l, params), margin);
  const detail::WtaResult wr = detail::winner_take_all(aggregate_paths(vol_r, params), margin);

  const std::vector<float> contrast = detail::local_contrast(gl, params.census_window);

  HintMap hint;
  hint.disparity = Grid(gl.h, gl.w);
  hint.valid.assign(static_cast<size_t>(gl.h) * gl.w, 0);
  for (int y = 0; y < gl.h; ++y) {
    for (int x = 0; x < gl.w; ++x) {
      const size_t i = static_cast<size_t>(y) * gl.w + x;
      if (!wl.ok[i]) continue;
      if (contrast[i] < params.texture_threshold) continue;
      const float dl = wl.disp.at(y, x);
      const int xr = x - static_cast<int>(std::lround(dl));
      if (xr < 0 || xr >= gl.w) continue;
      const size_t j = static_cast<size_t>(y) * gl.w + xr;
      if (!wr.ok[j]) continue;
      if (std::fabs(dl - wr.disp.at(y, xr)) > params.lr_threshold) continue;
      hint.disparity.at(y, x) = dl;
      hint.valid[i] = 1;
    }
  }
  return hint;
}

/// Per-pixel photometric-error argmin over candidate matchers; a pixel is
/// valid when at least one candidate is valid there.
inline HintMap fuse_hints(const std::vector<HintMap>& candidates, const Tensor& target,
                          const Tensor& source, const LossWeights& weights) {
  EPC_CHECK(!candidates.empty(), "fuse_hints: empty candidate list");
  if (candidates.size() == 1) return candidates[0];
  NoGradGuardT<float> guard;
  const Tensor tgt = target.rank() == 3 ? to_batch1(target) : target;
  const Tensor src = source.rank() == 3 ? to_batch1(source) : source;
  const int h = tgt.dim(2), w = tgt.dim(3);

  std::vector<Grid> errors;
  errors.reserve(candidates.size());
  for (const HintMap& cand : candidates) {
    EPC_CHECK(cand.disparity.h == h && cand.disparity.w == w,
              "fuse_hints: candidate size mismatch");
    Tensor d = grid_to_tensor(cand.disparity);
    Tensor err = photometric_error_map(tgt, warp(src, d, WarpSource::Right), weights);
    errors.push_back(tensor_to_grid(err));
  }

  HintMap fused;
  fused.disparity = Grid(h, w);
  fused.valid.assign(static_cast<size_t>(h) * w, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      int best = -1;
      float best_err = 0.0f;
      for (size_t k = 0; k < candidates.size(); ++k) {
        if (!candidates[k].valid[i]) continue;
        const float e = errors[k].at(y, x);
        if (best < 0 || e < best_err) {
          best = static_cast<int>(k);
          best_err = e;
        }
      }
      if (best >= 0) {
        fused.disparity.at(y, x) = candidates[static_cast<size_t>(best)].disparity.at(y, x);
        fused.valid[i] = 1;
      }
    }
  }
  return fused;
}

/// Default training recipe: three census window sizes fused by
/// reconstruction error, penalties scaled with the census bit count.
inline HintMap compute_fused_hint(const Tensor& left, const Tensor& right,
                                  const SgmParams& base, const LossWeights& weights,
                                  bool multi_config = true) {
  if (!multi_config) return compute_hint(left, right, base);
  std::vector<HintMap> cands;
  for (int window : {5, 7, 9}) {
    SgmParams p = base;
    p.census_window = window;
    const double scale = static_cast<double>(window * window - 1) / 24.0;
    p.p1 = std::max(1, static_cast<int>(std::lround(base.p1 * scale)));
    p.p2 = std::max(p.p1 + 1, static_cast<int>(std::lround(base.p2 * scale)));
    cands.push_back(compute_hint(left, right, p));
  }
  return fuse_hints(cands, left, right, weights);
}

// --- hint cache -------------------------------------------------------------

inline std::string hint_disp_path(const std::string& dir, const std::string& sample_id) {
  return dir + "/" + sample_id + ".epct";
}

inline std::string hint_valid_path(const std::string& dir, const std::string& sample_id) {
  return dir + "/" + sample_id + ".valid.epct";
}

inline void save_hint(const std::string& dir, const std::string& sample_id,
                      const HintMap& hint) {
  std::filesystem::create_directories(dir);
  write_epct(hint_disp_path(dir, sample_id), hint.disparity);
  Grid validity(hint.disparity.h, hint.disparity.w);
  for (size_t i = 0; i < hint.valid.size(); ++i)
    validity.v[i] = hint.valid[i] ? 1.0f : 0.0f;
  write_epct(hint_valid_path(dir, sample_id), validity);
}

inline HintMap load_hint(const std::string& dir, const std::string& sample_id) {
  HintMap hint;
  hint.disparity = read_epct_grid(hint_disp_path(dir, sample_id));
  const Grid validity = read_epct_grid(hint_valid_path(dir, sample_id));
  EPC_CHECK(validity.h == hint.disparity.h && validity.w == hint.disparity.w,
            "load_hint: disparity/validity size mismatch for sample ", sample_id);
  hint.valid.resize(validity.v.size());
  for (size_t i = 0; i < validity.v.size(); ++i) hint.valid[i] = validity.v[i] > 0.5f ? 1 : 0;
  return hint;
}

}  // namespace epc
