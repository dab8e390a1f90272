#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "epcdepth/tensor.hpp"

namespace epc {

/// One rectified training sample. `valid_mask` marks left pixels whose
/// stereo correspondence is visible in the right view (1 = usable for
/// reconstruction checks).
struct StereoSample {
  Tensor left;   // [3,H,W], values in [0,1]
  Tensor right;  // [3,H,W]
  std::optional<Grid> gt_disparity;  // pixels, left-referenced
  std::optional<Grid> valid_mask;
  CameraRig rig;
  std::string sample_id;
};

enum class TextureKind { kNoise, kChecker, kGradientMix };

struct SceneConfig {
  int layer_count = 4;
  float depth_min = 2.0f;
  float depth_max = 50.0f;
  TextureKind texture = TextureKind::kGradientMix;
  bool allow_occlusion = true;
  int height = 64;
  int width = 192;
  uint64_t seed = 0;
};

namespace detail {

// Piecewise-bilinear texture on a coarse grid. Integer-pixel samples are
// exact; fractional samples interpolate, and because the function is
// piecewise linear, resampling it twice stays within the 2/255 warp
// tolerance as long as the grid cell is a few pixels wide.
struct LayerTexture {
  int gw = 0, gh = 0;
  float cell = 1.0f;
  std::array<std::vector<float>, 3> rgb;
  std::array<float, 3> gx{}, gy{};

  float sample(int c, float u, float v) const {
    const float pu = std::clamp(u / cell, 0.0f, static_cast<float>(gw - 1));
    const float pv = std::clamp(v / cell, 0.0f, static_cast<float>(gh - 1));
    const int u0 = std::min(static_cast<int>(pu), gw - 1);
    const int v0 = std::min(static_cast<int>(pv), gh - 1);
    const int u1 = std::min(u0 + 1, gw - 1);
    const int v1 = std::min(v0 + 1, gh - 1);
    const float fu = pu - static_cast<float>(u0);
    const float fv = pv - static_cast<float>(v0);
    const std::vector<float>& g = rgb[static_cast<size_t>(c)];
    const float a = g[static_cast<size_t>(v0) * gw + u0];
    const float b = g[static_cast<size_t>(v0) * gw + u1];
    const float d = g[static_cast<size_t>(v1) * gw + u0];
    const float e = g[static_cast<size_t>(v1) * gw + u1];
    const float base = (1 - fv) * ((1 - fu) * a + fu * b) + fv * ((1 - fu) * d + fu * e);
    return std::clamp(base + gx[static_cast<size_t>(c)] * u + gy[static_cast<size_t>(c)] * v,
                      0.0f, 1.0f);
  }
};

struct SceneLayer {
  // left-view footprint [x0,x1) x [y0,y1); may extend past the frame
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  float depth = 0.0f;
  float disparity = 0.0f;
  LayerTexture tex;
};

template <class Rng>
LayerTexture make_texture(Rng& rng, TextureKind kind, int w, int h) {
  LayerTexture t;
  std::uniform_real_distribution<float> u01(0.0f, 1.0f);
  switch (kind) {
    case TextureKind::kNoise: {
      t.cell = 1.0f;
      t.gw = w + 1;
      t.gh = h + 1;
      for (auto& g : t.rgb) {
        g.resize(static_cast<size_t>(t.gw) * t.gh);
        for (auto& v : g) v = 0.05f + 0.9f * u01(rng);
      }
      break;
    }
    case TextureKind::kChecker: {
      t.cell = 1.0f;
      t.gw = w + 1;
      t.gh = h + 1;
      std::array<float, 3> ca{}, cb{};
      for (int c = 0; c < 3; ++c) {
        ca[static_cast<size_t>(c)] = 0.1f + 0.35f * u01(rng);
        cb[static_cast<size_t>(c)] = 0.55f + 0.35f * u01(rng);
      }
      for (int c = 0; c < 3; ++c) {
        auto& g = t.rgb[static_cast<size_t>(c)];
        g.resize(static_cast<size_t>(t.gw) * t.gh);
        for (int y = 0; y < t.gh; ++y)
          for (int x = 0; x < t.gw; ++x)
            g[static_cast<size_t>(y) * t.gw + x] =
                (((x / 8) + (y / 8)) % 2 == 0) ? ca[static_cast<size_t>(c)]
                                               : cb[static_cast<size_t>(c)];
      }
      break;
    }
    case TextureKind::kGradientMix: {
      t.cell = 8.0f;
      t.gw = w / 8 + 3;
      t.gh = h / 8 + 3;
      for (int c = 0; c < 3; ++c) {
        auto& g = t.rgb[static_cast<size_t>(c)];
        g.resize(static_cast<size_t>(t.gw) * t.gh);
        for (auto& v : g) v = 0.2f + 0.6f * u01(rng);
        t.gx[static_cast<size_t>(c)] = (u01(rng) - 0.5f) * 0.002f;
        t.gy[static_cast<size_t>(c)] = (u01(rng) - 0.5f) * 0.004f;
      }
      break;
    }
  }
  return t;
}

}  // namespace detail

/// Renders a stereo pair of fronto-parallel textured layers with exact
/// ground-truth disparity. The left view paints layers far-to-near; the
/// right view paints each layer shifted left by its disparity, which
/// resolves occlusion by painter's order. `valid_mask` is 1 exactly where
/// the left pixel's correspondence is owned by the same layer in the right
/// view (both bilinear taps).
inline StereoSample generate_scene(const SceneConfig& cfg, const CameraRig& rig) {
  EPC_CHECK(cfg.height > 0 && cfg.width > 0, "generate_scene: bad image size");
  EPC_CHECK(cfg.depth_min > 0 && cfg.depth_max > cfg.depth_min,
            "generate_scene: bad depth range");
  EPC_CHECK(cfg.layer_count >= 0, "generate_scene: negative layer count");
  const float bf = rig.baseline * rig.focal;
  EPC_CHECK(bf / cfg.depth_min < static_cast<float>(cfg.width),
            "generate_scene: depth_min ", cfg.depth_min, " yields disparity ",
            bf / cfg.depth_min, " >= width ", cfg.width);

  const int H = cfg.height, W = cfg.width;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<float> u01(0.0f, 1.0f);
  // integer disparity keeps hard-edged textures warp-exact
  const bool snap = cfg.texture != TextureKind::kGradientMix;

  auto make_depth = [&](float lo, float hi) {
    const float z = lo * std::exp(u01(rng) * std::log(hi / lo));
    if (!snap) return z;
    const float d = std::max(1.0f, std::round(bf / z));
    return bf / d;
  };

  std::vector<detail::SceneLayer> layers;
  {
    // background plane: spans the frame plus the disparity overhang so the
    // right view is covered edge to edge
    detail::SceneLayer bg;
    bg.depth = make_depth(0.7f * cfg.depth_max, cfg.depth_max);
    bg.disparity = bf / bg.depth;
    bg.x0 = 0;
    bg.x1 = W + static_cast<int>(std::ceil(bg.disparity)) + 1;
    bg.y0 = 0;
    bg.y1 = H;
    bg.tex = detail::make_texture(rng, cfg.texture, bg.x1 - bg.x0, H);
    layers.push_back(std::move(bg));
  }
  for (int i = 0; i < cfg.layer_count; ++i) {
    detail::SceneLayer ly;
    ly.depth = make_depth(cfg.depth_min, 0.8f * cfg.depth_max);
    ly.disparity = bf / ly.depth;
    const int rw = std::max(8, static_cast<int>((0.18f + 0.35f * u01(rng)) * W));
    const int rh = std::max(8, static_cast<int>((0.18f + 0.35f * u01(rng)) * H));
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      ly.x0 = static_cast<int>(u01(rng) * std::max(1, W - rw));
      ly.y0 = static_cast<int>(u01(rng) * std::max(1, H - rh));
      ly.x1 = ly.x0 + rw;
      ly.y1 = ly.y0 + rh;
      if (cfg.allow_occlusion) {
        placed = true;
        break;
      }
      // footprint union over both views, padded by one column
      const auto span_lo = [](const detail::SceneLayer& l) {
        return static_cast<int>(std::floor(l.x0 - l.disparity)) - 1;
      };
      bool clash = false;
      for (size_t k = 1; k < layers.size(); ++k) {
        const auto& o = layers[k];
        const bool x_overlap = span_lo(ly) < o.x1 + 1 && span_lo(o) < ly.x1 + 1;
        const bool y_overlap = ly.y0 < o.y1 && o.y0 < ly.y1;
        if (x_overlap && y_overlap) {
          clash = true;
          break;
        }
      }
      placed = !clash;
    }
    if (!placed) continue;
    ly.tex = detail::make_texture(rng, cfg.texture, rw, rh);
    layers.push_back(std::move(ly));
  }
  std::stable_sort(layers.begin() + 1, layers.end(),
                   [](const auto& a, const auto& b) { return a.depth > b.depth; });

  StereoSample s;
  s.rig = rig;
  s.sample_id = format_msg("scene_", cfg.seed);
  s.left = Tensor({3, H, W});
  s.right = Tensor({3, H, W});
  s.gt_disparity = Grid(H, W);
  s.valid_mask = Grid(H, W);

  std::vector<int> owner_left(static_cast<size_t>(H) * W, -1);
  std::vector<int> owner_right(static_cast<size_t>(H) * W, -1);
  const int64_t plane = static_cast<int64_t>(H) * W;
  float* left = s.left.data();
  float* right = s.right.data();

  for (size_t li = 0; li < layers.size(); ++li) {
    const auto& ly = layers[li];
    const int ly0 = std::max(0, ly.y0), ly1 = std::min(H, ly.y1);
    // left view
    for (int y = ly0; y < ly1; ++y) {
      for (int x = std::max(0, ly.x0); x < std::min(W, ly.x1); ++x) {
        const float u = static_cast<float>(x - ly.x0);
        const float v = static_cast<float>(y - ly.y0);
        for (int c = 0; c < 3; ++c)
          left[c * plane + static_cast<int64_t>(y) * W + x] = ly.tex.sample(c, u, v);
        s.gt_disparity->at(y, x) = ly.disparity;
        owner_left[static_cast<size_t>(y) * W + x] = static_cast<int>(li);
      }
    }
    // right view: layer shifted left by its disparity
    const int rx0 = std::max(0, static_cast<int>(std::floor(ly.x0 - ly.disparity)));
    const int rx1 = std::min(W, static_cast<int>(std::ceil(ly.x1 - ly.disparity)) + 1);
    for (int y = ly0; y < ly1; ++y) {
      for (int x = rx0; x < rx1; ++x) {
        const float u = static_cast<float>(x) + ly.disparity - static_cast<float>(ly.x0);
        if (u < 0.0f || u >= static_cast<float>(ly.x1 - ly.x0)) continue;
        const float v = static_cast<float>(y - ly.y0);
        for (int c = 0; c < 3; ++c)
          right[c * plane + static_cast<int64_t>(y) * W + x] = ly.tex.sample(c, u, v);
        owner_right[static_cast<size_t>(y) * W + x] = static_cast<int>(li);
      }
    }
  }

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int lo = owner_left[static_cast<size_t>(y) * W + x];
      const float d = s.gt_disparity->at(y, x);
      const float u = static_cast<float>(x) - d;
      bool ok = lo >= 0 && u >= 0.0f && u <= static_cast<float>(W - 1);
      if (ok) {
        const int u0 = static_cast<int>(std::floor(u));
        const int u1 = std::min(u0 + 1, W - 1);
        ok = owner_right[static_cast<size_t>(y) * W + u0] == lo &&
             owner_right[static_cast<size_t>(y) * W + u1] == lo;
      }
      s.valid_mask->at(y, x) = ok ? 1.0f : 0.0f;
    }
  }
  return s;
}

/// Deterministic desk-scale dataset: sequential seeds derived from
/// `base_seed`.
inline std::vector<StereoSample> generate_dataset(int count, SceneConfig cfg,
                                                  const CameraRig& rig, uint64_t base_seed) {
  std::vector<StereoSample> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    cfg.seed = base_seed + static_cast<uint64_t>(i);
    out.push_back(generate_scene(cfg, rig));
  }
  return out;
}

}  // namespace epc
