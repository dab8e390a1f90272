#pragma once

#include <vector>

#include "epcdepth/losses.hpp"

namespace epc {

/// Per-pixel best disparity composed across prediction scales, with the
/// running reconstruction-error minimum and the index of the winning scale.
/// Always detached — labels never carry gradient.
struct DistillLabel {
  Tensor y;             // [N,1,H,W]
  Tensor e_min;         // [N,1,H,W]
  Tensor source_scale;  // [N,1,H,W], winning scale index as float
};

/// Composes the label by scanning scales in list order: the first scale
/// initializes y and e_min, later scales replace both only where their
/// reconstruction error is strictly smaller (ties keep the earlier scale).
/// Scales at native (smaller) resolution are bilinearly upsampled first.
inline DistillLabel selective_post_process(const Tensor& target, const Tensor& source,
                                           const std::vector<Tensor>& scale_disps,
                                           const LossWeights& weights) {
  EPC_CHECK(!scale_disps.empty(), "selective_post_process: empty scale list");
  detail::check_rank4(target, "selective_post_process");
  NoGradGuardT<float> guard;
  const int n = target.dim(0), h = target.dim(2), w = target.dim(3);

  DistillLabel label;
  for (size_t s = 0; s < scale_disps.size(); ++s) {
    const Tensor& d = scale_disps[s];
    EPC_CHECK(d.rank() == 4 && d.dim(0) == n && d.dim(1) == 1,
              "selective_post_process: scale ", s, " has shape ", shape_str(d.shape()));
    Tensor up = resize_bilinear(d, h, w);
    Tensor err = photometric_error_map(target, warp(source, up, WarpSource::Right), weights);
    if (s == 0) {
      label.y = up.detach();
      label.e_min = err.detach();
      label.source_scale = Tensor(up.shape(), 0.0f);
      continue;
    }
    const float* pe = err.data();
    const float* pd = up.data();
    float* py = label.y.data();
    float* pm = label.e_min.data();
    float* ps = label.source_scale.data();
    const int64_t count = label.y.numel();
    const float idx = static_cast<float>(s);
    for (int64_t i = 0; i < count; ++i) {
      if (pe[i] < pm[i]) {
        pm[i] = pe[i];
        py[i] = pd[i];
        ps[i] = idx;
      }
    }
  }
  return label;
}

enum class DistillMode {
  kSeparate,  // one label per branch: decoder scales and encoder scales
  kCombined,  // a single label built from all scales, shared by both
};

struct DistillLabels {
  DistillLabel decoder;
  DistillLabel encoder;
};

/// Builds the self-distillation labels for a full-scale prediction set.
/// In combined mode both branches share one label built from the decoder
/// scales followed by the encoder scales.
inline DistillLabels build_labels(const Tensor& target, const Tensor& source,
                                  const std::vector<Tensor>& decoder_scales,
                                  const std::vector<Tensor>& encoder_scales,
                                  const LossWeights& weights,
                                  DistillMode mode = DistillMode::kSeparate) {
  EPC_CHECK(!decoder_scales.empty(), "build_labels: no decoder scales");
  DistillLabels out;
  if (mode == DistillMode::kCombined) {
    std::vector<Tensor> all = decoder_scales;
    all.insert(all.end(), encoder_scales.begin(), encoder_scales.end());
    out.decoder = selective_post_process(target, source, all, weights);
    out.encoder = out.decoder;
    return out;
  }
  out.decoder = selective_post_process(target, source, decoder_scales, weights);
  if (!encoder_scales.empty())
    out.encoder = selective_post_process(target, source, encoder_scales, weights);
  return out;
}

/// Fraction of pixels won by each scale (diagnostic for the distill-label
/// report).
inline std::vector<float> scale_win_fractions(const DistillLabel& label, size_t scale_count) {
  std::vector<int64_t> wins(scale_count, 0);
  const float* ps = label.source_scale.data();
  const int64_t n = label.source_scale.numel();
  for (int64_t i = 0; i < n; ++i) {
    const size_t s = static_cast<size_t>(ps[i] + 0.5f);
    if (s < scale_count) ++wins[s];
  }
  std::vector<float> out(scale_count);
  for (size_t s = 0; s < scale_count; ++s)
    out[s] = n > 0 ? static_cast<float>(wins[s]) / static_cast<float>(n) : 0.0f;
  return out;
}

}  // namespace epc
