#pragma once

#include <optional>
#include <vector>

#include "epcdepth/geometry.hpp"
#include "epcdepth/ops.hpp"

namespace epc {

/// Photometric mixing weights. alpha scales the SSIM term, beta the L1 term.
struct LossWeights {
  float alpha = 0.85f;
  float beta = 0.15f;
  int ssim_window = 3;
};

/// Per-pixel photometric discrepancy map, averaged over channels:
///   alpha * (1 - SSIM) / 2 + beta * |target - reconstructed|
/// SSIM statistics come from a zero-padded box mean over `ssim_window`,
/// with C1 = 0.01^2 and C2 = 0.03^2. With alpha == 0 the SSIM term is
/// skipped entirely, which keeps the map a pure per-pixel function of the
/// disparity at that pixel.
template <class T>
TensorT<T> photometric_error_map(const TensorT<T>& target, const TensorT<T>& reconstructed,
                                 const LossWeights& w) {
  detail::check_same_shape(target, reconstructed, "photometric_error_map");
  detail::check_rank4(target, "photometric_error_map");
  EPC_CHECK(w.ssim_window % 2 == 1 && w.ssim_window >= 1,
            "photometric_error_map: ssim window must be odd, got ", w.ssim_window);
  EPC_CHECK(w.ssim_window <= target.dim(2) && w.ssim_window <= target.dim(3),
            "photometric_error_map: window ", w.ssim_window, " larger than image ",
            target.dim(2), "x", target.dim(3));
  const T alpha = static_cast<T>(w.alpha);
  const T beta = static_cast<T>(w.beta);

  TensorT<T> l1 = abs(sub(target, reconstructed));
  if (w.alpha == 0.0f) {
    return mul_scalar(mean_axis(l1, 1), beta);
  }

  const int k = w.ssim_window;
  const T c1 = static_cast<T>(0.01 * 0.01);
  const T c2 = static_cast<T>(0.03 * 0.03);
  TensorT<T> mu_x = box_filter(target, k);
  TensorT<T> mu_y = box_filter(reconstructed, k);
  TensorT<T> sigma_x = sub(box_filter(mul(target, target), k), mul(mu_x, mu_x));
  TensorT<T> sigma_y = sub(box_filter(mul(reconstructed, reconstructed), k), mul(mu_y, mu_y));
  TensorT<T> sigma_xy = sub(box_filter(mul(target, reconstructed), k), mul(mu_x, mu_y));

  TensorT<T> num = mul(add_scalar(mul_scalar(mul(mu_x, mu_y), T(2)), c1),
                       add_scalar(mul_scalar(sigma_xy, T(2)), c2));
  TensorT<T> den = mul(add_scalar(add(mul(mu_x, mu_x), mul(mu_y, mu_y)), c1),
                       add_scalar(add(sigma_x, sigma_y), c2));
  TensorT<T> ssim = div(num, den);

  TensorT<T> per_channel =
      add(mul_scalar(rsub_scalar(T(1), ssim), alpha / T(2)), mul_scalar(l1, beta));
  return mean_axis(per_channel, 1);
}

/// mean log(|label - disp| + 1). The label must be detached; gradient flows
/// only into the disparity.
template <class T>
TensorT<T> self_distillation_loss(const TensorT<T>& disp, const TensorT<T>& label) {
  detail::check_same_shape(disp, label, "self_distillation_loss");
  EPC_CHECK(!label.requires_grad(),
            "self_distillation_loss: label must be detached (stop-gradient)");
  return mean(log(add_scalar(abs(sub(label, disp)), T(1))));
}

/// Hint supervision: per pixel log(|hint - disp| + 1) where the hint both is
/// valid and reconstructs better than the prediction (e_hint < e_pred),
/// averaged over ALL pixels. The activation mask is a constant.
template <class T>
TensorT<T> hint_loss_map(const TensorT<T>& disp, const TensorT<T>& hint,
                         const TensorT<T>& hint_valid, const TensorT<T>& e_pred,
                         const TensorT<T>& e_hint) {
  detail::check_same_shape(disp, hint, "hint_loss_map");
  detail::check_same_shape(disp, hint_valid, "hint_loss_map");
  detail::check_same_shape(disp, e_pred, "hint_loss_map");
  detail::check_same_shape(disp, e_hint, "hint_loss_map");
  EPC_CHECK(!hint.requires_grad(), "hint_loss_map: hint must be constant");

  // constant activation mask; never differentiated
  TensorT<T> mask(disp.shape());
  {
    const int64_t n = mask.numel();
    const T* ph = e_hint.data();
    const T* pp = e_pred.data();
    const T* pv = hint_valid.data();
    T* pm = mask.data();
    for (int64_t i = 0; i < n; ++i)
      pm[i] = (ph[i] < pp[i] && pv[i] > T(0.5)) ? T(1) : T(0);
  }
  return mean(mul(mask, log(add_scalar(abs(sub(hint, disp)), T(1)))));
}

/// One full-resolution disparity scale plus which distillation label it
/// compares against.
template <class T>
struct ScaleInput {
  TensorT<T> disp;
  bool is_decoder = true;
};

template <class T>
struct JointLossInputsT {
  TensorT<T> target;
  TensorT<T> source;
  std::vector<ScaleInput<T>> scales;
  TensorT<T> label_decoder;  // undefined -> self-distillation disabled
  TensorT<T> label_encoder;
  TensorT<T> hint;           // undefined -> hint loss disabled
  TensorT<T> hint_valid;
  LossWeights weights;
};

using JointLossInputs = JointLossInputsT<float>;

struct ScaleLossTerms {
  float photometric = 0.0f;
  float self_distill = 0.0f;
  float hint = 0.0f;
};

template <class T>
struct LossBreakdownT {
  std::vector<ScaleLossTerms> per_scale;
  TensorT<T> total;  // scalar, on the tape
  float total_value() const { return static_cast<float>(total[0]); }
};

using LossBreakdown = LossBreakdownT<float>;

/// Joint objective: mean over scales of photometric + self-distillation +
/// hint terms, every term evaluated at full resolution.
template <class T>
LossBreakdownT<T> joint_loss(const JointLossInputsT<T>& in) {
  EPC_CHECK(!in.scales.empty(), "joint_loss: no disparity scales");
  const bool with_sd = in.label_decoder.defined() || in.label_encoder.defined();
  const bool with_hint = in.hint.defined();
  if (with_hint) {
    EPC_CHECK(in.hint_valid.defined(), "joint_loss: hint provided without validity mask");
  }

  // Hint reconstruction error is shared by every scale; constant.
  TensorT<T> e_hint;
  if (with_hint) {
    NoGradGuardT<T> guard;
    e_hint = photometric_error_map(in.target, warp(in.source, in.hint, WarpSource::Right),
                                   in.weights);
  }

  LossBreakdownT<T> out;
  TensorT<T> acc;
  for (const ScaleInput<T>& s : in.scales) {
    TensorT<T> recon = warp(in.source, s.disp, WarpSource::Right);
    TensorT<T> e_map = photometric_error_map(in.target, recon, in.weights);
    TensorT<T> l = mean(e_map);
    ScaleLossTerms terms;
    terms.photometric = static_cast<float>(l[0]);
    if (with_sd) {
      const TensorT<T>& label = s.is_decoder ? in.label_decoder : in.label_encoder;
      EPC_CHECK(label.defined(), "joint_loss: missing distillation label for ",
                s.is_decoder ? "decoder" : "encoder", " scale");
      TensorT<T> l_sd = self_distillation_loss(s.disp, label);
      terms.self_distill = static_cast<float>(l_sd[0]);
      l = add(l, l_sd);
    }
    if (with_hint) {
      TensorT<T> l_h = hint_loss_map(s.disp, in.hint, in.hint_valid, e_map.detach(), e_hint);
      terms.hint = static_cast<float>(l_h[0]);
      l = add(l, l_h);
    }
    out.per_scale.push_back(terms);
    acc = acc.defined() ? add(acc, l) : l;
  }
  out.total = mul_scalar(acc, T(1) / static_cast<T>(in.scales.size()));
  return out;
}

}  // namespace epc
