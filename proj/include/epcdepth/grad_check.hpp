#pragma once

#include <vector>

#include "epcdepth/ops.hpp"
#include "epcdepth/parallel.hpp"

namespace epc {

namespace detail {

inline std::vector<TensorT<double>> widen_inputs(const std::vector<Tensor>& inputs) {
  std::vector<TensorT<double>> out;
  out.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    std::vector<double> data(t.vec().begin(), t.vec().end());
    out.push_back(TensorT<double>::from_data(t.shape(), std::move(data)));
  }
  return out;
}

}  // namespace detail

/// Central-difference check of the reverse-mode gradient.
///
/// `fn` must be callable as fn(std::vector<TensorT<U>>) -> TensorT<U> for
/// U = float and U = double and must return a scalar. The analytic gradient
/// runs through the float engine; the numeric side evaluates the same
/// function in float64 so that the difference quotient is not drowned by
/// single-precision rounding. Returns the max over all input coordinates of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <class Fn>
double grad_check(const Fn& fn, const std::vector<Tensor>& inputs, double eps) {
  EPC_CHECK(eps > 0, "grad_check: eps must be positive");
  EPC_CHECK(!inputs.empty(), "grad_check: no inputs");

  // Analytic gradients via the float tape.
  std::vector<std::vector<float>> analytic;
  {
    auto& tape = Tape::active();
    const size_t mark = tape.size();
    std::vector<Tensor> leaves;
    leaves.reserve(inputs.size());
    for (const Tensor& t : inputs) {
      Tensor c = t.detach();
      c.set_requires_grad(true);
      leaves.push_back(c);
    }
    Tensor out = fn(leaves);
    EPC_CHECK(out.defined() && out.numel() == 1,
              "grad_check: function output must be scalar");
    backward(out);
    for (Tensor& c : leaves) {
      analytic.push_back(c.grad().vec());
      c.zero_grad();
    }
    tape.truncate(mark);
  }

  // Numeric side in double, parallel over coordinates. Each chunk owns a
  // private copy of the inputs so perturbations never race.
  const std::vector<TensorT<double>> base = detail::widen_inputs(inputs);
  std::vector<int64_t> offsets(1, 0);
  for (const auto& t : base) offsets.push_back(offsets.back() + t.numel());
  const int64_t total = offsets.back();

  const int64_t chunk = std::max<int64_t>(1, (total + 255) / 256);
  const int64_t nchunks = (total + chunk - 1) / chunk;
  std::vector<double> chunk_max(static_cast<size_t>(nchunks), 0.0);

  ThreadPool::instance().run(nchunks, [&](int64_t ci) {
    NoGradGuardT<double> guard;
    std::vector<TensorT<double>> work;
    work.reserve(base.size());
    for (const auto& t : base) work.push_back(t.clone());
    double worst = 0.0;
    const int64_t b = ci * chunk;
    const int64_t e = std::min(total, b + chunk);
    for (int64_t flat = b; flat < e; ++flat) {
      size_t j = 0;
      while (flat >= offsets[j + 1]) ++j;
      const int64_t i = flat - offsets[j];
      const double orig = work[j][i];
      work[j][i] = orig + eps;
      const double f_plus = static_cast<double>(fn(work)[0]);
      work[j][i] = orig - eps;
      const double f_minus = static_cast<double>(fn(work)[0]);
      work[j][i] = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double a = static_cast<double>(analytic[j][static_cast<size_t>(i)]);
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
    chunk_max[static_cast<size_t>(ci)] = worst;
  });

  double worst = 0.0;
  for (double v : chunk_max) worst = std::max(worst, v);
  return worst;
}

}  // namespace epc
