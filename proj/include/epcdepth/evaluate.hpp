#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "epcdepth/datagen.hpp"
#include "epcdepth/geometry.hpp"
#include "epcdepth/metrics.hpp"
#include "epcdepth/net.hpp"
#include "epcdepth/tensor_grid.hpp"

namespace epc {

struct EvalResult {
  DepthMetrics aggregate;
  std::vector<std::pair<std::string, DepthMetrics>> per_sample;
};

/// Runs the chosen head over a ground-truthed dataset, optionally with
/// flip post-processing, converts to depth and aggregates the metrics by
/// unweighted mean over samples.
inline EvalResult evaluate_model(const FullScaleNet& net,
                                 const std::vector<StereoSample>& samples,
                                 const EvalOptions& opts, bool use_flip_pp = false,
                                 const std::string& scale = "d0") {
  EPC_CHECK(!samples.empty(), "evaluate_model: empty dataset");
  for (const StereoSample& s : samples)
    EPC_CHECK(s.gt_disparity.has_value(), "evaluate_model: sample ", s.sample_id,
              " has no ground truth");
  const FullScaleNet head = net.pruned(ScaleSet::single(scale));

  EvalResult result;
  DepthMetrics sum;
  for (const StereoSample& s : samples) {
    NoGradGuardT<float> guard;
    const Tensor input = to_batch1(s.left);
    Grid disp = tensor_to_grid(head.forward(input).at(scale));
    if (use_flip_pp) {
      Grid flipped = tensor_to_grid(head.forward(hflip(input)).at(scale));
      disp = flip_post_process(disp, hflip(flipped));
    }
    const Grid pred_depth = disparity_to_depth(disp, s.rig, 1e-3f);
    Grid gt_depth(s.gt_disparity->h, s.gt_disparity->w);
    const float bf = s.rig.baseline * s.rig.focal;
    for (size_t i = 0; i < gt_depth.v.size(); ++i) {
      const float d = s.gt_disparity->v[i];
      gt_depth.v[i] = d > 0.0f ? bf / d : 0.0f;  // 0 marks invalid
    }
    const DepthMetrics m = compute_metrics(pred_depth, gt_depth, opts);
    result.per_sample.emplace_back(s.sample_id, m);
    sum.abs_rel += m.abs_rel;
    sum.sq_rel += m.sq_rel;
    sum.rmse += m.rmse;
    sum.rmse_log += m.rmse_log;
    sum.delta1 += m.delta1;
    sum.delta2 += m.delta2;
    sum.delta3 += m.delta3;
    TapeT<float>::active().clear();
  }
  const double n = static_cast<double>(samples.size());
  result.aggregate = {sum.abs_rel / n, sum.sq_rel / n,   sum.rmse / n,  sum.rmse_log / n,
                      sum.delta1 / n,  sum.delta2 / n,   sum.delta3 / n};
  return result;
}

inline std::string metrics_header() {
  return "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3";
}

inline std::string metrics_csv_row(const DepthMetrics& m) {
  return format_msg(m.abs_rel, ",", m.sq_rel, ",", m.rmse, ",", m.rmse_log, ",", m.delta1, ",",
                    m.delta2, ",", m.delta3);
}

inline std::string metrics_summary(const DepthMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "AbsRel %.4f | SqRel %.4f | RMSE %.4f | RMSElog %.4f | "
                "d<1.25 %.4f | d<1.25^2 %.4f | d<1.25^3 %.4f",
                m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.delta1, m.delta2, m.delta3);
  return std::string(buf);
}

inline void write_eval_csv(const std::string& path, const EvalResult& result) {
  std::ofstream out(path);
  EPC_CHECK(out.good(), "write_eval_csv: cannot open ", path);
  out << "sample," << metrics_header() << "\n";
  for (const auto& [id, m] : result.per_sample) out << id << "," << metrics_csv_row(m) << "\n";
  out << "aggregate," << metrics_csv_row(result.aggregate) << "\n";
}

}  // namespace epc
