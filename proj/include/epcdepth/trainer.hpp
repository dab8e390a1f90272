#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "epcdepth/adam.hpp"
#include "epcdepth/checkpoint.hpp"
#include "epcdepth/dataset.hpp"
#include "epcdepth/grafting.hpp"
#include "epcdepth/losses.hpp"
#include "epcdepth/net.hpp"
#include "epcdepth/sgm.hpp"
#include "epcdepth/spp.hpp"

namespace epc {

struct TrainSwitches {
  bool grafting = true;
  bool self_distillation = true;
  bool encoder_scales = true;
  bool hints = true;
};

struct TrainConfig {
  AdamConfig adam;
  int batch_size = 4;
  int steps = 2000;
  TrainSwitches switches;
  uint64_t seed = 1;
  std::string data_root;
  std::string hints_dir;  // empty -> <data_root>/hints
  std::string checkpoint_dir;
  std::string log_csv;
  ModelConfig model;
  LossWeights loss_weights;
  DistillMode distill_mode = DistillMode::kSeparate;

  std::string resolved_hints_dir() const {
    return hints_dir.empty() ? data_root + "/hints" : hints_dir;
  }
};

struct StepRecord {
  int step = 0;
  float l_ph = 0, l_sd = 0, l_h = 0, total = 0;
  double wall_ms = 0;
  float grad_norm = 0;
};

struct TrainResult {
  FullScaleNet net;
  std::vector<StepRecord> records;
};

inline std::vector<HintMap> load_hints_for(const std::vector<StereoSample>& samples,
                                           const std::string& dir) {
  std::vector<HintMap> hints;
  hints.reserve(samples.size());
  for (const StereoSample& s : samples) {
    EPC_CHECK(std::filesystem::exists(hint_disp_path(dir, s.sample_id)),
              "missing hint cache for sample ", s.sample_id, " under ", dir,
              " (run the hints command first)");
    hints.push_back(load_hint(dir, s.sample_id));
  }
  return hints;
}

/// One-generation training loop: sample batch -> graft -> forward all
/// scales -> rebuild distillation labels -> joint loss -> Adam.
inline TrainResult train(TrainConfig cfg, const std::vector<StereoSample>& samples,
                         const std::vector<HintMap>* hints = nullptr) {
  EPC_CHECK(!samples.empty(), "train: empty dataset");
  EPC_CHECK(cfg.batch_size >= 1, "train: batch_size must be >= 1");
  EPC_CHECK(cfg.steps >= 0, "train: negative step count");
  if (cfg.switches.hints) {
    EPC_CHECK(hints != nullptr && hints->size() == samples.size(),
              "train: hint supervision enabled but hint maps are missing");
  }

  const int h = samples[0].left.dim(1);
  const int w = samples[0].left.dim(2);
  for (const StereoSample& s : samples)
    EPC_CHECK(s.left.dim(1) == h && s.left.dim(2) == w, "train: mixed sample sizes");

  cfg.model.use_encoder_scales = cfg.switches.encoder_scales;
  FullScaleNet net(cfg.model);

  std::vector<Tensor> params;
  for (auto& [name, t] : net.named_parameters()) params.push_back(t);
  Adam opt(params, cfg.adam);

  std::vector<Tensor> hint_disp, hint_valid;
  if (cfg.switches.hints) {
    for (size_t i = 0; i < samples.size(); ++i) {
      const HintMap& hm = (*hints)[i];
      EPC_CHECK(hm.disparity.h == h && hm.disparity.w == w, "train: hint size mismatch for ",
                samples[i].sample_id);
      Tensor d({1, h, w});
      Tensor v({1, h, w});
      std::copy(hm.disparity.v.begin(), hm.disparity.v.end(), d.data());
      for (size_t j = 0; j < hm.valid.size(); ++j) v.data()[j] = hm.valid[j] ? 1.0f : 0.0f;
      hint_disp.push_back(std::move(d));
      hint_valid.push_back(std::move(v));
    }
  }

  std::mt19937_64 order_rng(cfg.seed);
  std::mt19937_64 graft_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<int> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // forces a shuffle before the first batch

  std::ofstream csv;
  if (!cfg.log_csv.empty()) {
    csv.open(cfg.log_csv);
    csv << "step,l_ph,l_sd,l_h,total,wall_ms,grad_norm\n";
  }

  TrainResult result{std::move(net), {}};
  auto& tape = Tape::active();
  for (int step = 0; step < cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<Tensor> batch_t, batch_s, batch_h, batch_m;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      const int idx = order[cursor++];
      batch_t.push_back(samples[static_cast<size_t>(idx)].left);
      batch_s.push_back(samples[static_cast<size_t>(idx)].right);
      if (cfg.switches.hints) {
        batch_h.push_back(hint_disp[static_cast<size_t>(idx)]);
        batch_m.push_back(hint_valid[static_cast<size_t>(idx)]);
      }
    }
    Tensor targets = stack_batch(batch_t);
    Tensor sources = stack_batch(batch_s);
    Tensor hint_stack, mask_stack;
    if (cfg.switches.hints) {
      hint_stack = stack_batch(batch_h);
      mask_stack = stack_batch(batch_m);
    }
    if (cfg.switches.grafting) {
      const GraftConfig gcfg = sample_graft_config(graft_rng, cfg.batch_size);
      GraftedBatch gb = graft_batch(targets, sources, hint_stack, mask_stack, gcfg);
      targets = gb.targets;
      sources = gb.sources;
      hint_stack = gb.hints;
      mask_stack = gb.hint_masks;
    }

    FullScaleDisparities fsd = result.net.forward(targets);
    const std::vector<Tensor> dec = fsd.decoder_defined();
    const std::vector<Tensor> enc = fsd.encoder_defined();

    JointLossInputs in;
    in.target = targets;
    in.source = sources;
    in.weights = cfg.loss_weights;
    for (const Tensor& d : dec) in.scales.push_back({d, true});
    for (const Tensor& e : enc) in.scales.push_back({e, false});
    if (cfg.switches.self_distillation) {
      DistillLabels labels =
          build_labels(targets, sources, dec, enc, cfg.loss_weights, cfg.distill_mode);
      in.label_decoder = labels.decoder.y;
      in.label_encoder = labels.encoder.y.defined() ? labels.encoder.y : labels.decoder.y;
    }
    if (cfg.switches.hints) {
      in.hint = hint_stack;
      in.hint_valid = mask_stack;
    }

    LossBreakdown loss = joint_loss(in);

    StepRecord rec;
    rec.step = step;
    rec.total = loss.total_value();
    for (const ScaleLossTerms& t : loss.per_scale) {
      rec.l_ph += t.photometric;
      rec.l_sd += t.self_distill;
      rec.l_h += t.hint;
    }
    const float ns = static_cast<float>(loss.per_scale.size());
    rec.l_ph /= ns;
    rec.l_sd /= ns;
    rec.l_h /= ns;

    if (!std::isfinite(rec.total)) {
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count();
      result.records.push_back(rec);
      if (csv.is_open())
        csv << rec.step << "," << rec.l_ph << "," << rec.l_sd << "," << rec.l_h << ","
            << rec.total << "," << rec.wall_ms << "," << rec.grad_norm << "\n";
      throw std::runtime_error(
          format_msg("train: non-finite loss at step ", step, " (total=", rec.total, ")"));
    }

    backward(loss.total);
    rec.grad_norm = opt.grad_norm();
    opt.step();
    opt.zero_grad();
    tape.clear();

    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (csv.is_open()) {
      csv << rec.step << "," << rec.l_ph << "," << rec.l_sd << "," << rec.l_h << "," << rec.total
          << "," << rec.wall_ms << "," << rec.grad_norm << "\n";
    }
    result.records.push_back(rec);
  }

  if (!cfg.checkpoint_dir.empty()) save_checkpoint(result.net, cfg.checkpoint_dir, cfg.steps);
  return result;
}

/// Disk-path variant: loads the dataset (and hint cache when enabled) from
/// the configured roots.
inline TrainResult train_from_disk(const TrainConfig& cfg) {
  const std::vector<StereoSample> samples = load_dataset(cfg.data_root);
  EPC_CHECK(!samples.empty(), "train: no samples under ", cfg.data_root);
  if (cfg.switches.hints) {
    const std::vector<HintMap> hints = load_hints_for(samples, cfg.resolved_hints_dir());
    return train(cfg, samples, &hints);
  }
  return train(cfg, samples, nullptr);
}

/// The ablation grid: baseline, each contribution alone, and the full model.
struct AblationVariant {
  std::string name;
  TrainSwitches switches;
};

inline std::vector<AblationVariant> ablation_grid() {
  TrainSwitches off{false, false, false, false};
  std::vector<AblationVariant> grid;
  grid.push_back({"baseline", off});
  TrainSwitches dg = off;
  dg.grafting = true;
  grid.push_back({"grafting", dg});
  TrainSwitches sd = off;
  sd.self_distillation = true;
  grid.push_back({"self_distill", sd});
  TrainSwitches fs = off;
  fs.encoder_scales = true;
  grid.push_back({"full_scale", fs});
  grid.push_back({"full", TrainSwitches{}});
  return grid;
}

}  // namespace epc
