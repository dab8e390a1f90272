// Command-line front end: dataset generation, hint precomputation, training,
// evaluation, single-image inference, distillation-label inspection and the
// ablation grid.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "epcdepth/evaluate.hpp"
#include "epcdepth/image_io.hpp"
#include "epcdepth/spp.hpp"
#include "epcdepth/trainer.hpp"

namespace fs = std::filesystem;
using namespace epc;

namespace {

struct DataArgs {
  std::string out = "data";
  int train_count = 200;
  int eval_count = 40;
  int height = 64;
  int width = 192;
  int layers = 4;
  float depth_min = 2.0f;
  float depth_max = 50.0f;
  float baseline = 0.5f;
  float focal = 100.0f;
  std::string texture = "gradient-mix";
  uint64_t seed = 1000;
};

TextureKind parse_texture(const std::string& name) {
  if (name == "noise") return TextureKind::kNoise;
  if (name == "checker") return TextureKind::kChecker;
  if (name == "gradient-mix") return TextureKind::kGradientMix;
  throw CLI::ValidationError("texture", "expected noise|checker|gradient-mix");
}

int cmd_gen_data(const DataArgs& a) {
  SceneConfig cfg;
  cfg.height = a.height;
  cfg.width = a.width;
  cfg.layer_count = a.layers;
  cfg.depth_min = a.depth_min;
  cfg.depth_max = a.depth_max;
  cfg.texture = parse_texture(a.texture);
  const CameraRig rig{a.baseline, a.focal};
  auto write_split = [&](const std::string& split, int count, uint64_t seed) {
    const std::string root = a.out + "/" + split;
    for (const StereoSample& s : generate_dataset(count, cfg, rig, seed)) save_sample(root, s);
    std::cout << "wrote " << count << " samples to " << root << "\n";
  };
  write_split("train", a.train_count, a.seed);
  write_split("eval", a.eval_count, a.seed + 1000000);
  return 0;
}

int cmd_hints(const std::string& data, const std::string& out_dir, int max_disp,
              bool single_config) {
  const std::vector<StereoSample> samples = load_dataset(data);
  if (samples.empty()) {
    std::cerr << "no samples under " << data << "\n";
    return 1;
  }
  const std::string dir = out_dir.empty() ? data + "/hints" : out_dir;
  SgmParams params;
  params.max_disp = max_disp;
  LossWeights weights;
  int done = 0;
  for (const StereoSample& s : samples) {
    HintMap hint = compute_fused_hint(s.left, s.right, params, weights, !single_config);
    save_hint(dir, s.sample_id, hint);
    ++done;
    if (done % 25 == 0) std::cout << done << "/" << samples.size() << " hints\n";
  }
  std::cout << "wrote " << done << " hint maps to " << dir << "\n";
  return 0;
}

void add_train_options(CLI::App* cmd, TrainConfig& tc, bool& no_graft, bool& no_sd,
                       bool& no_enc, bool& no_hints) {
  cmd->add_option("--data", tc.data_root, "dataset root (train split)");
  cmd->add_option("--hints-dir", tc.hints_dir, "hint cache directory");
  cmd->add_option("--out", tc.checkpoint_dir, "checkpoint directory");
  cmd->add_option("--log", tc.log_csv, "per-step CSV log");
  cmd->add_option("--steps", tc.steps, "optimizer steps");
  cmd->add_option("--batch-size", tc.batch_size, "batch size");
  cmd->add_option("--lr", tc.adam.lr, "learning rate");
  cmd->add_option("--seed", tc.seed, "data-order / grafting seed");
  cmd->add_option("--model-seed", tc.model.seed, "weight init seed");
  cmd->add_option("--base-channels", tc.model.base_channels, "encoder width at full resolution");
  cmd->add_option("--disp-max-fraction", tc.model.disp_max_fraction,
                  "disparity cap as a fraction of image width");
  cmd->add_flag("--no-graft", no_graft, "disable data grafting");
  cmd->add_flag("--no-self-distill", no_sd, "disable the self-distillation loss");
  cmd->add_flag("--no-encoder-scales", no_enc, "decoder-only prediction heads");
  cmd->add_flag("--no-hints", no_hints, "disable hint supervision");
  cmd->add_flag("--combined-spp",
                [&tc](int64_t) { tc.distill_mode = DistillMode::kCombined; },
                "build one distillation label from all scales");
}

int cmd_train(TrainConfig tc, bool no_graft, bool no_sd, bool no_enc, bool no_hints) {
  tc.switches.grafting = !no_graft;
  tc.switches.self_distillation = !no_sd;
  tc.switches.encoder_scales = !no_enc;
  tc.switches.hints = !no_hints;
  if (tc.data_root.empty()) {
    std::cerr << "train: --data is required\n";
    return 1;
  }
  TrainResult r = train_from_disk(tc);
  const StepRecord& last = r.records.empty() ? StepRecord{} : r.records.back();
  std::cout << "trained " << tc.steps << " steps; final total loss " << last.total << "\n";
  std::cout << "parameters: " << r.net.parameter_count()
            << ", forward multiplies (64x192): " << r.net.forward_macs(64, 192) << "\n";
  if (!tc.checkpoint_dir.empty()) std::cout << "checkpoint: " << tc.checkpoint_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& data, const std::string& checkpoint, const std::string& scale,
             bool pp, bool garg, bool median, float cap, const std::string& csv) {
  const std::vector<StereoSample> samples = load_dataset(data);
  if (samples.empty()) {
    std::cerr << "no samples under " << data << "\n";
    return 1;
  }
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
  EvalOptions opts;
  opts.depth_cap = cap;
  opts.median_scale = median;
  if (garg) opts.crop = garg_crop();
  EvalResult result = evaluate_model(ckpt.net, samples, opts, pp, scale);
  std::cout << "scale " << scale << (pp ? " (+pp)" : "") << " over " << samples.size()
            << " samples:\n  " << metrics_summary(result.aggregate) << "\n";
  if (!csv.empty()) {
    write_eval_csv(csv, result);
    std::cout << "per-sample report: " << csv << "\n";
  }
  return 0;
}

int cmd_infer(const std::string& image, const std::string& checkpoint,
              const std::string& out_prefix, const std::string& scale) {
  Tensor img = read_png_rgb8(image);
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
  NoGradGuardT<float> guard;
  FullScaleNet head = ckpt.net.pruned(ScaleSet::single(scale));
  Grid disp = tensor_to_grid(head.forward(to_batch1(img)).at(scale));
  write_epct(out_prefix + ".epct", disp);
  write_png_rgb8(out_prefix + ".png", disparity_heatmap(disp));
  float lo = disp.v[0], hi = disp.v[0];
  for (float v : disp.v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::cout << "disparity range [" << lo << ", " << hi << "] px -> " << out_prefix
            << ".png / .epct\n";
  return 0;
}

int cmd_distill_label(const std::string& left, const std::string& right,
                      const std::vector<std::string>& scale_files,
                      const std::string& out_prefix) {
  Tensor target = to_batch1(read_png_rgb8(left));
  Tensor source = to_batch1(read_png_rgb8(right));
  std::vector<Tensor> scales;
  for (const std::string& f : scale_files) {
    Tensor t = read_epct(f);
    if (t.rank() == 2) t = grid_to_tensor(read_epct_grid(f));
    scales.push_back(t);
  }
  DistillLabel label = selective_post_process(target, source, scales, LossWeights{});
  write_epct(out_prefix + ".y.epct", label.y);
  write_epct(out_prefix + ".e_min.epct", label.e_min);
  write_epct(out_prefix + ".source_scale.epct", label.source_scale);
  std::cout << "per-scale win fractions:\n";
  const std::vector<float> fr = scale_win_fractions(label, scales.size());
  for (size_t s = 0; s < fr.size(); ++s)
    std::cout << "  scale " << s << " (" << scale_files[s] << "): " << fr[s] << "\n";
  return 0;
}

int cmd_ablate(const std::string& data, const std::string& out_dir, int steps, int seeds,
               uint64_t base_seed) {
  const std::vector<StereoSample> samples = load_dataset(data + "/train");
  const std::vector<StereoSample> eval_set = load_dataset(data + "/eval");
  if (samples.empty() || eval_set.empty()) {
    std::cerr << "ablate: expected <data>/train and <data>/eval datasets\n";
    return 1;
  }
  const std::vector<HintMap> hints = load_hints_for(samples, data + "/train/hints");
  fs::create_directories(out_dir);
  std::ofstream table(fs::path(out_dir) / "ablation.csv");
  table << "variant,seed," << metrics_header() << "\n";
  for (const AblationVariant& v : ablation_grid()) {
    DepthMetrics mean;
    for (int s = 0; s < seeds; ++s) {
      TrainConfig tc;
      tc.steps = steps;
      tc.switches = v.switches;
      tc.seed = base_seed + static_cast<uint64_t>(s);
      tc.model.seed = base_seed + 100 + static_cast<uint64_t>(s);
      TrainResult r = tc.switches.hints ? train(tc, samples, &hints) : train(tc, samples, nullptr);
      EvalResult e = evaluate_model(r.net, eval_set, EvalOptions{}, false, "d0");
      table << v.name << "," << (base_seed + static_cast<uint64_t>(s)) << ","
            << metrics_csv_row(e.aggregate) << "\n";
      table.flush();
      mean.abs_rel += e.aggregate.abs_rel / seeds;
      mean.delta1 += e.aggregate.delta1 / seeds;
      std::cout << v.name << " seed " << s << ": " << metrics_summary(e.aggregate) << "\n";
    }
    std::cout << v.name << " mean: abs_rel " << mean.abs_rel << ", delta1 " << mean.delta1
              << "\n";
  }
  std::cout << "table: " << (fs::path(out_dir) / "ablation.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised stereo depth training on procedural scenes"};
  app.set_config("--config", "", "flat key = value config file");
  app.require_subcommand(1);

  DataArgs data_args;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic stereo dataset");
  gen->add_option("--out", data_args.out, "output root (train/ and eval/ splits)");
  gen->add_option("--train-count", data_args.train_count, "training samples");
  gen->add_option("--eval-count", data_args.eval_count, "evaluation samples");
  gen->add_option("--height", data_args.height, "image height");
  gen->add_option("--width", data_args.width, "image width");
  gen->add_option("--layers", data_args.layers, "foreground layers per scene");
  gen->add_option("--depth-min", data_args.depth_min, "nearest layer depth, meters");
  gen->add_option("--depth-max", data_args.depth_max, "background depth, meters");
  gen->add_option("--baseline", data_args.baseline, "stereo baseline, meters");
  gen->add_option("--focal", data_args.focal, "focal length, pixels");
  gen->add_option("--texture", data_args.texture, "noise|checker|gradient-mix");
  gen->add_option("--seed", data_args.seed, "base seed");

  std::string hints_data, hints_out;
  int hints_max_disp = 0;
  bool hints_single = false;
  CLI::App* hints = app.add_subcommand("hints", "precompute stereo-matcher depth hints");
  hints->add_option("--data", hints_data, "dataset root")->required();
  hints->add_option("--out", hints_out, "hint cache directory (default <data>/hints)");
  hints->add_option("--max-disp", hints_max_disp, "search range (0 = 0.3 * width)");
  hints->add_flag("--single-config", hints_single, "one matcher pass instead of fused three");

  TrainConfig tc;
  bool no_graft = false, no_sd = false, no_enc = false, no_hints = false;
  CLI::App* train_cmd = app.add_subcommand("train", "run the training loop");
  add_train_options(train_cmd, tc, no_graft, no_sd, no_enc, no_hints);

  std::string eval_data, eval_ckpt, eval_scale = "d0", eval_csv;
  bool eval_pp = false, eval_garg = false, eval_median = false;
  float eval_cap = 80.0f;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--data", eval_data, "dataset root with ground truth")->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
  eval_cmd->add_option("--scale", eval_scale, "prediction head (d0..d4, e0..e4)");
  eval_cmd->add_option("--cap", eval_cap, "depth cap, meters");
  eval_cmd->add_option("--csv", eval_csv, "per-sample CSV report");
  eval_cmd->add_flag("--pp", eval_pp, "flip post-processing");
  eval_cmd->add_flag("--garg-crop", eval_garg, "standard fractional crop");
  eval_cmd->add_flag("--median-scale", eval_median, "median-scale predictions");

  std::string infer_image, infer_ckpt, infer_out = "disparity", infer_scale = "d0";
  CLI::App* infer_cmd = app.add_subcommand("infer", "single image to disparity map");
  infer_cmd->add_option("--image", infer_image, "input PNG")->required();
  infer_cmd->add_option("--checkpoint", infer_ckpt, "checkpoint directory")->required();
  infer_cmd->add_option("--out-prefix", infer_out, "output prefix (.png heat map + .epct)");
  infer_cmd->add_option("--scale", infer_scale, "prediction head");

  std::string dl_left, dl_right, dl_out = "label";
  std::vector<std::string> dl_scales;
  CLI::App* dl_cmd = app.add_subcommand("distill-label",
                                        "compose the per-pixel best-scale label");
  dl_cmd->add_option("--left", dl_left, "target view PNG")->required();
  dl_cmd->add_option("--right", dl_right, "source view PNG")->required();
  dl_cmd->add_option("--disp", dl_scales, "disparity tensor files, in scale order")->required();
  dl_cmd->add_option("--out-prefix", dl_out, "output prefix");

  std::string ab_data, ab_out = "ablation";
  int ab_steps = 500, ab_seeds = 3;
  uint64_t ab_seed = 1;
  CLI::App* ab_cmd = app.add_subcommand("ablate", "train/evaluate the contribution grid");
  ab_cmd->add_option("--data", ab_data, "dataset root (train/ + eval/)")->required();
  ab_cmd->add_option("--out", ab_out, "output directory");
  ab_cmd->add_option("--steps", ab_steps, "steps per variant");
  ab_cmd->add_option("--seeds", ab_seeds, "seeds per variant");
  ab_cmd->add_option("--seed", ab_seed, "base seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(data_args);
    if (hints->parsed()) return cmd_hints(hints_data, hints_out, hints_max_disp, hints_single);
    if (train_cmd->parsed()) return cmd_train(tc, no_graft, no_sd, no_enc, no_hints);
    if (eval_cmd->parsed())
      return cmd_eval(eval_data, eval_ckpt, eval_scale, eval_pp, eval_garg, eval_median,
                      eval_cap, eval_csv);
    if (infer_cmd->parsed()) return cmd_infer(infer_image, infer_ckpt, infer_out, infer_scale);
    if (dl_cmd->parsed()) return cmd_distill_label(dl_left, dl_right, dl_scales, dl_out);
    if (ab_cmd->parsed()) return cmd_ablate(ab_data, ab_out, ab_steps, ab_seeds, ab_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
