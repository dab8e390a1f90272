#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "epcdepth/net.hpp"
#include "epcdepth/tensor_io.hpp"

namespace epc {

// Checkpoint layout: a directory with one tensor file per parameter plus a
// text manifest echoing the model config and the step count.

inline void save_checkpoint(const FullScaleNet& net, const std::string& dir, int step) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  EPC_CHECK(manifest.good(), "save_checkpoint: cannot write manifest in ", dir);
  const ModelConfig& cfg = net.config();
  manifest << "epcdepth-checkpoint 1\n";
  manifest << "step " << step << "\n";
  manifest << "base_channels " << cfg.base_channels << "\n";
  manifest << "levels " << cfg.levels << "\n";
  manifest << "disp_max_fraction " << cfg.disp_max_fraction << "\n";
  manifest << "use_encoder_scales " << (cfg.use_encoder_scales ? 1 : 0) << "\n";
  manifest << "seed " << cfg.seed << "\n";
  for (const auto& [name, t] : net.named_parameters()) {
    const std::string file = name + ".epct";
    manifest << "param " << name << " " << file << "\n";
    write_epct((fs::path(dir) / file).string(), t);
  }
}

struct LoadedCheckpoint {
  FullScaleNet net;
  int step = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest.good())
    throw std::runtime_error("load_checkpoint: no manifest in " + dir);
  std::string tag;
  int version = 0;
  manifest >> tag >> version;
  if (tag != "epcdepth-checkpoint" || version != 1)
    throw std::runtime_error("load_checkpoint: unrecognized manifest in " + dir);

  ModelConfig cfg;
  int step = 0;
  std::map<std::string, std::string> params;
  std::string key;
  while (manifest >> key) {
    if (key == "step") {
      manifest >> step;
    } else if (key == "base_channels") {
      manifest >> cfg.base_channels;
    } else if (key == "levels") {
      manifest >> cfg.levels;
    } else if (key == "disp_max_fraction") {
      manifest >> cfg.disp_max_fraction;
    } else if (key == "use_encoder_scales") {
      int v = 0;
      manifest >> v;
      cfg.use_encoder_scales = v != 0;
    } else if (key == "seed") {
      manifest >> cfg.seed;
    } else if (key == "param") {
      std::string name, file;
      manifest >> name >> file;
      params[name] = file;
    } else {
      throw std::runtime_error("load_checkpoint: unknown manifest key '" + key + "'");
    }
  }

  LoadedCheckpoint out{FullScaleNet(cfg), step};
  for (const auto& [name, file] : params) {
    out.net.load_parameter(name, read_epct((fs::path(dir) / file).string()));
  }
  return out;
}

}  // namespace epc
