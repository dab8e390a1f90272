#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "epcdepth/datagen.hpp"
#include "epcdepth/image_io.hpp"
#include "epcdepth/tensor_io.hpp"

namespace epc {

// On-disk layout, one directory per sample:
//   <root>/<id>/left.png
//   <root>/<id>/right.png
//   <root>/<id>/rig.txt          (two lines: baseline meters, focal pixels)
//   <root>/<id>/gt_disp.epct     (optional)
//   <root>/<id>/valid.epct       (optional)

inline void save_sample(const std::string& root, const StereoSample& s) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(root) / s.sample_id;
  fs::create_directories(dir);
  write_png_rgb8((dir / "left.png").string(), s.left);
  write_png_rgb8((dir / "right.png").string(), s.right);
  std::ofstream rig((dir / "rig.txt").string());
  rig << s.rig.baseline << "\n" << s.rig.focal << "\n";
  if (s.gt_disparity) write_epct((dir / "gt_disp.epct").string(), *s.gt_disparity);
  if (s.valid_mask) write_epct((dir / "valid.epct").string(), *s.valid_mask);
}

inline CameraRig load_rig(const std::string& path) {
  std::ifstream in(path);
  CameraRig rig;
  if (!(in >> rig.baseline >> rig.focal))
    throw std::invalid_argument("load_rig: malformed rig file " + path);
  EPC_CHECK(rig.baseline > 0 && rig.focal > 0, "load_rig: invalid rig b=", rig.baseline,
            " f=", rig.focal, " in ", path);
  return rig;
}

/// Loads every complete sample under `root`, sorted by id. Samples missing
/// one of the required files are skipped with a warning; a malformed rig
/// file is an error.
inline std::vector<StereoSample> load_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  std::vector<StereoSample> out;
  if (!fs::exists(root)) return out;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  for (const fs::path& dir : dirs) {
    const fs::path left = dir / "left.png";
    const fs::path right = dir / "right.png";
    const fs::path rig = dir / "rig.txt";
    const int present = static_cast<int>(fs::exists(left)) + static_cast<int>(fs::exists(right)) +
                        static_cast<int>(fs::exists(rig));
    if (present < 3) {
      // a directory with no sample files at all (e.g. the hint cache) is
      // simply not a sample; partial ones get a warning
      if (present > 0)
        std::cerr << "load_dataset: skipping incomplete sample " << dir.filename().string()
                  << "\n";
      continue;
    }
    StereoSample s;
    s.sample_id = dir.filename().string();
    s.left = read_png_rgb8(left.string());
    s.right = read_png_rgb8(right.string());
    s.rig = load_rig(rig.string());
    const fs::path gt = dir / "gt_disp.epct";
    if (fs::exists(gt)) s.gt_disparity = read_epct_grid(gt.string());
    const fs::path valid = dir / "valid.epct";
    if (fs::exists(valid)) s.valid_mask = read_epct_grid(valid.string());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace epc
