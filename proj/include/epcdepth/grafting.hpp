#pragma once

#include <random>
#include <vector>

#include "epcdepth/tensor.hpp"

namespace epc {

/// One batch-wide grafting configuration: the row ratio kept from the
/// primary input, the vertical-exchange branch, and the partner pairing.
struct GraftConfig {
  int ratio_fifths = 0;  // r = ratio_fifths / 5, in {0, 1, 2, 3, 4}
  bool swap = false;
  std::vector<int> partner;  // batch index -> partner index

  float ratio() const { return static_cast<float>(ratio_fifths) / 5.0f; }
};

/// Draws the shared per-batch config: r uniform over {0, .2, .4, .6, .8}
/// (probability 0.2 each), a fair-coin swap, and a cyclic partner pairing
/// (i pairs with (i+1) mod batch).
template <class Rng>
GraftConfig sample_graft_config(Rng& rng, int batch_size) {
  EPC_CHECK(batch_size >= 1, "sample_graft_config: batch_size must be >= 1");
  GraftConfig cfg;
  std::uniform_int_distribution<int> ratio_dist(0, 4);
  cfg.ratio_fifths = ratio_dist(rng);
  std::uniform_real_distribution<double> flip_dist(0.0, 1.0);
  cfg.swap = flip_dist(rng) < 0.5;
  cfg.partner.resize(static_cast<size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i)
    cfg.partner[static_cast<size_t>(i)] = (i + 1) % batch_size;
  return cfg;
}

/// ceil(h * n/5) in exact integer arithmetic.
inline int graft_rows(int h, int ratio_fifths) {
  return (h * ratio_fifths + 4) / 5;
}

namespace detail {

// Grafts one [rows x row_len] slab: keeps the top graft_h rows of the
// primary, takes the rest from the partner, then optionally circular-shifts
// the result down by graft_h (the vertical exchange branch).
template <class T>
void graft_rows_into(const T* primary, const T* partner, T* out, int h, int64_t row_len,
                     int graft_h, bool swap) {
  auto src_row = [&](int r) -> const T* {
    return (r < graft_h ? primary : partner) + static_cast<int64_t>(r) * row_len;
  };
  for (int r = 0; r < h; ++r) {
    const int grafted_r = swap ? (r + graft_h) % h : r;
    const T* s = src_row(grafted_r);
    std::copy(s, s + row_len, out + static_cast<int64_t>(r) * row_len);
  }
}

}  // namespace detail

/// Grafts a single input with its partner (both of the same category). The
/// second-to-last dimension is treated as image rows. With r = 0 the
/// primary is returned unchanged.
inline Tensor graft(const Tensor& primary, const Tensor& partner, const GraftConfig& cfg) {
  EPC_CHECK(primary.shape() == partner.shape(), "graft: shape mismatch ",
            shape_str(primary.shape()), " vs ", shape_str(partner.shape()));
  EPC_CHECK(primary.rank() >= 2, "graft: need at least 2 dimensions, got ",
            shape_str(primary.shape()));
  if (cfg.ratio_fifths == 0) return primary;
  const int h = primary.dim(primary.rank() - 2);
  const int64_t row_len = primary.dim(primary.rank() - 1);
  const int64_t slab = static_cast<int64_t>(h) * row_len;
  const int64_t slabs = primary.numel() / slab;
  const int gh = graft_rows(h, cfg.ratio_fifths);

  Tensor out(primary.shape());
  for (int64_t s = 0; s < slabs; ++s) {
    detail::graft_rows_into(primary.data() + s * slab, partner.data() + s * slab,
                            out.data() + s * slab, h, row_len, gh, cfg.swap);
  }
  return out;
}

inline Grid graft(const Grid& primary, const Grid& partner, const GraftConfig& cfg) {
  EPC_CHECK(primary.h == partner.h && primary.w == partner.w, "graft: grid shape mismatch");
  if (cfg.ratio_fifths == 0) return primary;
  Grid out(primary.h, primary.w);
  detail::graft_rows_into(primary.v.data(), partner.v.data(), out.v.data(), primary.h,
                          primary.w, graft_rows(primary.h, cfg.ratio_fifths), cfg.swap);
  return out;
}

/// Applies the shared config to a whole [N,C,H,W] category stack; sample i
/// is grafted with sample cfg.partner[i].
inline Tensor graft_stack(const Tensor& stack, const GraftConfig& cfg) {
  EPC_CHECK(stack.rank() == 4, "graft_stack: expected NCHW stack, got ",
            shape_str(stack.shape()));
  const int n = stack.dim(0);
  EPC_CHECK(static_cast<size_t>(n) == cfg.partner.size(),
            "graft_stack: batch size ", n, " does not match config partners ",
            cfg.partner.size());
  if (cfg.ratio_fifths == 0) return stack;
  const int c = stack.dim(1), h = stack.dim(2);
  const int64_t row_len = stack.dim(3);
  const int64_t slab = static_cast<int64_t>(h) * row_len;
  const int gh = graft_rows(h, cfg.ratio_fifths);
  Tensor out(stack.shape());
  for (int i = 0; i < n; ++i) {
    const int j = cfg.partner[static_cast<size_t>(i)];
    for (int ch = 0; ch < c; ++ch) {
      detail::graft_rows_into(stack.data() + (static_cast<int64_t>(i) * c + ch) * slab,
                              stack.data() + (static_cast<int64_t>(j) * c + ch) * slab,
                              out.data() + (static_cast<int64_t>(i) * c + ch) * slab, h,
                              row_len, gh, cfg.swap);
    }
  }
  return out;
}

/// One training batch in grafted space. Hints and their masks ride along
/// with the same config so Eq.-style row correspondences survive.
struct GraftedBatch {
  Tensor targets;
  Tensor sources;
  Tensor hints;       // may be undefined
  Tensor hint_masks;  // may be undefined
};

inline GraftedBatch graft_batch(const Tensor& targets, const Tensor& sources,
                                const Tensor& hints, const Tensor& hint_masks,
                                const GraftConfig& cfg) {
  EPC_CHECK(targets.rank() == 4 && sources.rank() == 4, "graft_batch: expected NCHW stacks");
  EPC_CHECK(targets.dim(0) == sources.dim(0) && targets.dim(2) == sources.dim(2) &&
                targets.dim(3) == sources.dim(3),
            "graft_batch: target/source stacks disagree: ", shape_str(targets.shape()),
            " vs ", shape_str(sources.shape()));
  GraftedBatch out;
  out.targets = graft_stack(targets, cfg);
  out.sources = graft_stack(sources, cfg);
  if (hints.defined()) {
    EPC_CHECK(hints.dim(0) == targets.dim(0) && hints.dim(2) == targets.dim(2) &&
                  hints.dim(3) == targets.dim(3),
              "graft_batch: hint stack disagrees with targets");
    out.hints = graft_stack(hints, cfg);
  }
  if (hint_masks.defined()) {
    EPC_CHECK(hint_masks.dim(0) == targets.dim(0) && hint_masks.dim(2) == targets.dim(2) &&
                  hint_masks.dim(3) == targets.dim(3),
              "graft_batch: hint mask stack disagrees with targets");
    out.hint_masks = graft_stack(hint_masks, cfg);
  }
  return out;
}

}  // namespace epc
