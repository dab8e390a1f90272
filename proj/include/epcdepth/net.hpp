#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "epcdepth/ops.hpp"

namespace epc {

constexpr int kNetLevels = 5;

struct ModelConfig {
  int base_channels = 16;
  int levels = kNetLevels;  // fixed: e0..e4 / d0..d4
  float disp_max_fraction = 0.3f;
  bool use_encoder_scales = true;
  uint64_t seed = 42;
};

/// Which prediction heads to evaluate. Default: everything the model has.
struct ScaleSet {
  std::array<bool, kNetLevels> dec{};
  std::array<bool, kNetLevels> enc{};

  static ScaleSet all(bool encoder_too = true) {
    ScaleSet s;
    s.dec.fill(true);
    s.enc.fill(encoder_too);
    return s;
  }

  static ScaleSet none() { return ScaleSet{}; }

  static ScaleSet single(const std::string& name) {
    ScaleSet s;
    s.add(name);
    return s;
  }

  void add(const std::string& name) {
    EPC_CHECK(name.size() == 2 && (name[0] == 'd' || name[0] == 'e') && name[1] >= '0' &&
                  name[1] < '0' + kNetLevels,
              "scale name must be d0..d4 or e0..e4, got '", name, "'");
    const int level = name[1] - '0';
    if (name[0] == 'd')
      dec[static_cast<size_t>(level)] = true;
    else
      enc[static_cast<size_t>(level)] = true;
  }

  bool any() const {
    for (bool b : dec)
      if (b) return true;
    for (bool b : enc)
      if (b) return true;
    return false;
  }
  bool any_decoder() const {
    for (bool b : dec)
      if (b) return true;
    return false;
  }
  int max_encoder_level() const {
    int m = -1;
    for (int k = 0; k < kNetLevels; ++k)
      if (enc[static_cast<size_t>(k)]) m = k;
    return m;
  }
  int min_decoder_level() const {
    for (int k = 0; k < kNetLevels; ++k)
      if (dec[static_cast<size_t>(k)]) return k;
    return kNetLevels;
  }
};

/// The ten disparity maps of one forward pass, all bilinearly upsampled to
/// the input resolution (native head outputs are kept for inspection).
/// Entries for heads that were not evaluated are undefined tensors.
struct FullScaleDisparities {
  std::vector<Tensor> decoder;         // d0..d4, full resolution
  std::vector<Tensor> encoder;         // e0..e4, full resolution
  std::vector<Tensor> decoder_native;  // head outputs before the final upsample
  std::vector<Tensor> encoder_native;

  std::vector<Tensor> decoder_defined() const {
    std::vector<Tensor> out;
    for (const Tensor& t : decoder)
      if (t.defined()) out.push_back(t);
    return out;
  }
  std::vector<Tensor> encoder_defined() const {
    std::vector<Tensor> out;
    for (const Tensor& t : encoder)
      if (t.defined()) out.push_back(t);
    return out;
  }

  const Tensor& at(const std::string& name) const {
    EPC_CHECK(name.size() == 2, "unknown scale '", name, "'");
    const int level = name[1] - '0';
    EPC_CHECK(level >= 0 && level < kNetLevels, "unknown scale '", name, "'");
    const Tensor& t = name[0] == 'd' ? decoder[static_cast<size_t>(level)]
                                     : encoder[static_cast<size_t>(level)];
    EPC_CHECK(t.defined(), "scale '", name, "' was not evaluated");
    return t;
  }
};

/// Encoder-decoder with a disparity head on every decoder level and,
/// optionally, on every encoder level behind a residual bridge block. Heads
/// and bridges that are not kept are skipped entirely, so pruning to a head
/// subset reproduces the kept maps bit-for-bit.
class FullScaleNet {
 public:
  explicit FullScaleNet(const ModelConfig& cfg) : cfg_(cfg) {
    EPC_CHECK(cfg.levels == kNetLevels, "FullScaleNet: levels is fixed at ", kNetLevels);
    EPC_CHECK(cfg.base_channels >= 1, "FullScaleNet: base_channels must be positive");
    EPC_CHECK(cfg.disp_max_fraction > 0.0f && cfg.disp_max_fraction < 1.0f,
              "FullScaleNet: disp_max_fraction must lie in (0, 1)");
    keep_ = ScaleSet::all(cfg.use_encoder_scales);
    std::mt19937_64 rng(cfg.seed);

    std::array<int, kNetLevels> ch{};
    std::array<int, kNetLevels> dch{};
    for (int k = 0; k < kNetLevels; ++k) {
      ch[static_cast<size_t>(k)] = cfg.base_channels << k;
      dch[static_cast<size_t>(k)] = std::max(cfg.base_channels, ch[static_cast<size_t>(k)] / 2);
    }
    ch_ = ch;
    dch_ = dch;

    for (int k = 0; k < kNetLevels; ++k) {
      const int cin = k == 0 ? 3 : ch[static_cast<size_t>(k - 1)];
      stem_.push_back(make_conv(rng, format_msg("enc", k, ".stem"), cin,
                                ch[static_cast<size_t>(k)], 3, k == 0 ? 1 : 2, 1));
      enc_res_.push_back(make_resu(rng, format_msg("enc", k, ".res"), ch[static_cast<size_t>(k)],
                                   ch[static_cast<size_t>(k)]));
    }
    if (cfg.use_encoder_scales) {
      for (int k = 0; k < kNetLevels; ++k) {
        bridges_.push_back(make_resu(rng, format_msg("bridge", k), ch[static_cast<size_t>(k)],
                                     ch[static_cast<size_t>(k)]));
        enc_heads_.push_back(
            make_head(rng, format_msg("head_e", k), ch[static_cast<size_t>(k)]));
      }
    }
    for (int k = kNetLevels - 1; k >= 0; --k) {
      const int cin = k == kNetLevels - 1
                          ? ch[static_cast<size_t>(k)]
                          : dch[static_cast<size_t>(k + 1)] + ch[static_cast<size_t>(k)];
      dec_blocks_[static_cast<size_t>(k)] =
          make_resu(rng, format_msg("dec", k), cin, dch[static_cast<size_t>(k)]);
    }
    for (int k = 0; k < kNetLevels; ++k) {
      dec_heads_.push_back(make_head(rng, format_msg("head_d", k), dch[static_cast<size_t>(k)]));
    }
  }

  const ModelConfig& config() const { return cfg_; }
  const ScaleSet& kept() const { return keep_; }

  /// Shares all weights; only the evaluated-head set changes.
  FullScaleNet pruned(const ScaleSet& keep) const {
    EPC_CHECK(keep.any(), "pruned: keep set must not be empty");
    if (!cfg_.use_encoder_scales) {
      EPC_CHECK(keep.max_encoder_level() < 0,
                "pruned: this model was built without encoder scales");
    }
    FullScaleNet net = *this;
    net.keep_ = keep;
    return net;
  }

  FullScaleDisparities forward(const Tensor& image) const {
    detail::check_rank4(image, "FullScaleNet::forward");
    EPC_CHECK(image.dim(1) == 3, "FullScaleNet::forward: expected RGB input, got ",
              shape_str(image.shape()));
    const int h = image.dim(2), w = image.dim(3);
    const int div = 1 << (kNetLevels - 1);
    EPC_CHECK(h % div == 0 && w % div == 0, "FullScaleNet::forward: input ", h, "x", w,
              " must be divisible by ", div);
    const float disp_cap = cfg_.disp_max_fraction * static_cast<float>(w);

    FullScaleDisparities out;
    out.decoder.resize(kNetLevels);
    out.encoder.resize(kNetLevels);
    out.decoder_native.resize(kNetLevels);
    out.encoder_native.resize(kNetLevels);

    const bool any_dec = keep_.any_decoder();
    const int enc_depth = any_dec ? kNetLevels - 1 : keep_.max_encoder_level();
    EPC_CHECK(enc_depth >= 0, "FullScaleNet::forward: nothing to evaluate");

    std::vector<Tensor> feats(kNetLevels);
    Tensor x = image;
    for (int k = 0; k <= enc_depth; ++k) {
      x = elu(apply_conv(stem_[static_cast<size_t>(k)], x));
      x = apply_resu(enc_res_[static_cast<size_t>(k)], x);
      feats[static_cast<size_t>(k)] = x;
    }

    for (int k = 0; k < kNetLevels; ++k) {
      if (!keep_.enc[static_cast<size_t>(k)]) continue;
      Tensor b = apply_resu(bridges_[static_cast<size_t>(k)], feats[static_cast<size_t>(k)]);
      Tensor native = apply_head(enc_heads_[static_cast<size_t>(k)], b, disp_cap);
      out.encoder_native[static_cast<size_t>(k)] = native;
      out.encoder[static_cast<size_t>(k)] = resize_bilinear(native, h, w);
    }

    if (any_dec) {
      const int stop = keep_.min_decoder_level();
      Tensor d = apply_resu(dec_blocks_[kNetLevels - 1], feats[kNetLevels - 1]);
      if (keep_.dec[kNetLevels - 1]) {
        Tensor native = apply_head(dec_heads_[kNetLevels - 1], d, disp_cap);
        out.decoder_native[kNetLevels - 1] = native;
        out.decoder[kNetLevels - 1] = resize_bilinear(native, h, w);
      }
      for (int k = kNetLevels - 2; k >= stop; --k) {
        const int ph = feats[static_cast<size_t>(k)].dim(2);
        const int pw = feats[static_cast<size_t>(k)].dim(3);
        Tensor up = resize_nearest(d, ph, pw);
        d = apply_resu(dec_blocks_[static_cast<size_t>(k)],
                       concat_channels<float>({up, feats[static_cast<size_t>(k)]}));
        if (keep_.dec[static_cast<size_t>(k)]) {
          Tensor native = apply_head(dec_heads_[static_cast<size_t>(k)], d, disp_cap);
          out.decoder_native[static_cast<size_t>(k)] = native;
          out.decoder[static_cast<size_t>(k)] = resize_bilinear(native, h, w);
        }
      }
    }
    return out;
  }

  /// Parameters reachable from the kept heads, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    const bool any_dec = keep_.any_decoder();
    const int enc_depth = any_dec ? kNetLevels - 1 : keep_.max_encoder_level();
    for (int k = 0; k <= enc_depth; ++k) {
      push_conv(out, stem_[static_cast<size_t>(k)]);
      push_resu(out, enc_res_[static_cast<size_t>(k)]);
    }
    for (int k = 0; k < kNetLevels; ++k) {
      if (!keep_.enc[static_cast<size_t>(k)]) continue;
      push_resu(out, bridges_[static_cast<size_t>(k)]);
      push_conv(out, enc_heads_[static_cast<size_t>(k)]);
    }
    if (any_dec) {
      const int stop = keep_.min_decoder_level();
      for (int k = kNetLevels - 1; k >= stop; --k)
        push_resu(out, dec_blocks_[static_cast<size_t>(k)]);
      for (int k = 0; k < kNetLevels; ++k)
        if (keep_.dec[static_cast<size_t>(k)]) push_conv(out, dec_heads_[static_cast<size_t>(k)]);
    }
    return out;
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : named_parameters()) n += t.numel();
    return n;
  }

  /// Conv multiply count of one forward pass at the given input size,
  /// honoring the kept-head set (resizes and element-wise ops not counted).
  int64_t forward_macs(int h, int w) const {
    int64_t macs = 0;
    auto conv_macs = [&](const struct Conv& c, int oh, int ow) {
      macs += static_cast<int64_t>(c.w.dim(0)) * c.w.dim(1) * c.w.dim(2) * c.w.dim(3) * oh * ow;
    };
    auto resu_macs = [&](const struct ResU& r, int oh, int ow) {
      conv_macs(r.c1, oh, ow);
      conv_macs(r.c2, std::max(1, oh / 2), std::max(1, ow / 2));
      if (r.proj.w.defined()) conv_macs(r.proj, oh, ow);
    };
    const bool any_dec = keep_.any_decoder();
    const int enc_depth = any_dec ? kNetLevels - 1 : keep_.max_encoder_level();
    for (int k = 0; k <= enc_depth; ++k) {
      const int lh = h >> k, lw = w >> k;
      conv_macs(stem_[static_cast<size_t>(k)], lh, lw);
      resu_macs(enc_res_[static_cast<size_t>(k)], lh, lw);
    }
    for (int k = 0; k < kNetLevels; ++k) {
      if (!keep_.enc[static_cast<size_t>(k)]) continue;
      const int lh = h >> k, lw = w >> k;
      resu_macs(bridges_[static_cast<size_t>(k)], lh, lw);
      conv_macs(enc_heads_[static_cast<size_t>(k)], lh, lw);
    }
    if (any_dec) {
      const int stop = keep_.min_decoder_level();
      for (int k = kNetLevels - 1; k >= stop; --k)
        resu_macs(dec_blocks_[static_cast<size_t>(k)], h >> k, w >> k);
      for (int k = 0; k < kNetLevels; ++k)
        if (keep_.dec[static_cast<size_t>(k)])
          conv_macs(dec_heads_[static_cast<size_t>(k)], h >> k, w >> k);
    }
    return macs;
  }

  /// Copies values from a parameter map (e.g. a loaded checkpoint).
  void load_parameter(const std::string& name, const Tensor& value) {
    for (auto& [pname, t] : mutable_parameters()) {
      if (pname == name) {
        EPC_CHECK(t.shape() == value.shape(), "load_parameter: shape mismatch for ", name,
                  ": ", shape_str(t.shape()), " vs ", shape_str(value.shape()));
        std::copy(value.data(), value.data() + value.numel(), t.data());
        return;
      }
    }
    EPC_CHECK(false, "load_parameter: unknown parameter '", name, "'");
  }

  std::vector<std::pair<std::string, Tensor>> mutable_parameters() { return named_parameters(); }

 private:
  struct Conv {
    std::string name;
    Tensor w, b;
    int stride = 1, pad = 1;
  };

  // Simplified residual U-block: a 3x3 conv, a second 3x3 conv on a
  // half-resolution copy, bilinear return and a residual add, all ELU,
  // no normalization.
  struct ResU {
    Conv proj;  // 1x1 channel adapter; w undefined when cin == cout
    Conv c1, c2;
  };

  template <class Rng>
  Conv make_conv(Rng& rng, const std::string& name, int cin, int cout, int k, int stride,
                 int pad, float bias_init = 0.0f) {
    Conv c;
    c.name = name;
    const float bound = 1.0f / std::sqrt(static_cast<float>(cin * k * k));
    c.w = Tensor::uniform({cout, cin, k, k}, -bound, bound, rng);
    c.w.set_requires_grad(true);
    c.b = Tensor({cout}, bias_init);
    c.b.set_requires_grad(true);
    c.stride = stride;
    c.pad = pad;
    return c;
  }

  template <class Rng>
  ResU make_resu(Rng& rng, const std::string& name, int cin, int cout) {
    ResU r;
    if (cin != cout) r.proj = make_conv(rng, name + ".proj", cin, cout, 1, 1, 0);
    r.c1 = make_conv(rng, name + ".c1", cin, cout, 3, 1, 1);
    r.c2 = make_conv(rng, name + ".c2", cout, cout, 3, 1, 1);
    return r;
  }

  template <class Rng>
  Conv make_head(Rng& rng, const std::string& name, int cin) {
    // far-biased start: sigmoid(-2) ~ 0.12 of the disparity cap
    return make_conv(rng, name, cin, 1, 3, 1, 1, -2.0f);
  }

  static Tensor apply_conv(const Conv& c, const Tensor& x) {
    return conv2d(x, c.w, c.b, c.stride, c.pad);
  }

  static Tensor apply_resu(const ResU& r, const Tensor& x) {
    Tensor skip = r.proj.w.defined() ? apply_conv(r.proj, x) : x;
    Tensor h1 = elu(apply_conv(r.c1, x));
    const int hh = std::max(1, h1.dim(2) / 2);
    const int hw = std::max(1, h1.dim(3) / 2);
    Tensor h2 = elu(apply_conv(r.c2, resize_nearest(h1, hh, hw)));
    Tensor up = resize_bilinear(h2, h1.dim(2), h1.dim(3));
    return elu(add(add(h1, up), skip));
  }

  static Tensor apply_head(const Conv& head, const Tensor& x, float disp_cap) {
    return mul_scalar(sigmoid(conv2d(x, head.w, head.b, head.stride, head.pad)), disp_cap);
  }

  static void push_conv(std::vector<std::pair<std::string, Tensor>>& out, const Conv& c) {
    out.emplace_back(c.name + ".w", c.w);
    out.emplace_back(c.name + ".b", c.b);
  }

  static void push_resu(std::vector<std::pair<std::string, Tensor>>& out, const ResU& r) {
    if (r.proj.w.defined()) push_conv(out, r.proj);
    push_conv(out, r.c1);
    push_conv(out, r.c2);
  }

  ModelConfig cfg_;
  ScaleSet keep_;
  std::array<int, kNetLevels> ch_{};
  std::array<int, kNetLevels> dch_{};
  std::vector<Conv> stem_;
  std::vector<ResU> enc_res_;
  std::vector<ResU> bridges_;
  std::vector<Conv> enc_heads_;
  std::array<ResU, kNetLevels> dec_blocks_;
  std::vector<Conv> dec_heads_;
};

}  // namespace epc
