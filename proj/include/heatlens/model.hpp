#pragma once

#include <array>
#include <string>

#include "heatlens/heat.hpp"
#include "heatlens/masking.hpp"
#include "heatlens/rng.hpp"

namespace heatlens {

enum class Modality { optical, sar };

inline std::size_t modality_channels(Modality m) { return m == Modality::optical ? 3 : 1; }
inline const char* modality_tag(Modality m) { return m == Modality::optical ? "opt" : "sar"; }

struct LossToggles {
  bool sdr = true;  // spatial-domain reconstruction
  bool fdr = true;  // frequency-domain reconstruction
  bool cl = true;   // contrastive alignment
  bool any() const { return sdr || fdr || cl; }
};

// Four-stage hierarchical encoder geometry plus decoder/loss switches.
// Desk-scale defaults; the full-scale ladder (2,2,18,2)x(128..1024) is
// constructible but far beyond desk budgets.
struct ModelConfig {
  std::array<std::size_t, 4> stage_depths{1, 1, 2, 1};
  std::array<std::size_t, 4> stage_widths{16, 32, 64, 128};
  std::size_t patch_size = 4;
  std::size_t image_h = 64;
  std::size_t image_w = 64;
  LossToggles loss;

  // Token grids per stage. Downsampling halves a grid only while the result
  // stays >= 2; below that the stage keeps the previous extent (channel
  // widths still advance through a pointwise projection).
  std::size_t grid_h(std::size_t stage) const { return clamped(image_h / patch_size, stage); }
  std::size_t grid_w(std::size_t stage) const { return clamped(image_w / patch_size, stage); }

  // spatial step between stage s and s+1 (2 = halve, 1 = keep)
  std::size_t down_factor(std::size_t s) const {
    return grid_h(s) / grid_h(s + 1) == 2 && grid_w(s) / grid_w(s + 1) == 2 ? 2 : 1;
  }

  void validate() const {
    if (image_h == 0 || image_w == 0 || patch_size == 0)
      fail_shape("ModelConfig", "degenerate geometry");
    if (image_h % patch_size != 0 || image_w % patch_size != 0)
      fail_shape("ModelConfig", "image " + std::to_string(image_h) + "x" +
                                    std::to_string(image_w) + " not divisible by patch size " +
                                    std::to_string(patch_size));
    if ((patch_size & (patch_size - 1)) != 0)
      fail_shape("ModelConfig", "patch size must be a power of two");
    if (grid_h(0) < 2 || grid_w(0) < 2)
      fail_shape("ModelConfig", "token grid smaller than 2x2");
    for (auto d : stage_depths)
      if (d == 0) fail_shape("ModelConfig", "stage depths must be >= 1");
    for (auto w : stage_widths)
      if (w == 0) fail_shape("ModelConfig", "stage widths must be >= 1");
  }

 private:
  static std::size_t clamped(std::size_t g0, std::size_t stage) {
    std::size_t g = g0;
    for (std::size_t s = 0; s < stage; ++s)
      if (g / 2 >= 2) g /= 2;
    return g;
  }
};

template <typename T>
struct StageFeatures {
  Tensor<T> stage3;  // third-stage output (fusion input)
  Tensor<T> stage4;  // fourth-stage output (frequency decoder / pooling input)
};

template <typename T>
struct ItemOutputs {
  Tensor<T> freq_recon_opt_low, freq_recon_opt_high;  // [3,H,W]
  Tensor<T> freq_recon_sar_low, freq_recon_sar_high;  // [1,H,W]
  Tensor<T> spatial_recon_opt;                        // [3,H,W]
  Tensor<T> spatial_recon_sar;                        // [1,H,W]
  Tensor<T> embed_opt_low, embed_opt_high;            // pooled [C]
  Tensor<T> embed_sar_low, embed_sar_high;
};

template <typename T>
struct LossBreakdown {
  Tensor<T> total;  // sum of the enabled terms, fixed evaluation order
  Tensor<T> con, spa, fre;
};

// Pretraining network: modality embeddings into the shared thermal space,
// four stages of residual spectral blocks (trunk shared across all four
// modality/level streams), modality-specific frequency decoders on the
// fourth-stage features, and a fusion + spatial decoder pair on the third-
// and fourth-stage features of both frequency levels.
template <typename T>
class Model {
 public:
  // Plans ask for the fft fast path; non-power-of-two grids fall back to the
  // basis-matrix path on their own.
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (std::size_t s = 0; s < 4; ++s)
      stage_plans_.push_back(SpectralPlan<T>::make(cfg_.grid_h(s), cfg_.grid_w(s), DctPath::fft));
    image_plan_ = SpectralPlan<T>::make(cfg_.image_h, cfg_.image_w, DctPath::fft);
    ups_from_stage4_ = count_ups(cfg_.grid_h(3), cfg_.grid_w(3));
    ups_from_stage3_ = count_ups(cfg_.grid_h(2), cfg_.grid_w(2));
  }

  const ModelConfig& config() const { return cfg_; }
  const SpectralPlan<T>& image_plan() const { return image_plan_; }
  const SpectralPlan<T>& stage_plan(std::size_t s) const { return stage_plans_[s]; }

  // ---- parameter inventory -------------------------------------------------

  struct ParamSpec {
    std::string name;
    Shape shape;
    std::size_t fan_in;  // 0 = zero-init
  };

  std::vector<ParamSpec> param_specs() const {
    std::vector<ParamSpec> out;
    const std::size_t ps = cfg_.patch_size;
    const auto& w = cfg_.stage_widths;
    for (Modality m : {Modality::optical, Modality::sar}) {
      const std::size_t cm = modality_channels(m);
      out.push_back({key("embed.", m, ".w"), {w[0], cm, ps, ps}, cm * ps * ps});
      out.push_back({key("embed.", m, ".b"), {w[0]}, 0});
    }
    for (std::size_t s = 0; s < 4; ++s) {
      const std::size_t c = w[s], gh = cfg_.grid_h(s), gw = cfg_.grid_w(s);
      for (std::size_t b = 0; b < cfg_.stage_depths[s]; ++b) {
        const std::string pre = block_prefix(s, b);
        out.push_back({pre + "fve", {c, gh, gw}, 0});
        out.push_back({pre + "sce", {c, gh, gw}, 0});
        out.push_back({pre + "proj_in.w", {c, c, 1, 1}, c});
        out.push_back({pre + "proj_in.b", {c}, 0});
        out.push_back({pre + "proj_out.w", {c, c, 1, 1}, c});
        out.push_back({pre + "proj_out.b", {c}, 0});
        out.push_back({pre + "mlp1.w", {4 * c, c, 1, 1}, c});
        out.push_back({pre + "mlp1.b", {4 * c}, 0});
        out.push_back({pre + "mlp2.w", {c, 4 * c, 1, 1}, 4 * c});
        out.push_back({pre + "mlp2.b", {c}, 0});
      }
      if (s < 3) {
        const std::size_t f = cfg_.down_factor(s);
        out.push_back({"down." + std::to_string(s) + ".w", {w[s + 1], c, f, f}, c * f * f});
        out.push_back({"down." + std::to_string(s) + ".b", {w[s + 1]}, 0});
      }
    }
    for (Modality m : {Modality::optical, Modality::sar}) {
      const std::size_t cm = modality_channels(m);
      // frequency decoder: conv3x3 + pixel_shuffle(2) ladder from the
      // fourth-stage grid up to full resolution, then a pointwise head
      std::size_t c = w[3];
      for (std::size_t i = 0; i < ups_from_stage4_; ++i) {
        const std::size_t cn = next_width(c);
        out.push_back({key("fdec.", m, ".s" + std::to_string(i) + ".w"), {4 * cn, c, 3, 3},
                       c * 9});
        out.push_back({key("fdec.", m, ".s" + std::to_string(i) + ".b"), {4 * cn}, 0});
        c = cn;
      }
      out.push_back({key("fdec.", m, ".out.w"), {cm, c, 1, 1}, c});
      out.push_back({key("fdec.", m, ".out.b"), {cm}, 0});
      // fusion: per-level convs at stages 3 and 4, then merge
      out.push_back({key("fuse.", m, ".s3h.w"), {w[2], w[2], 3, 3}, w[2] * 9});
      out.push_back({key("fuse.", m, ".s3h.b"), {w[2]}, 0});
      out.push_back({key("fuse.", m, ".s3l.w"), {w[2], w[2], 3, 3}, w[2] * 9});
      out.push_back({key("fuse.", m, ".s3l.b"), {w[2]}, 0});
      out.push_back({key("fuse.", m, ".s4h.w"), {w[3], w[3], 3, 3}, w[3] * 9});
      out.push_back({key("fuse.", m, ".s4h.b"), {w[3]}, 0});
      out.push_back({key("fuse.", m, ".s4l.w"), {w[3], w[3], 3, 3}, w[3] * 9});
      out.push_back({key("fuse.", m, ".s4l.b"), {w[3]}, 0});
      out.push_back({key("fuse.", m, ".merge3.w"), {w[3], 2 * w[2], 3, 3}, 2 * w[2] * 9});
      out.push_back({key("fuse.", m, ".merge3.b"), {w[3]}, 0});
      out.push_back({key("fuse.", m, ".merge4.w"), {w[3], 2 * w[3], 3, 3}, 2 * w[3] * 9});
      out.push_back({key("fuse.", m, ".merge4.b"), {w[3]}, 0});
      // spatial decoder from the third-stage grid
      c = w[3];
      for (std::size_t i = 0; i < ups_from_stage3_; ++i) {
        const std::size_t cn = next_width(c);
        out.push_back({key("sdec.", m, ".s" + std::to_string(i) + ".w"), {4 * cn, c, 3, 3},
                       c * 9});
        out.push_back({key("sdec.", m, ".s" + std::to_string(i) + ".b"), {4 * cn}, 0});
        c = cn;
      }
      out.push_back({key("sdec.", m, ".out.w"), {cm, c, 1, 1}, c});
      out.push_back({key("sdec.", m, ".out.b"), {cm}, 0});
    }
    return out;
  }

  NamedTensors<T> init_params(std::uint64_t seed) const {
    NamedTensors<T> out;
    const auto specs = param_specs();
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const auto& sp = specs[i];
      std::vector<T> vals(numel(sp.shape), T(0));
      if (sp.fan_in > 0) {
        rng::Xoshiro256pp stream(rng::derive_seed(seed, i));
        const double lim = 1.0 / std::sqrt(static_cast<double>(sp.fan_in));
        for (auto& v : vals) v = static_cast<T>(stream.uniform(-lim, lim));
      }
      out.emplace(sp.name, Tensor<T>(sp.shape, std::move(vals)));
    }
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& sp : param_specs()) n += numel(sp.shape);
    return n;
  }

  // ---- forward pieces --------------------------------------------------

  Tensor<T> embed(const NamedTensors<T>& p, const Tensor<T>& image, Modality mod) const {
    if (image.rank() != 3 || image.shape()[0] != modality_channels(mod) ||
        image.shape()[1] != cfg_.image_h || image.shape()[2] != cfg_.image_w)
      fail_shape("embed", "image " + shape_str(image.shape()) + " does not match config");
    return patchify(image, at(p, key("embed.", mod, ".w")),
                    std::optional<Tensor<T>>(at(p, key("embed.", mod, ".b"))), cfg_.patch_size);
  }

  HcoParams<T> block_params(const NamedTensors<T>& p, std::size_t stage, std::size_t block) const {
    const std::string pre = block_prefix(stage, block);
    HcoParams<T> bp;
    bp.fve_raw = at(p, pre + "fve");
    bp.sce = at(p, pre + "sce");
    bp.t = T(1);
    bp.proj_in_w = at(p, pre + "proj_in.w");
    bp.proj_in_b = at(p, pre + "proj_in.b");
    bp.proj_out_w = at(p, pre + "proj_out.w");
    bp.proj_out_b = at(p, pre + "proj_out.b");
    bp.mlp1_w = at(p, pre + "mlp1.w");
    bp.mlp1_b = at(p, pre + "mlp1.b");
    bp.mlp2_w = at(p, pre + "mlp2.w");
    bp.mlp2_b = at(p, pre + "mlp2.b");
    return bp;
  }

  StageFeatures<T> encode(const NamedTensors<T>& p, const Tensor<T>& component,
                          Modality mod) const {
    Tensor<T> z = embed(p, component, mod);
    StageFeatures<T> out;
    for (std::size_t s = 0; s < 4; ++s) {
      for (std::size_t b = 0; b < cfg_.stage_depths[s]; ++b)
        z = hco_block(stage_plans_[s], block_params(p, s, b), z);
      if (s == 2) out.stage3 = z;
      if (s == 3) out.stage4 = z;
      if (s < 3)
        z = patchify(z, at(p, "down." + std::to_string(s) + ".w"),
                     std::optional<Tensor<T>>(at(p, "down." + std::to_string(s) + ".b")),
                     cfg_.down_factor(s));
    }
    return out;
  }

  // conv + pixel-shuffle ladder restoring full image extent (per modality)
  Tensor<T> decode_frequency(const NamedTensors<T>& p, const Tensor<T>& stage4,
                             Modality mod) const {
    Tensor<T> z = stage4;
    for (std::size_t i = 0; i < ups_from_stage4_; ++i) {
      const std::string pre = key("fdec.", mod, ".s" + std::to_string(i));
      z = pixel_shuffle(
          conv2d(z, at(p, pre + ".w"), std::optional<Tensor<T>>(at(p, pre + ".b")), 1, 1), 2);
    }
    return conv2d(z, at(p, key("fdec.", mod, ".out.w")),
                  std::optional<Tensor<T>>(at(p, key("fdec.", mod, ".out.b"))), 1, 0);
  }

  // per-level convs + channel concat at stages 3 and 4, merge via
  // conv -> ReLU -> elementwise sum (stage-4 path upsampled to the stage-3
  // extent), then the spatial decoder ladder up to the image size
  Tensor<T> fuse_decode_spatial(const NamedTensors<T>& p, const StageFeatures<T>& high,
                                const StageFeatures<T>& low, Modality mod) const {
    auto cv = [&](const char* name, const Tensor<T>& x) {
      const std::string pre = key("fuse.", mod, name);
      return conv2d(x, at(p, pre + ".w"), std::optional<Tensor<T>>(at(p, pre + ".b")), 1, 1);
    };
    Tensor<T> f3 = concat_channels(cv(".s3h", high.stage3), cv(".s3l", low.stage3));
    Tensor<T> f4 = concat_channels(cv(".s4h", high.stage4), cv(".s4l", low.stage4));
    const std::size_t align = cfg_.grid_h(2) / cfg_.grid_h(3);
    if (align > 1) f4 = upsample_nearest(f4, align);
    Tensor<T> merged = add(relu(cv(".merge3", f3)), relu(cv(".merge4", f4)));
    Tensor<T> z = merged;
    for (std::size_t i = 0; i < ups_from_stage3_; ++i) {
      const std::string pre = key("sdec.", mod, ".s" + std::to_string(i));
      z = pixel_shuffle(
          conv2d(z, at(p, pre + ".w"), std::optional<Tensor<T>>(at(p, pre + ".b")), 1, 1), 2);
    }
    return conv2d(z, at(p, key("sdec.", mod, ".out.w")),
                  std::optional<Tensor<T>>(at(p, key("sdec.", mod, ".out.b"))), 1, 0);
  }

  // all reconstructions and embeddings the enabled loss terms need
  ItemOutputs<T> forward_item(const NamedTensors<T>& p, const PairedComponents<T>& comps,
                              const LossToggles& toggles) const {
    ItemOutputs<T> out;
    StageFeatures<T> ol = encode(p, comps.opt_low, Modality::optical);
    StageFeatures<T> oh = encode(p, comps.opt_high, Modality::optical);
    StageFeatures<T> sl = encode(p, comps.sar_low, Modality::sar);
    StageFeatures<T> sh = encode(p, comps.sar_high, Modality::sar);
    if (toggles.fdr) {
      out.freq_recon_opt_low = decode_frequency(p, ol.stage4, Modality::optical);
      out.freq_recon_opt_high = decode_frequency(p, oh.stage4, Modality::optical);
      out.freq_recon_sar_low = decode_frequency(p, sl.stage4, Modality::sar);
      out.freq_recon_sar_high = decode_frequency(p, sh.stage4, Modality::sar);
    }
    if (toggles.sdr) {
      out.spatial_recon_opt = fuse_decode_spatial(p, oh, ol, Modality::optical);
      out.spatial_recon_sar = fuse_decode_spatial(p, sh, sl, Modality::sar);
    }
    if (toggles.cl) {
      out.embed_opt_low = spatial_mean_pool(ol.stage4);
      out.embed_opt_high = spatial_mean_pool(oh.stage4);
      out.embed_sar_low = spatial_mean_pool(sl.stage4);
      out.embed_sar_high = spatial_mean_pool(sh.stage4);
    }
    return out;
  }

  // L_total = [cl] L_Con + [sdr] L_Spa + [fdr] L_Fre, unit weights.
  // L_Fre compares DCT coefficients of reconstruction vs masked-component
  // target (mean |.|, summed over modality and level); L_Spa is mean |.|
  // against the original image, summed over modalities; L_Con aligns the
  // pooled low/high embeddings of the same image (1 - cosine, averaged over
  // modalities).
  LossBreakdown<T> loss_total(const ItemOutputs<T>& out, const PairedComponents<T>& comps,
                              const Tensor<T>& optical, const Tensor<T>& sar,
                              const LossToggles& toggles) const {
    if (!toggles.any()) fail_value("loss_total", "all loss terms disabled: no training signal");
    LossBreakdown<T> lb;
    lb.con = Tensor<T>::scalar(T(0));
    lb.spa = Tensor<T>::scalar(T(0));
    lb.fre = Tensor<T>::scalar(T(0));
    if (toggles.fdr) {
      auto term = [&](const Tensor<T>& recon, const Tensor<T>& target) {
        return mean(heatlens::abs(
            sub(dct2(image_plan_, recon), dct2(image_plan_, target))));
      };
      lb.fre = add(add(term(out.freq_recon_opt_low, comps.opt_low),
                       term(out.freq_recon_opt_high, comps.opt_high)),
                   add(term(out.freq_recon_sar_low, comps.sar_low),
                       term(out.freq_recon_sar_high, comps.sar_high)));
    }
    if (toggles.sdr) {
      lb.spa = add(mean(heatlens::abs(sub(out.spatial_recon_opt, optical))),
                   mean(heatlens::abs(sub(out.spatial_recon_sar, sar))));
    }
    if (toggles.cl) {
      lb.con = scale(add(cosine_distance(out.embed_opt_low, out.embed_opt_high),
                         cosine_distance(out.embed_sar_low, out.embed_sar_high)),
                     T(0.5));
    }
    // fixed order: con, spa, fre
    Tensor<T> total;
    if (toggles.cl) total = lb.con;
    if (toggles.sdr) total = total.defined() ? add(total, lb.spa) : lb.spa;
    if (toggles.fdr) total = total.defined() ? add(total, lb.fre) : lb.fre;
    lb.total = total;
    return lb;
  }

  // 1 - cos(a, b) with an epsilon inside the norms so zero vectors stay finite
  static Tensor<T> cosine_distance(const Tensor<T>& a, const Tensor<T>& b) {
    const Tensor<T> eps = Tensor<T>::scalar(T(1e-12));
    Tensor<T> na = heatlens::sqrt(add(sum(mul(a, a)), eps));
    Tensor<T> nb = heatlens::sqrt(add(sum(mul(b, b)), eps));
    Tensor<T> cos = div(sum(mul(a, b)), mul(na, nb));
    return sub(Tensor<T>::scalar(T(1)), cos);
  }

 private:
  static std::string key(const char* head, Modality m, const std::string& tail) {
    return std::string(head) + modality_tag(m) + tail;
  }

  static std::string block_prefix(std::size_t s, std::size_t b) {
    return "enc.s" + std::to_string(s) + ".b" + std::to_string(b) + ".";
  }

  static const Tensor<T>& at(const NamedTensors<T>& p, const std::string& name) {
    auto it = p.find(name);
    if (it == p.end()) fail_value("Model", "missing parameter '" + name + "'");
    return it->second;
  }

  static std::size_t next_width(std::size_t c) { return c / 2 >= 8 ? c / 2 : 8; }

  std::size_t count_ups(std::size_t from_h, std::size_t from_w) const {
    std::size_t ups = 0;
    std::size_t gh = from_h, gw = from_w;
    while (gh < cfg_.image_h && gw < cfg_.image_w) {
      gh *= 2;
      gw *= 2;
      ++ups;
    }
    if (gh != cfg_.image_h || gw != cfg_.image_w)
      fail_shape("Model", "image extent is not a power-of-two multiple of grid " +
                              std::to_string(from_h) + "x" + std::to_string(from_w));
    return ups;
  }

  ModelConfig cfg_;
  std::vector<SpectralPlan<T>> stage_plans_;
  SpectralPlan<T> image_plan_ = SpectralPlan<T>::make(2, 2);
  std::size_t ups_from_stage4_ = 0;
  std::size_t ups_from_stage3_ = 0;

 public:
  // widths of the decoder ladders, exposed for audits
  std::size_t frequency_decoder_steps() const { return ups_from_stage4_; }
  std::size_t spatial_decoder_steps() const { return ups_from_stage3_; }
};

}  // namespace heatlens
