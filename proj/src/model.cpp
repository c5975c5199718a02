#include "mvm/model.hpp"

#include <algorithm>
#include <cmath>

namespace mvm {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kNormEps = 1e-6;
constexpr int kDepthwiseKernel = 7;
constexpr int kExpansion = 4;

Tensor trunc_normal(Shape shape, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(numel_of(shape)));
  for (auto& x : v) x = rng.truncated_normal(kInitStd);
  return Tensor::from(std::move(shape), std::move(v), true);
}

void add_conv(ParamSet& ps, const std::string& name, int out, int in_per_group, int k, Rng& rng) {
  ps.add(name + ".weight", trunc_normal({out, in_per_group, k, k}, rng), true);
  ps.add(name + ".bias", Tensor::zeros({out}, true), false);
}

void add_norm(ParamSet& ps, const std::string& name, int channels, double gamma_init) {
  ps.add(name + ".gamma", Tensor::full({channels}, gamma_init, true), false);
  ps.add(name + ".beta", Tensor::zeros({channels}, true), false);
}

void add_block(ParamSet& ps, const std::string& p, int c, BlockKind kind, Rng& rng) {
  if (kind == BlockKind::basic_residual) {
    add_conv(ps, p + ".conv1", c, c, 3, rng);
    add_norm(ps, p + ".norm", c, 1.0);
    add_conv(ps, p + ".conv2", c, c, 3, rng);
    return;
  }
  add_conv(ps, p + ".dw", c, 1, kDepthwiseKernel, rng);
  add_norm(ps, p + ".norm", c, 1.0);
  add_conv(ps, p + ".pw1", kExpansion * c, c, 1, rng);
  if (kind == BlockKind::convnext_v2) add_norm(ps, p + ".grn", kExpansion * c, 0.0);
  add_conv(ps, p + ".pw2", c, kExpansion * c, 1, rng);
}

struct Weights {
  const ParamSet& ps;
  const std::string& prefix;
  const Tensor& operator()(const char* suffix) const { return ps.get(prefix + suffix); }
};

SparseActivation sparse_block(const SparseActivation& x, const ParamSet& ps, const std::string& p,
                              BlockKind kind) {
  Weights w{ps, p};
  const int c = static_cast<int>(x.dense.size(1));
  if (kind == BlockKind::basic_residual) {
    auto y = sparse_conv2d(x, w(".conv1.weight"), w(".conv1.bias"), 1, 1);
    y = sparse_layer_norm(y, w(".norm.gamma"), w(".norm.beta"), kNormEps);
    y = sparse_gelu(y);
    y = sparse_conv2d(y, w(".conv2.weight"), w(".conv2.bias"), 1, 1);
    return sparse_add(x, y);
  }
  auto y = sparse_conv2d(x, w(".dw.weight"), w(".dw.bias"), 1, kDepthwiseKernel / 2, c);
  y = sparse_layer_norm(y, w(".norm.gamma"), w(".norm.beta"), kNormEps);
  y = sparse_conv2d(y, w(".pw1.weight"), w(".pw1.bias"), 1, 0);
  y = sparse_gelu(y);
  if (kind == BlockKind::convnext_v2) y = sparse_grn(y, w(".grn.gamma"), w(".grn.beta"));
  y = sparse_conv2d(y, w(".pw2.weight"), w(".pw2.bias"), 1, 0);
  return sparse_add(x, y);
}

Tensor dense_block(const Tensor& x, const ParamSet& ps, const std::string& p, BlockKind kind) {
  Weights w{ps, p};
  const int c = static_cast<int>(x.size(1));
  if (kind == BlockKind::basic_residual) {
    Tensor y = conv2d(x, w(".conv1.weight"), w(".conv1.bias"), 1, 1);
    y = layer_norm_channels(y, w(".norm.gamma"), w(".norm.beta"), kNormEps);
    y = gelu(y);
    y = conv2d(y, w(".conv2.weight"), w(".conv2.bias"), 1, 1);
    return add(x, y);
  }
  Tensor y = conv2d(x, w(".dw.weight"), w(".dw.bias"), 1, kDepthwiseKernel / 2, c);
  y = layer_norm_channels(y, w(".norm.gamma"), w(".norm.beta"), kNormEps);
  y = conv2d(y, w(".pw1.weight"), w(".pw1.bias"), 1, 0);
  y = gelu(y);
  if (kind == BlockKind::convnext_v2) y = grn(y, w(".grn.gamma"), w(".grn.beta"));
  y = conv2d(y, w(".pw2.weight"), w(".pw2.bias"), 1, 0);
  return add(x, y);
}

std::string stage_name(int s) { return "enc.stage" + std::to_string(s); }

}  // namespace

std::string to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::convnext_v2: return "convnext_v2";
    case BlockKind::convnext_v1: return "convnext_v1";
    case BlockKind::basic_residual: return "basic_residual";
  }
  return "?";
}

BlockKind parse_block_kind(const std::string& text) {
  if (text == "convnext_v2") return BlockKind::convnext_v2;
  if (text == "convnext_v1") return BlockKind::convnext_v1;
  if (text == "basic_residual") return BlockKind::basic_residual;
  throw ConfigError("unknown block_kind '" + text + "'");
}

int EncoderConfig::total_downsampling() const { return stride_at(num_stages() - 1); }

int EncoderConfig::stride_at(int stage) const {
  int s = stem_factor;
  for (int i = 1; i <= stage; ++i) s *= downsample_factor_per_stage;
  return s;
}

void EncoderConfig::validate() const {
  if (stem_factor < 1) throw ConfigError("stem_factor must be >= 1");
  if (downsample_factor_per_stage < 1) throw ConfigError("downsample_factor_per_stage must be >= 1");
  if (stage_depths.empty()) throw ConfigError("stage_depths must list at least one stage");
  if (stage_depths.size() != stage_widths.size()) {
    throw ConfigError("stage_depths and stage_widths must have equal length");
  }
  for (int d : stage_depths)
    if (d < 0) throw ConfigError("stage_depths entries must be >= 0");
  for (int w : stage_widths)
    if (w < 1) throw ConfigError("stage_widths entries must be >= 1");
}

void DecoderConfig::validate() const {
  if (depth < 1) throw ConfigError("decoder depth must be >= 1");
  if (width < 1) throw ConfigError("decoder width must be >= 1");
  if (patch_size < 1) throw ConfigError("patch_size must be >= 1");
  if (out_channels < 1) throw ConfigError("out_channels must be >= 1");
}

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (decoder.patch_size != encoder.total_downsampling()) {
    throw ConfigError("patch_size " + std::to_string(decoder.patch_size) +
                      " must equal the encoder's total downsampling " +
                      std::to_string(encoder.total_downsampling()));
  }
}

MaskedConvAutoencoder::MaskedConvAutoencoder(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
}

ParamSet MaskedConvAutoencoder::init_params(Rng& rng) const {
  const auto& enc = config_.encoder;
  const auto& dec = config_.decoder;
  ParamSet ps;
  add_conv(ps, "enc.stem", enc.stage_widths[0], 3, enc.stem_factor, rng);
  add_norm(ps, "enc.stem_norm", enc.stage_widths[0], 1.0);
  for (int s = 0; s < enc.num_stages(); ++s) {
    const int c = enc.stage_widths[static_cast<size_t>(s)];
    if (s > 0) {
      add_norm(ps, stage_name(s) + ".down_norm", enc.stage_widths[static_cast<size_t>(s - 1)], 1.0);
      add_conv(ps, stage_name(s) + ".down", c, enc.stage_widths[static_cast<size_t>(s - 1)],
               enc.downsample_factor_per_stage, rng);
    }
    for (int b = 0; b < enc.stage_depths[static_cast<size_t>(s)]; ++b) {
      add_block(ps, stage_name(s) + ".block" + std::to_string(b), c, enc.block_kind, rng);
    }
  }
  add_conv(ps, "dec.proj", dec.width, enc.stage_widths.back(), 1, rng);
  ps.add("dec.mask_token", trunc_normal({dec.width}, rng), false);
  for (int b = 0; b < dec.depth; ++b) {
    add_block(ps, "dec.block" + std::to_string(b), dec.width, BlockKind::convnext_v1, rng);
  }
  add_conv(ps, "dec.head", dec.patch_size * dec.patch_size * dec.out_channels, dec.width, 1, rng);
  return ps;
}

int MaskedConvAutoencoder::grid_extent(int64_t pixels) const {
  const int total = config_.encoder.total_downsampling();
  if (pixels % total != 0 || pixels == 0) {
    throw ConfigError("input extent " + std::to_string(pixels) +
                      " is not divisible by total downsampling " + std::to_string(total));
  }
  return static_cast<int>(pixels / total);
}

void MaskedConvAutoencoder::check_frames(const Tensor& frames) const {
  if (frames.dim() != 4 || frames.size(1) != 3) {
    throw DimensionError("frames must be [N,3,H,W], got " + to_string(frames.shape()));
  }
  grid_extent(frames.size(2));
  grid_extent(frames.size(3));
}

EncoderOutput MaskedConvAutoencoder::encode(const Tensor& frames, const std::vector<MaskGrid>& masks,
                                            const ParamSet& params) const {
  check_frames(frames);
  const auto& enc = config_.encoder;
  const int gh = grid_extent(frames.size(2)), gw = grid_extent(frames.size(3));
  if (static_cast<int64_t>(masks.size()) != frames.size(0)) {
    throw DimensionError("encode: " + std::to_string(masks.size()) + " masks for batch of " +
                         std::to_string(frames.size(0)));
  }
  for (const auto& m : masks) {
    if (m.grid_h != gh || m.grid_w != gw) {
      throw ConfigError("encode: mask grid " + std::to_string(m.grid_h) + "x" +
                        std::to_string(m.grid_w) + " does not match final stage " +
                        std::to_string(gh) + "x" + std::to_string(gw));
    }
  }

  SiteMask pixel_mask = SiteMask::from_grids(masks, static_cast<int>(frames.size(2)),
                                             static_cast<int>(frames.size(3)));
  SparseActivation x = make_sparse(frames, pixel_mask);
  x = downsample_conv(x, params.get("enc.stem.weight"), params.get("enc.stem.bias"), enc.stem_factor);
  x = sparse_layer_norm(x, params.get("enc.stem_norm.gamma"), params.get("enc.stem_norm.beta"),
                        kNormEps);

  EncoderOutput out;
  for (int s = 0; s < enc.num_stages(); ++s) {
    const std::string p = stage_name(s);
    if (s > 0) {
      x = sparse_layer_norm(x, params.get(p + ".down_norm.gamma"), params.get(p + ".down_norm.beta"),
                            kNormEps);
      x = downsample_conv(x, params.get(p + ".down.weight"), params.get(p + ".down.bias"),
                          enc.downsample_factor_per_stage);
    }
    for (int b = 0; b < enc.stage_depths[static_cast<size_t>(s)]; ++b) {
      x = sparse_block(x, params, p + ".block" + std::to_string(b), enc.block_kind);
    }
    out.stages.push_back(x);
  }
  return out;
}

std::vector<Tensor> MaskedConvAutoencoder::encode_dense(const Tensor& frames,
                                                        const ParamSet& params) const {
  check_frames(frames);
  const auto& enc = config_.encoder;
  Tensor x = conv2d(frames, params.get("enc.stem.weight"), params.get("enc.stem.bias"),
                    enc.stem_factor, 0);
  x = layer_norm_channels(x, params.get("enc.stem_norm.gamma"), params.get("enc.stem_norm.beta"),
                          kNormEps);
  std::vector<Tensor> stages;
  for (int s = 0; s < enc.num_stages(); ++s) {
    const std::string p = stage_name(s);
    if (s > 0) {
      x = layer_norm_channels(x, params.get(p + ".down_norm.gamma"),
                              params.get(p + ".down_norm.beta"), kNormEps);
      x = conv2d(x, params.get(p + ".down.weight"), params.get(p + ".down.bias"),
                 enc.downsample_factor_per_stage, 0);
    }
    for (int b = 0; b < enc.stage_depths[static_cast<size_t>(s)]; ++b) {
      x = dense_block(x, params, p + ".block" + std::to_string(b), enc.block_kind);
    }
    stages.push_back(x);
  }
  return stages;
}

Tensor MaskedConvAutoencoder::decode(const SparseActivation& latent,
                                     const std::vector<MaskGrid>& masks,
                                     const ParamSet& params) const {
  const auto& dec = config_.decoder;
  const int gh = static_cast<int>(latent.dense.size(2)), gw = static_cast<int>(latent.dense.size(3));
  if (static_cast<int64_t>(masks.size()) != latent.dense.size(0)) {
    throw DimensionError("decode: mask count does not match batch");
  }
  for (const auto& m : masks) {
    if (m.grid_h != gh || m.grid_w != gw) {
      throw DimensionError("decode: latent resolution " + std::to_string(gh) + "x" +
                           std::to_string(gw) + " does not match mask grid " +
                           std::to_string(m.grid_h) + "x" + std::to_string(m.grid_w));
    }
  }
  SiteMask grid_mask = SiteMask::from_grids(masks, gh, gw);
  Tensor x = conv2d(select_sites(latent.dense, grid_mask.visible()), params.get("dec.proj.weight"),
                    params.get("dec.proj.bias"));
  x = fill_sites(x, params.get("dec.mask_token"), grid_mask.visible());
  for (int b = 0; b < dec.depth; ++b) {
    x = dense_block(x, params, "dec.block" + std::to_string(b), BlockKind::convnext_v1);
  }
  x = conv2d(x, params.get("dec.head.weight"), params.get("dec.head.bias"));
  return channels_to_rows(x);
}

Tensor patchify_targets(const Tensor& frames, int patch_size, bool normalize, double eps) {
  if (frames.dim() != 4) {
    throw DimensionError("patchify_targets: expected [N,C,H,W], got " + to_string(frames.shape()));
  }
  const int64_t n = frames.size(0), c = frames.size(1), h = frames.size(2), w = frames.size(3);
  const int64_t p = patch_size;
  if (p < 1 || h % p != 0 || w % p != 0) {
    throw DimensionError("patchify_targets: " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by patch size " + std::to_string(p));
  }
  const int64_t gh = h / p, gw = w / p, d = p * p * c;
  const auto& v = frames.values();
  std::vector<double> out(static_cast<size_t>(n * gh * gw * d));
  for (int64_t b = 0; b < n; ++b)
    for (int64_t gy = 0; gy < gh; ++gy)
      for (int64_t gx = 0; gx < gw; ++gx) {
        double* row = out.data() + ((b * gh + gy) * gw + gx) * d;
        for (int64_t py = 0; py < p; ++py)
          for (int64_t px = 0; px < p; ++px)
            for (int64_t ch = 0; ch < c; ++ch)
              row[(py * p + px) * c + ch] =
                  v[static_cast<size_t>(((b * c + ch) * h + gy * p + py) * w + gx * p + px)];
        if (!normalize) continue;
        // A flat patch has zero variance; its mean can still round away from
        // the common value, so set it to zero directly.
        if (std::all_of(row + 1, row + d, [&](double x) { return x == row[0]; })) {
          std::fill(row, row + d, 0.0);
          continue;
        }
        double mean = 0.0;
        for (int64_t k = 0; k < d; ++k) mean += row[k];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t k = 0; k < d; ++k) var += (row[k] - mean) * (row[k] - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t k = 0; k < d; ++k) row[k] = (row[k] - mean) * inv;
      }
  return Tensor::from({n, gh * gw, d}, std::move(out));
}

Tensor unpatchify(const Tensor& rows, int patch_size, int channels, int height, int width) {
  const int64_t p = patch_size, c = channels, h = height, w = width;
  if (rows.dim() != 3 || h % p != 0 || w % p != 0 || rows.size(1) != (h / p) * (w / p) ||
      rows.size(2) != p * p * c) {
    throw DimensionError("unpatchify: rows " + to_string(rows.shape()) + " incompatible with " +
                         std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w));
  }
  const int64_t n = rows.size(0), gw = w / p, d = p * p * c;
  const auto& v = rows.values();
  std::vector<double> out(static_cast<size_t>(n * c * h * w));
  for (int64_t b = 0; b < n; ++b)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        for (int64_t ch = 0; ch < c; ++ch) {
          const int64_t g = (y / p) * gw + x / p;
          const int64_t k = ((y % p) * p + x % p) * c + ch;
          out[static_cast<size_t>(((b * c + ch) * h + y) * w + x)] =
              v[static_cast<size_t>((b * (h / p) * gw + g) * d + k)];
        }
  return Tensor::from({n, c, h, w}, std::move(out));
}

Reconstruction reconstruct(const MaskedConvAutoencoder& model, const ParamSet& params,
                           const Tensor& frames, const std::vector<MaskGrid>& masks,
                           bool norm_pix_loss, double eps) {
  NoGradGuard no_grad;
  const int p = model.config().decoder.patch_size;
  const int c = static_cast<int>(frames.size(1));
  const int h = static_cast<int>(frames.size(2)), w = static_cast<int>(frames.size(3));
  const Tensor pred = model.decode(model.encode(frames, masks, params).latent(), masks, params);
  const Tensor raw = patchify_targets(frames, p, false);
  const int64_t n = raw.size(0), g = raw.size(1), d = raw.size(2);
  std::vector<double> masked = raw.values();
  std::vector<double> recon = raw.values();
  const auto& pv = pred.values();
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t r = 0; r < g; ++r) {
      if (masks[static_cast<size_t>(b)].visible[static_cast<size_t>(r)]) continue;
      const size_t off = static_cast<size_t>((b * g + r) * d);
      double mean = 0.0, var = 0.0;
      if (norm_pix_loss) {
        for (int64_t k = 0; k < d; ++k) mean += recon[off + static_cast<size_t>(k)];
        mean /= static_cast<double>(d);
        for (int64_t k = 0; k < d; ++k) {
          const double dv = recon[off + static_cast<size_t>(k)] - mean;
          var += dv * dv;
        }
        var /= static_cast<double>(d);
      }
      const double scale = norm_pix_loss ? std::sqrt(var + eps) : 1.0;
      for (int64_t k = 0; k < d; ++k) {
        const size_t i = off + static_cast<size_t>(k);
        recon[i] = std::clamp(pv[i] * scale + mean, 0.0, 1.0);
        masked[i] = 0.5;
      }
    }
  }
  return {unpatchify(Tensor::from(raw.shape(), std::move(masked)), p, c, h, w),
          unpatchify(Tensor::from(raw.shape(), std::move(recon)), p, c, h, w)};
}

}  // namespace mvm
