#include "mvm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace mvm {

void ema_update(DualParams& dual) {
  if (!dual.online.congruent(dual.target)) {
    throw DimensionError("ema_update: online and target parameter sets are not congruent");
  }
  const double m = dual.momentum;
  for (size_t i = 0; i < dual.online.size(); ++i) {
    auto tgt = dual.target[i].value.data();
    const auto src = dual.online[i].value.data();
    for (size_t k = 0; k < tgt.size(); ++k) tgt[k] = m * tgt[k] + (1.0 - m) * src[k];
  }
}

AugmentRecord draw_augmentation(int src_h, int src_w, const AugmentConfig& config, Rng& rng) {
  AugmentRecord r;
  r.width = src_w;
  r.height = src_h;
  const double area = static_cast<double>(src_h) * src_w;
  const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target_area = area * rng.uniform(0.5, 1.0);
    const double aspect = std::exp(rng.uniform(log_lo, log_hi));
    const int w = static_cast<int>(std::lround(std::sqrt(target_area * aspect)));
    const int h = static_cast<int>(std::lround(std::sqrt(target_area / aspect)));
    if (w >= 1 && h >= 1 && w <= src_w && h <= src_h) {
      r.width = w;
      r.height = h;
      r.x0 = static_cast<int>(rng.below(static_cast<uint64_t>(src_w - w + 1)));
      r.y0 = static_cast<int>(rng.below(static_cast<uint64_t>(src_h - h + 1)));
      break;
    }
  }
  r.flip = rng.uniform() < 0.5;
  if (config.color_jitter) {
    r.brightness = rng.uniform(-0.2, 0.2);
    r.contrast = rng.uniform(0.8, 1.2);
  }
  return r;
}

Tensor hflip(const Tensor& frame) {
  const int64_t c = frame.size(0), h = frame.size(1), w = frame.size(2);
  std::vector<double> out(frame.values().size());
  const auto& v = frame.values();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        out[static_cast<size_t>((ch * h + y) * w + x)] = v[static_cast<size_t>((ch * h + y) * w + (w - 1 - x))];
  return Tensor::from(frame.shape(), std::move(out));
}

Tensor apply_augmentation(const Tensor& frame, const AugmentRecord& r, int out_size) {
  if (frame.dim() != 3) {
    throw DimensionError("apply_augmentation: expected [C,H,W], got " + to_string(frame.shape()));
  }
  const int64_t c = frame.size(0), h = frame.size(1), w = frame.size(2);
  if (r.x0 < 0 || r.y0 < 0 || r.width < 1 || r.height < 1 || r.x0 + r.width > w ||
      r.y0 + r.height > h) {
    throw std::invalid_argument("apply_augmentation: crop box outside the frame");
  }
  const auto& v = frame.values();
  std::vector<double> out(static_cast<size_t>(c * out_size * out_size));
  const double sy_scale = static_cast<double>(r.height) / out_size;
  const double sx_scale = static_cast<double>(r.width) / out_size;
  for (int oy = 0; oy < out_size; ++oy) {
    const double sy = std::clamp((oy + 0.5) * sy_scale - 0.5, 0.0, r.height - 1.0);
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, r.height - 1);
    const double fy = sy - y0;
    for (int ox = 0; ox < out_size; ++ox) {
      const double sx = std::clamp((ox + 0.5) * sx_scale - 0.5, 0.0, r.width - 1.0);
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, r.width - 1);
      const double fx = sx - x0;
      const int dst_x = r.flip ? out_size - 1 - ox : ox;
      for (int64_t ch = 0; ch < c; ++ch) {
        auto px = [&](int yy, int xx) {
          return v[static_cast<size_t>((ch * h + r.y0 + yy) * w + r.x0 + xx)];
        };
        double val = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x1)) +
                     fy * ((1 - fx) * px(y1, x0) + fx * px(y1, x1));
        if (r.brightness != 0.0 || r.contrast != 1.0) {
          val = std::clamp((val - 0.5) * r.contrast + 0.5 + r.brightness, 0.0, 1.0);
        }
        out[static_cast<size_t>((ch * out_size + oy) * out_size + dst_x)] = val;
      }
    }
  }
  return Tensor::from({c, out_size, out_size}, std::move(out));
}

AugmentedPair augment_pair(const Tensor& f1, const Tensor& f2, const AugmentConfig& config, Rng& rng) {
  if (f1.shape() != f2.shape()) {
    throw DimensionError("augment_pair: frames differ in shape " + to_string(f1.shape()) + " vs " +
                         to_string(f2.shape()));
  }
  AugmentedPair out;
  out.record = draw_augmentation(static_cast<int>(f1.size(1)), static_cast<int>(f1.size(2)), config, rng);
  out.frame1 = apply_augmentation(f1, out.record, config.out_size);
  out.frame2 = apply_augmentation(f2, out.record, config.out_size);
  return out;
}

RawPair sample_pair_indices(const std::vector<Sequence>& data, int gap, Rng& rng) {
  std::vector<size_t> eligible;
  for (size_t i = 0; i < data.size(); ++i)
    if (static_cast<int>(data[i].frames.size()) > gap) eligible.push_back(i);
  if (eligible.empty()) {
    throw DataError("no sequence has more than frame_gap=" + std::to_string(gap) + " frames");
  }
  RawPair p;
  p.sequence = eligible[rng.below(eligible.size())];
  const auto len = static_cast<int>(data[p.sequence].frames.size());
  p.index = static_cast<int>(rng.below(static_cast<uint64_t>(len - gap)));
  return p;
}

FramePair sample_pair(const std::vector<Sequence>& data, const TrainConfig& config, int grid, Rng& rng) {
  const RawPair raw = sample_pair_indices(data, config.frame_gap, rng);
  const Sequence& seq = data[raw.sequence];
  const Tensor& a = seq.frames[static_cast<size_t>(raw.index)];
  const Tensor& b = seq.frames[static_cast<size_t>(raw.index + config.frame_gap)];

  FramePair pair;
  pair.gap = config.frame_gap;
  pair.sequence = seq.name;
  pair.index = raw.index;
  const AugmentConfig aug{config.image_size, config.color_jitter};
  if (config.shared_augmentation) {
    AugmentedPair ap = augment_pair(a, b, aug, rng);
    pair.frame1 = ap.frame1;
    pair.frame2 = ap.frame2;
    pair.record1 = pair.record2 = ap.record;
  } else {
    pair.record1 = draw_augmentation(static_cast<int>(a.size(1)), static_cast<int>(a.size(2)), aug, rng);
    pair.record2 = draw_augmentation(static_cast<int>(b.size(1)), static_cast<int>(b.size(2)), aug, rng);
    pair.frame1 = apply_augmentation(a, pair.record1, config.image_size);
    pair.frame2 = apply_augmentation(b, pair.record2, config.image_size);
  }
  if (config.symmetric_masking) {
    pair.mask1 = std::make_shared<const MaskGrid>(sample_mask(grid, grid, config.mask_ratio, rng));
    pair.mask2 = pair.mask1;
  } else {
    auto [m1, m2] = asymmetric_pair(grid, grid, config.mask_ratio, rng);
    pair.mask1 = std::make_shared<const MaskGrid>(std::move(m1));
    pair.mask2 = std::make_shared<const MaskGrid>(std::move(m2));
  }
  return pair;
}

Tensor stack_frames(const std::vector<Tensor>& frames) {
  if (frames.empty()) throw DimensionError("stack_frames: empty batch");
  const Shape one = frames.front().shape();
  std::vector<double> data;
  data.reserve(frames.size() * static_cast<size_t>(frames.front().numel()));
  for (const auto& f : frames) {
    if (f.shape() != one) throw DimensionError("stack_frames: frames differ in shape");
    data.insert(data.end(), f.values().begin(), f.values().end());
  }
  Shape shape{static_cast<int64_t>(frames.size())};
  shape.insert(shape.end(), one.begin(), one.end());
  return Tensor::from(std::move(shape), std::move(data));
}

BranchOutput run_branch(const MaskedConvAutoencoder& model, const ParamSet& params,
                        const Tensor& frames, const std::vector<MaskGrid>& masks, bool norm_pix_loss) {
  const EncoderOutput enc = model.encode(frames, masks, params);
  BranchOutput out;
  out.pred = model.decode(enc.latent(), masks, params);
  out.targets = patchify_targets(frames, model.config().decoder.patch_size, norm_pix_loss);
  return out;
}

Trainer::Trainer(RunConfig config) : config_(std::move(config)), model_(config_.model) {
  config_.validate();
  Rng init(config_.train.seed);
  state_.dual.online = model_.init_params(init);
  state_.dual.target = state_.dual.online.clone(false);
  state_.dual.momentum = config_.train.momentum;
  state_.optimizer = AdamWState::zeros_like(state_.dual.online);
  state_.rng = Rng(config_.train.seed ^ 0x9E3779B97F4A7C15ULL);
}

std::vector<FramePair> Trainer::next_batch(const std::vector<Sequence>& data) {
  const int grid = model_.grid_extent(config_.train.image_size);
  std::vector<FramePair> batch;
  batch.reserve(static_cast<size_t>(config_.train.batch_size));
  for (int i = 0; i < config_.train.batch_size; ++i) {
    batch.push_back(sample_pair(data, config_.train, grid, state_.rng));
  }
  return batch;
}

double Trainer::current_lr() const {
  return lr_at(std::min(state_.step, config_.train.total_steps()), config_.train);
}

LossReport Trainer::train_step(const std::vector<FramePair>& batch) {
  const TrainConfig& tc = config_.train;
  set_precision(tc.precision);
  std::vector<Tensor> f1, f2;
  std::vector<MaskGrid> m1, m2;
  for (const auto& p : batch) {
    f1.push_back(p.frame1);
    f2.push_back(p.frame2);
    m1.push_back(*p.mask1);
    m2.push_back(*p.mask2);
  }
  const Tensor frames1 = stack_frames(f1);
  const Tensor frames2 = stack_frames(f2);

  ParamSet& online = state_.dual.online;
  online.zero_grad();
  const BranchOutput on = run_branch(model_, online, frames1, m1, tc.norm_pix_loss);
  BranchOutput tg;
  {
    NoGradGuard no_grad;
    tg = run_branch(model_, state_.dual.target, frames2, m2, tc.norm_pix_loss);
  }

  const double gamma = tc.use_consistency ? tc.gamma : 0.0;
  const Tensor lo = online_loss(on.targets, on.pred, m1);
  const Tensor lt = target_loss(tg.targets, tg.pred, m2);
  Tensor lc;
  if (gamma > 0.0) {
    lc = consistency_loss(on.pred, tg.pred, m1, m2, tc.symmetric_masking);
  } else {
    NoGradGuard no_grad;
    lc = consistency_loss(on.pred.detach(), tg.pred, m1, m2, tc.symmetric_masking);
  }
  const LossReport report = total_loss(lo.item(), lt.item(), lc.item(), gamma);
  if (!std::isfinite(report.l_online) || !std::isfinite(report.l_target) ||
      !std::isfinite(report.l_consistency)) {
    throw NumericError("non-finite loss at step " + std::to_string(state_.step + 1) +
                       ": l_online=" + std::to_string(report.l_online) +
                       " l_target=" + std::to_string(report.l_target) +
                       " l_consistency=" + std::to_string(report.l_consistency));
  }

  const Tensor objective = gamma > 0.0 ? add(lo, scale(lc, gamma)) : lo;
  objective.backward();
  adamw_update(online, state_.optimizer, current_lr(), tc.betas[0], tc.betas[1], tc.weight_decay);
  ema_update(state_.dual);
  ++state_.step;
  return report;
}

void Trainer::restore(TrainerState state) {
  Rng probe(0);
  const ParamSet reference = model_.init_params(probe);
  if (!reference.congruent(state.dual.online) || !reference.congruent(state.dual.target)) {
    throw DimensionError("restore: parameter tables do not match the configured architecture");
  }
  if (state.optimizer.m.size() != reference.size() || state.optimizer.v.size() != reference.size()) {
    throw DimensionError("restore: optimizer state does not match the parameter table");
  }
  for (size_t i = 0; i < reference.size(); ++i) {
    const auto n = static_cast<size_t>(reference[i].value.numel());
    if (state.optimizer.m[i].size() != n || state.optimizer.v[i].size() != n) {
      throw DimensionError("restore: optimizer moments for " + reference[i].name + " have wrong size");
    }
    state.dual.online[i].decay = reference[i].decay;
    state.dual.target[i].decay = reference[i].decay;
    state.dual.online[i].value.set_requires_grad(true);
    state.dual.target[i].value.set_requires_grad(false);
  }
  state.dual.momentum = config_.train.momentum;
  state_ = std::move(state);
}

}  // namespace mvm
