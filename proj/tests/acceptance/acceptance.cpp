// Acceptance suite. `mvm_acceptance [N...]` runs the listed criteria (all
// when none are given) and prints one PASS/FAIL line per criterion. The exit
// status is nonzero when any selected criterion fails.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mvm/checkpoint.hpp"
#include "mvm/config.hpp"
#include "mvm/eval.hpp"
#include "mvm/ops.hpp"
#include "mvm/trainer.hpp"

using namespace mvm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

bool same_bits(double a, double b) { return std::bit_cast<uint64_t>(a) == std::bit_cast<uint64_t>(b); }

bool same_bits(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (!same_bits(a[i], b[i])) return false;
  return true;
}

RunConfig desk_config(const std::map<std::string, std::string>& overrides = {}) {
  return load_run_config(fs::path(MVM_SOURCE_DIR) / "configs" / "desk.cfg", overrides);
}

void perturb(ParamSet& params, Rng& rng, double scale) {
  for (size_t i = 0; i < params.size(); ++i)
    for (auto& v : params[i].value.data()) v += scale * rng.normal();
}

// Randomizes the tensors that initialize to constants (biases, norm affines,
// GRN, mask token); large weight matrices are already random after init.
void perturb_small(ParamSet& params, Rng& rng, double scale) {
  for (size_t i = 0; i < params.size(); ++i)
    if (params[i].value.numel() <= 4096)
      for (auto& v : params[i].value.data()) v += scale * rng.normal();
}

Tensor uniform_frames(int n, int size, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(n) * 3 * size * size);
  for (auto& x : v) x = rng.uniform();
  return Tensor::from({n, 3, size, size}, std::move(v));
}

bool pixel_masked(const MaskGrid& m, int patch, int y, int x) { return !m.is_visible(y / patch, x / patch); }

std::vector<double> flat_values(const ParamSet& p) {
  std::vector<double> out;
  for (const auto& e : p) out.insert(out.end(), e.value.values().begin(), e.value.values().end());
  return out;
}

std::vector<double> flat_grads(const ParamSet& p) {
  std::vector<double> out;
  for (const auto& e : p) {
    if (e.value.has_grad()) {
      out.insert(out.end(), e.value.grad().begin(), e.value.grad().end());
    } else {
      out.insert(out.end(), static_cast<size_t>(e.value.numel()), 0.0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// 1. No leakage from masked pixels.

struct LeakSnapshot {
  std::vector<std::vector<double>> activations;  // every stage of both branches, then both predictions
  std::vector<double> losses;
  std::vector<double> input_grad;
  std::vector<double> param_grads;
};

Outcome criterion1() {
  set_precision(Precision::f64);
  const RunConfig cfg = desk_config();
  const MaskedConvAutoencoder model(cfg.model);
  const int size = cfg.train.image_size, patch = cfg.model.decoder.patch_size;
  const int grid = model.grid_extent(size);
  const bool norm = cfg.train.norm_pix_loss;
  int failures = 0, masked_nonzero = 0;
  std::string first_failure;

  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(1000 + static_cast<uint64_t>(trial));
    ParamSet online = model.init_params(rng);
    perturb_small(online, rng, 0.02);
    ParamSet target = online.clone(false);
    perturb_small(target, rng, 0.02);
    const double ratio = rng.uniform(0.1, 0.95);
    const bool symmetric = trial % 2 == 0;
    const MaskGrid m1 = sample_mask(grid, grid, ratio, rng);
    const MaskGrid m2 = symmetric ? m1 : sample_mask(grid, grid, ratio, rng);
    const Tensor clean1 = uniform_frames(1, size, rng), clean2 = uniform_frames(1, size, rng);
    const Tensor targets1 = patchify_targets(clean1, patch, norm);
    const Tensor targets2 = patchify_targets(clean2, patch, norm);

    auto corrupt = [&](const Tensor& clean, const MaskGrid& m) {
      std::vector<double> v = clean.values();
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x)
            if (pixel_masked(m, patch, y, x)) v[static_cast<size_t>((c * size + y) * size + x)] = 1e6 * rng.normal();
      return Tensor::from(clean.shape(), std::move(v));
    };

    auto run = [&](const Tensor& in1, const Tensor& in2) {
      LeakSnapshot s;
      Tensor x1 = Tensor::from(in1.shape(), in1.values(), true);
      online.zero_grad();
      const EncoderOutput e1 = model.encode(x1, {m1}, online);
      const Tensor p1 = model.decode(e1.latent(), {m1}, online);
      EncoderOutput e2;
      Tensor p2;
      {
        NoGradGuard no_grad;
        e2 = model.encode(in2, {m2}, target);
        p2 = model.decode(e2.latent(), {m2}, target);
      }
      for (const EncoderOutput* enc : {&e1, static_cast<const EncoderOutput*>(&e2)})
        for (const auto& st : enc->stages) {
          s.activations.push_back(st.dense.values());
          // Masked sites carry exact +0.0.
          const int64_t c = st.dense.size(1), h = st.dense.size(2), w = st.dense.size(3);
          for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t y = 0; y < h; ++y)
              for (int64_t x = 0; x < w; ++x)
                if (!st.mask.is_visible(0, static_cast<int>(y), static_cast<int>(x)) &&
                    std::bit_cast<uint64_t>(st.dense.values()[static_cast<size_t>((ch * h + y) * w + x)]) != 0)
                  ++masked_nonzero;
        }
      s.activations.push_back(p1.values());
      s.activations.push_back(p2.values());
      const Tensor lo = online_loss(targets1, p1, {m1});
      const Tensor lt = target_loss(targets2, p2, {m2});
      const Tensor lc = consistency_loss(p1, p2, {m1}, {m2}, symmetric);
      const LossReport r = total_loss(lo.item(), lt.item(), lc.item(), cfg.train.gamma);
      s.losses = {r.l_online, r.l_target, r.l_consistency, r.l_total};
      add(lo, scale(lc, cfg.train.gamma)).backward();
      s.input_grad.assign(x1.grad().begin(), x1.grad().end());
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x)
            if (pixel_masked(m1, patch, y, x) &&
                std::bit_cast<uint64_t>(s.input_grad[static_cast<size_t>((c * size + y) * size + x)]) != 0)
              ++masked_nonzero;
      s.param_grads = flat_grads(online);
      return s;
    };

    const LeakSnapshot a = run(clean1, clean2);
    const LeakSnapshot b = run(corrupt(clean1, m1), corrupt(clean2, m2));
    std::string what;
    for (size_t i = 0; i < a.activations.size() && what.empty(); ++i)
      if (!same_bits(a.activations[i], b.activations[i])) what = "activation block " + std::to_string(i);
    if (what.empty() && !same_bits(a.losses, b.losses)) what = "loss values";
    if (what.empty() && !same_bits(a.input_grad, b.input_grad)) what = "input gradient";
    if (what.empty() && !same_bits(a.param_grads, b.param_grads)) what = "parameter gradients";
    if (!what.empty()) {
      ++failures;
      if (first_failure.empty()) first_failure = fmt("trial %d: %s changed", trial, what.c_str());
    }
  }
  const bool pass = failures == 0 && masked_nonzero == 0;
  return {pass, fmt("100 triples, %d changed, %d nonzero masked entries%s%s", failures, masked_nonzero,
                    first_failure.empty() ? "" : "; first: ", first_failure.c_str())};
}

// ---------------------------------------------------------------------------
// 2. Sparse all-visible forward equals the dense export.

Outcome criterion2() {
  set_precision(Precision::f64);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    Rng rng(2000 + static_cast<uint64_t>(i));
    ModelConfig mc;
    mc.encoder.block_kind = static_cast<BlockKind>(i % 3);
    mc.encoder.stem_factor = rng.below(2) ? 4 : 2;
    const int stages = 1 + static_cast<int>(rng.below(3));
    mc.encoder.stage_depths.clear();
    mc.encoder.stage_widths.clear();
    for (int s = 0; s < stages; ++s) {
      mc.encoder.stage_depths.push_back(1 + static_cast<int>(rng.below(2)));
      mc.encoder.stage_widths.push_back(8 * (1 + static_cast<int>(rng.below(4))));
    }
    mc.decoder.width = 16;
    mc.decoder.patch_size = mc.encoder.total_downsampling();
    const MaskedConvAutoencoder model(mc);
    ParamSet params = model.init_params(rng);
    perturb(params, rng, 0.05);
    const int batch = 1 + static_cast<int>(rng.below(2));
    const int grid = 2 + static_cast<int>(rng.below(3));
    const int size = grid * mc.decoder.patch_size;
    const Tensor frames = uniform_frames(batch, size, rng);
    const std::vector<MaskGrid> all(static_cast<size_t>(batch),
                                    MaskGrid{grid, grid, std::vector<uint8_t>(static_cast<size_t>(grid * grid), 1)});
    NoGradGuard no_grad;
    const EncoderOutput sparse = model.encode(frames, all, params);
    const std::vector<Tensor> dense = model.encode_dense(frames, params);
    for (size_t s = 0; s < dense.size(); ++s) {
      const auto& a = sparse.stages[s].dense.values();
      const auto& b = dense[s].values();
      if (a.size() != b.size()) return {false, fmt("parameterization %d: stage %zu shape differs", i, s + 1)};
      for (size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
    }
  }
  return {worst <= 1e-12, fmt("50 parameterizations, max |sparse - dense| = %.3g (limit 1e-12)", worst)};
}

// ---------------------------------------------------------------------------
// 3. Backprop against central finite differences on every parameter element.

Outcome criterion3() {
  set_precision(Precision::f64);
  // Narrow widths keep an every-element sweep inside the time budget; the
  // block structure is the desk one.
  ModelConfig mc;
  mc.encoder.stage_depths = {1, 1};
  mc.encoder.stage_widths = {8, 16};
  mc.decoder.width = 16;
  const MaskedConvAutoencoder model(mc);
  Rng rng(3000);
  ParamSet online = model.init_params(rng);
  perturb(online, rng, 0.05);
  ParamSet target = online.clone(false);
  perturb(target, rng, 0.05);
  const int size = 16, patch = mc.decoder.patch_size, grid = model.grid_extent(size);
  const Tensor f1 = uniform_frames(1, size, rng), f2 = uniform_frames(1, size, rng);
  const MaskGrid mask = sample_mask(grid, grid, 0.5, rng);
  const std::vector<MaskGrid> masks{mask};
  const double gamma = 1.0;

  BranchOutput tg;
  {
    NoGradGuard no_grad;
    tg = run_branch(model, target, f2, masks, true);
  }
  const double lt = target_loss(tg.targets, tg.pred, masks).item();
  auto objective = [&] {
    const BranchOutput on = run_branch(model, online, f1, masks, true);
    const Tensor lo = online_loss(on.targets, on.pred, masks);
    const Tensor lc = consistency_loss(on.pred, tg.pred, masks, masks, true);
    return std::pair{add(lo, scale(lc, gamma)), total_loss(lo.item(), lt, lc.item(), gamma).l_total};
  };

  online.zero_grad();
  objective().first.backward();
  const std::vector<double> analytic = flat_grads(online);

  // Central differences carry ~1e-11 of rounding noise here, so relative
  // error is measured against max(|analytic|, |numeric|, 1e-7).
  const double h = 1e-5, floor = 1e-7;
  double worst = 0.0;
  std::string worst_name;
  size_t k = 0, below_floor = 0, both_zero = 0;
  NoGradGuard no_grad;
  for (size_t p = 0; p < online.size(); ++p) {
    auto data = online[p].value.data();
    for (size_t i = 0; i < data.size(); ++i, ++k) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = objective().second;
      data[i] = keep - h;
      const double down = objective().second;
      data[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      if (analytic[k] == 0.0 && numeric == 0.0) {
        ++both_zero;
        continue;
      }
      const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), floor});
      below_floor += denom == floor;
      const double err = std::abs(analytic[k] - numeric) / denom;
      if (err > worst) {
        worst = err;
        worst_name = online[p].name + "[" + std::to_string(i) + "]" + fmt(" a=%.6g n=%.6g", analytic[k], numeric);
      }
    }
  }
  return {worst < 1e-3, fmt("%zu elements in %zu tensors, max rel err %.3g at %s (limit 1e-3, h=1e-5); "
                            "%zu exact zeros on both sides, denominator floor 1e-7 used for %zu",
                            k, online.size(), worst, worst_name.c_str(), both_zero, below_floor)};
}

// ---------------------------------------------------------------------------
// 4. Loss decomposition and gradient routing.

Outcome criterion4() {
  set_precision(Precision::f64);
  const auto data = gen_synthetic(41, 8, 4, 32);
  std::vector<std::string> problems;

  // Decomposition, independently recomputed losses, and absent target grads.
  for (double gamma : {0.0, 0.1, 0.5, 1.0}) {
    Trainer t(desk_config({{"gamma", fmt("%.17g", gamma)}, {"warmup_epochs", "0"}}));
    for (int step = 0; step < 3; ++step) {
      const auto batch = t.next_batch(data);
      std::vector<Tensor> f1, f2;
      std::vector<MaskGrid> m1, m2;
      for (const auto& p : batch) {
        f1.push_back(p.frame1);
        f2.push_back(p.frame2);
        m1.push_back(*p.mask1);
        m2.push_back(*p.mask2);
      }
      double lo, lt, lc;
      {
        NoGradGuard no_grad;
        const BranchOutput on = run_branch(t.model(), t.state().dual.online, stack_frames(f1), m1, true);
        const BranchOutput tg = run_branch(t.model(), t.state().dual.target, stack_frames(f2), m2, true);
        lo = online_loss(on.targets, on.pred, m1).item();
        lt = target_loss(tg.targets, tg.pred, m2).item();
        lc = consistency_loss(on.pred, tg.pred, m1, m2, true).item();
      }
      const LossReport r = t.train_step(batch);
      if (!same_bits(r.l_online, lo) || !same_bits(r.l_target, lt) || !same_bits(r.l_consistency, lc))
        problems.push_back(fmt("gamma %.1f step %d: reported losses differ from recomputation", gamma, step + 1));
      if (!same_bits(r.l_total, lo + lt + gamma * lc))
        problems.push_back(fmt("gamma %.1f step %d: l_total != l_o + l_t + gamma l_c", gamma, step + 1));
      for (const auto& p : t.state().dual.target)
        if (p.value.has_grad() || p.value.requires_grad())
          problems.push_back("target parameter " + p.name + " holds a gradient");
    }
  }

  // gamma = 0 against an independent L_o + L_t training loop.
  const RunConfig cfg = desk_config({{"gamma", "0"}, {"warmup_epochs", "0"}});
  Trainer g0(cfg), off(desk_config({{"use_consistency", "false"}, {"warmup_epochs", "0"}})), sampler(cfg);
  DualParams ref{g0.state().dual.online.clone(true), g0.state().dual.target.clone(false), cfg.train.momentum};
  AdamWState opt = AdamWState::zeros_like(ref.online);
  const int steps = 5;
  for (int step = 0; step < steps; ++step) {
    const auto batch = sampler.next_batch(data);
    std::vector<Tensor> f1, f2;
    std::vector<MaskGrid> m1, m2;
    for (const auto& p : batch) {
      f1.push_back(p.frame1);
      f2.push_back(p.frame2);
      m1.push_back(*p.mask1);
      m2.push_back(*p.mask2);
    }
    ref.online.zero_grad();
    const BranchOutput on = run_branch(g0.model(), ref.online, stack_frames(f1), m1, true);
    BranchOutput tg;
    {
      NoGradGuard no_grad;
      tg = run_branch(g0.model(), ref.target, stack_frames(f2), m2, true);
    }
    add(online_loss(on.targets, on.pred, m1), target_loss(tg.targets, tg.pred, m2)).backward();
    adamw_update(ref.online, opt, lr_at(step, cfg.train), cfg.train.betas[0], cfg.train.betas[1],
                 cfg.train.weight_decay);
    ema_update(ref);

    g0.train_step(batch);
    off.step(data);
    const auto want = flat_values(ref.online);
    if (!same_bits(flat_values(g0.state().dual.online), want))
      problems.push_back(fmt("step %d: gamma=0 online params differ from the L_o+L_t reference", step + 1));
    if (!same_bits(flat_values(off.state().dual.online), want))
      problems.push_back(fmt("step %d: use_consistency=false online params differ from the reference", step + 1));
    if (!same_bits(flat_values(g0.state().dual.target), flat_values(ref.target)))
      problems.push_back(fmt("step %d: gamma=0 target params differ from the reference", step + 1));
  }
  if (!problems.empty()) return {false, problems.front() + fmt(" (%zu problems)", problems.size())};
  return {true, fmt("gamma in {0, 0.1, 0.5, 1} x 3 steps exact; no target grads; gamma=0 matches the "
                    "L_o+L_t reference bitwise for %d steps",
                    steps)};
}

// ---------------------------------------------------------------------------
// 5. EMA against the closed-form recurrence.

Outcome criterion5() {
  Rng rng(5000);
  DualParams dual;
  std::vector<Shape> shapes{{7}, {3, 4}, {2, 3, 5}, {1}};
  for (size_t i = 0; i < shapes.size(); ++i) {
    std::vector<double> a(static_cast<size_t>(numel_of(shapes[i]))), b(a.size());
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    dual.online.add("p" + std::to_string(i), Tensor::from(shapes[i], a, true), true);
    dual.target.add("p" + std::to_string(i), Tensor::from(shapes[i], b), true);
  }
  std::vector<std::vector<double>> expected;
  for (const auto& p : dual.target) expected.push_back(p.value.values());

  double worst = 0.0;
  for (int step = 0; step < 1000; ++step) {
    const int pick = static_cast<int>(rng.below(5));
    dual.momentum = pick == 0 ? 0.0 : pick == 1 ? 1.0 : pick == 2 ? 0.996 : rng.uniform();
    for (size_t i = 0; i < dual.online.size(); ++i)
      for (auto& v : dual.online[i].value.data()) v += 0.1 * rng.normal();
    const double m = dual.momentum;
    for (size_t i = 0; i < expected.size(); ++i) {
      const auto& o = dual.online[i].value.values();
      for (size_t k = 0; k < o.size(); ++k) expected[i][k] = m * expected[i][k] + (1.0 - m) * o[k];
    }
    ema_update(dual);
    for (size_t i = 0; i < expected.size(); ++i) {
      const auto& t = dual.target[i].value.values();
      for (size_t k = 0; k < t.size(); ++k) {
        worst = std::max(worst, std::abs(t[k] - expected[i][k]));
        if (!same_bits(t[k], expected[i][k])) worst = std::max(worst, 1e-300);
      }
    }
  }
  return {worst == 0.0, fmt("1000 steps, momentum in {0, 1, 0.996, U(0,1)}, max abs error %.3g", worst)};
}

// ---------------------------------------------------------------------------
// 6. Masking statistics.

Outcome criterion6() {
  set_precision(Precision::f64);
  const std::vector<double> ratios{0.65, 0.75, 0.85, 0.95};
  const int draws = 100000;
  std::vector<std::string> lines;
  bool pass = true;
  Rng rng(6000);

  // Exact counts and per-cell frequencies. On 4x4 the floor count makes the
  // realized ratio floor(r*16)/16; 10x10 realizes every ratio exactly.
  for (int side : {4, 10}) {
    for (double r : ratios) {
      const int cells = side * side;
      const int want = static_cast<int>(std::floor(r * cells));
      std::vector<int> hits(static_cast<size_t>(cells), 0);
      int bad_counts = 0;
      for (int d = 0; d < draws; ++d) {
        const MaskGrid m = sample_mask(side, side, r, rng);
        bad_counts += m.masked_count() != want;
        for (int i = 0; i < cells; ++i) hits[static_cast<size_t>(i)] += m.visible[static_cast<size_t>(i)] == 0;
      }
      const double realized = static_cast<double>(want) / cells;
      double dev_realized = 0.0, dev_nominal = 0.0;
      for (int h : hits) {
        const double f = static_cast<double>(h) / draws;
        dev_realized = std::max(dev_realized, std::abs(f - realized));
        dev_nominal = std::max(dev_nominal, std::abs(f - r));
      }
      const bool ok = bad_counts == 0 && dev_realized <= 0.01 && (side != 10 || dev_nominal <= 0.01);
      pass &= ok;
      if (!ok || side == 10 || r == 0.75) {
        lines.push_back(fmt("%dx%d r=%.2f: %d count errors, max cell dev %.4f from %.4f (%.4f from r)", side, side, r,
                            bad_counts, dev_realized, realized, dev_nominal));
      }
    }
  }

  // Symmetric pairs share one grid and therefore every stage view.
  const RunConfig cfg = desk_config();
  const MaskedConvAutoencoder model(cfg.model);
  const auto data = gen_synthetic(61, 8, 4, 32);
  const int grid = model.grid_extent(cfg.train.image_size);
  int asym_views = 0;
  for (int i = 0; i < 10000; ++i) {
    const FramePair p = sample_pair(data, cfg.train, grid, rng);
    if (p.mask1.get() != p.mask2.get()) ++asym_views;
    // Input resolution, then every stage output.
    for (int s = -1; s < cfg.model.encoder.num_stages(); ++s) {
      const int side = cfg.train.image_size / (s < 0 ? 1 : cfg.model.encoder.stride_at(s));
      if (!(view_at(*p.mask1, side, side) == view_at(*p.mask2, side, side))) ++asym_views;
    }
  }
  ParamSet params = model.init_params(rng);
  for (int i = 0; i < 20; ++i) {
    const FramePair p = sample_pair(data, cfg.train, grid, rng);
    NoGradGuard no_grad;
    const EncoderOutput e = model.encode(stack_frames({p.frame1, p.frame2}), {*p.mask1, *p.mask2}, params);
    for (const auto& st : e.stages) {
      const auto v = st.mask.visible();
      const size_t half = v.size() / 2;
      if (!std::equal(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(half), v.begin() + static_cast<std::ptrdiff_t>(half)))
        ++asym_views;
    }
  }
  pass &= asym_views == 0;
  lines.push_back(fmt("symmetric pairs: %d view mismatches", asym_views));

  // Every ablation ratio trains from config.
  for (double r : ratios) {
    Trainer t(desk_config({{"mask_ratio", fmt("%.2f", r)}, {"warmup_epochs", "0"}}));
    const auto batch = t.next_batch(data);
    const LossReport rep = t.train_step(batch);
    const int want = static_cast<int>(std::floor(r * grid * grid));
    const bool ok = std::isfinite(rep.l_total) && batch.front().mask1->masked_count() == want;
    pass &= ok;
    if (!ok) lines.push_back(fmt("mask_ratio=%.2f from config did not train cleanly", r));
  }
  lines.push_back("mask_ratio 0.65/0.75/0.85/0.95 each trained one step from config");

  std::string detail;
  for (const auto& l : lines) detail += (detail.empty() ? "" : "; ") + l;
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 7. Overfitting a fixed batch of 8 pairs.

Outcome criterion7() {
  const auto start = std::chrono::steady_clock::now();
  const RunConfig cfg = desk_config({{"batch_size", "8"}, {"pairs_per_epoch", "8"}, {"epochs", "300"}});
  const auto data = gen_synthetic(71, 8, 4, 32);
  Trainer t(cfg);
  const auto batch = t.next_batch(data);
  const double first = t.train_step(batch).l_online;
  double last = first;
  for (int step = 2; step <= 300; ++step) last = t.train_step(batch).l_online;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {last < 0.1 * first, fmt("l_online step 1 %.4f, step 300 %.4f (ratio %.4f, limit 0.1), training %.1f s",
                                  first, last, last / first, secs)};
}

// ---------------------------------------------------------------------------
// 8, 9. Desk-scale representation quality.
//
// Train on 64 sequences of 8 frames at 32x32 with configs/desk.cfg (50 epochs
// of 64 pairs), then propagate labels through 16 held-out sequences rendered at
// 64x64 using final-stage features (stride 8), against the same architecture
// at its initialization.

struct ProtocolResult {
  double pretrained = 0.0;
  double random_init = 0.0;
};

ProtocolResult run_protocol(uint64_t seed, double gamma) {
  const RunConfig cfg = desk_config({{"seed", std::to_string(seed)}, {"gamma", fmt("%.17g", gamma)}});
  const auto train = gen_synthetic(1, 64, 8, 32);
  const auto held_out = gen_synthetic(1001, 16, 8, 64);
  Trainer t(cfg);
  const PropagationConfig prop;
  ProtocolResult r;
  r.random_init = evaluate_dataset(t.model(), t.state().dual.online, held_out, prop).mean_iou;
  const int64_t total = cfg.train.total_steps();
  while (t.state().step < total) t.step(train);
  r.pretrained = evaluate_dataset(t.model(), t.state().dual.online, held_out, prop).mean_iou;
  std::fprintf(stderr, "  seed %llu gamma %.1f: pretrained %.4f random-init %.4f (%lld steps)\n",
               static_cast<unsigned long long>(seed), gamma, r.pretrained, r.random_init,
               static_cast<long long>(total));
  return r;
}

Outcome criterion8() {
  std::string detail;
  bool pass = true;
  for (uint64_t seed = 0; seed < 3; ++seed) {
    const ProtocolResult r = run_protocol(seed, 1.0);
    const double gap = 100.0 * (r.pretrained - r.random_init);
    pass &= gap >= 10.0;
    detail += fmt("seed %llu %+.1f pts (%.3f vs %.3f); ", static_cast<unsigned long long>(seed), gap, r.pretrained,
                  r.random_init);
  }
  return {pass, detail + "need >= +10 pts per seed"};
}

Outcome criterion9() {
  double with = 0.0, without = 0.0;
  for (uint64_t seed = 0; seed < 3; ++seed) {
    with += run_protocol(seed, 1.0).pretrained / 3.0;
    without += run_protocol(seed, 0.0).pretrained / 3.0;
  }
  return {with >= without, fmt("3-seed mean IoU gamma=1 %.4f vs gamma=0 %.4f (need gamma=1 >= gamma=0)", with, without)};
}

// ---------------------------------------------------------------------------
// 10. Resume, CSV identity and checkpoint round trip.

Outcome criterion10() {
  const RunConfig cfg = desk_config();
  const std::string text = format_run_config(cfg);
  const auto data = gen_synthetic(101, 8, 4, 32);
  const fs::path dir = fs::temp_directory_path() / "mvm_acceptance_c10";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const int total = 20, cut = 10;

  auto straight = [&] {
    Trainer t(cfg);
    std::string csv = loss_csv_header();
    for (int i = 0; i < total; ++i) {
      const double lr = t.current_lr();
      csv += loss_csv_row(t.state().step + 1, t.step(data), lr);
    }
    return std::pair{csv, encode_checkpoint(text, t.state())};
  };
  const auto [csv_a, final_a] = straight();
  const auto [csv_b, final_b] = straight();

  Trainer first(cfg);
  std::string csv_c = loss_csv_header();
  for (int i = 0; i < cut; ++i) {
    const double lr = first.current_lr();
    csv_c += loss_csv_row(first.state().step + 1, first.step(data), lr);
  }
  save_checkpoint(dir / "mid.vmc", text, first.state());
  const Checkpoint mid = load_checkpoint(dir / "mid.vmc");
  save_checkpoint(dir / "mid_again.vmc", mid.config_text, mid.state);
  const bool roundtrip = read_bytes(dir / "mid.vmc") == read_bytes(dir / "mid_again.vmc") &&
                         same_bits(flat_values(mid.state.dual.online), flat_values(first.state().dual.online)) &&
                         same_bits(flat_values(mid.state.dual.target), flat_values(first.state().dual.target)) &&
                         mid.state.rng == first.state().rng && mid.state.step == first.state().step;

  Trainer resumed(parse_run_config(mid.config_text));
  resumed.restore(mid.state);
  for (int i = cut; i < total; ++i) {
    const double lr = resumed.current_lr();
    csv_c += loss_csv_row(resumed.state().step + 1, resumed.step(data), lr);
  }
  const auto final_c = encode_checkpoint(text, resumed.state());
  fs::remove_all(dir);

  const bool same_runs = csv_a == csv_b && final_a == final_b;
  const bool resume_ok = csv_c == csv_a && final_c == final_a;
  return {same_runs && resume_ok && roundtrip,
          fmt("two fixed-seed runs CSV+checkpoint identical: %s; resume at step %d reproduces rows %d..%d and final "
              "state: %s; save/load/save byte-identical and bitwise: %s",
              same_runs ? "yes" : "no", cut, cut + 1, total, resume_ok ? "yes" : "no", roundtrip ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::function<Outcome()>> criteria{
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},  {5, criterion5},
      {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}, {10, criterion10}};
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const int n = std::atoi(argv[i]);
    if (!criteria.count(n)) {
      std::fprintf(stderr, "usage: %s [criterion 1-10 ...]\n", argv[0]);
      return 2;
    }
    selected.push_back(n);
  }
  if (selected.empty())
    for (const auto& [n, fn] : criteria) selected.push_back(n);

  // Wall-clock limits in seconds; exceeding one fails the criterion.
  const std::map<int, double> limits{{1, 60}, {2, 30}, {3, 600}, {7, 300}, {8, 3600}};

  int failed = 0;
  for (int n : selected) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria.at(n)();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (limits.count(n) && secs >= limits.at(n)) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s limit", limits.at(n));
    }
    std::printf("criterion %d: %s  %s [%.1f s]\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
