#include "mvm/masking.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mvm {

int MaskGrid::masked_count() const {
  int n = 0;
  for (auto v : visible) n += v ? 0 : 1;
  return n;
}

MaskGrid sample_mask(int grid_h, int grid_w, double ratio, uint64_t seed) {
  if (grid_h < 1 || grid_w < 1) {
    throw std::invalid_argument("sample_mask: grid dims must be >= 1, got " +
                                std::to_string(grid_h) + "x" + std::to_string(grid_w));
  }
  if (!(ratio >= 0.0) || !(ratio < 1.0)) {
    throw std::invalid_argument("sample_mask: ratio must lie in [0, 1), got " +
                                std::to_string(ratio));
  }
  const int cells = grid_h * grid_w;
  const int masked = static_cast<int>(std::floor(ratio * cells));

  std::vector<int> order(static_cast<size_t>(cells));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (int i = cells - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.below(static_cast<uint64_t>(i) + 1));
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }

  MaskGrid grid;
  grid.grid_h = grid_h;
  grid.grid_w = grid_w;
  grid.ratio = ratio;
  grid.seed = seed;
  grid.visible.assign(static_cast<size_t>(cells), 1);
  for (int i = 0; i < masked; ++i) grid.visible[static_cast<size_t>(order[static_cast<size_t>(i)])] = 0;
  return grid;
}

MaskGrid sample_mask(int grid_h, int grid_w, double ratio, Rng& rng) {
  return sample_mask(grid_h, grid_w, ratio, rng.next_u64());
}

std::pair<MaskGrid, MaskGrid> asymmetric_pair(int grid_h, int grid_w, double ratio, Rng& rng) {
  MaskGrid first = sample_mask(grid_h, grid_w, ratio, rng);
  MaskGrid second = sample_mask(grid_h, grid_w, ratio, rng);
  return {std::move(first), std::move(second)};
}

MaskView view_at(const MaskGrid& mask, int stage_h, int stage_w) {
  if (stage_h < mask.grid_h || stage_w < mask.grid_w || stage_h % mask.grid_h != 0 ||
      stage_w % mask.grid_w != 0) {
    throw std::invalid_argument("view_at: stage " + std::to_string(stage_h) + "x" +
                                std::to_string(stage_w) + " is not an integer multiple of grid " +
                                std::to_string(mask.grid_h) + "x" + std::to_string(mask.grid_w));
  }
  MaskView view;
  view.stage_h = stage_h;
  view.stage_w = stage_w;
  view.block_h = stage_h / mask.grid_h;
  view.block_w = stage_w / mask.grid_w;
  view.visible.resize(static_cast<size_t>(stage_h * stage_w));
  for (int y = 0; y < stage_h; ++y)
    for (int x = 0; x < stage_w; ++x)
      view.visible[static_cast<size_t>(y * stage_w + x)] =
          mask.visible[static_cast<size_t>((y / view.block_h) * mask.grid_w + x / view.block_w)];
  return view;
}

MaskView downsample(const MaskView& view, int factor) {
  if (factor < 1 || view.block_h % factor != 0 || view.block_w % factor != 0) {
    throw std::invalid_argument("downsample: factor " + std::to_string(factor) +
                                " does not divide mask block " + std::to_string(view.block_h) +
                                "x" + std::to_string(view.block_w));
  }
  MaskView out;
  out.stage_h = view.stage_h / factor;
  out.stage_w = view.stage_w / factor;
  out.block_h = view.block_h / factor;
  out.block_w = view.block_w / factor;
  out.visible.assign(static_cast<size_t>(out.stage_h * out.stage_w), 1);
  for (int y = 0; y < view.stage_h; ++y)
    for (int x = 0; x < view.stage_w; ++x)
      if (!view.is_visible(y, x)) out.visible[static_cast<size_t>((y / factor) * out.stage_w + x / factor)] = 0;
  return out;
}

SiteMask SiteMask::from_views(const std::vector<MaskView>& views) {
  if (views.empty()) throw std::invalid_argument("SiteMask: no views");
  SiteMask m;
  m.n_ = static_cast<int>(views.size());
  m.h_ = views.front().stage_h;
  m.w_ = views.front().stage_w;
  m.block_h_ = views.front().block_h;
  m.block_w_ = views.front().block_w;
  for (const auto& v : views) {
    if (v.stage_h != m.h_ || v.stage_w != m.w_ || v.block_h != m.block_h_ || v.block_w != m.block_w_) {
      throw std::invalid_argument("SiteMask: views disagree on resolution");
    }
    m.visible_.insert(m.visible_.end(), v.visible.begin(), v.visible.end());
  }
  return m;
}

SiteMask SiteMask::from_grids(const std::vector<MaskGrid>& grids, int h, int w) {
  std::vector<MaskView> views;
  views.reserve(grids.size());
  for (const auto& g : grids) views.push_back(view_at(g, h, w));
  return from_views(views);
}

SiteMask SiteMask::all_visible(int n, int h, int w) {
  SiteMask m;
  m.n_ = n;
  m.h_ = h;
  m.w_ = w;
  m.visible_.assign(static_cast<size_t>(n * h * w), 1);
  return m;
}

bool SiteMask::all() const {
  for (auto v : visible_)
    if (!v) return false;
  return true;
}

SiteMask SiteMask::downsample(int factor) const {
  if (factor < 1) throw std::invalid_argument("SiteMask::downsample: factor must be >= 1");
  const bool unbounded = block_h_ == 0;
  if (!unbounded && (block_h_ % factor != 0 || block_w_ % factor != 0)) {
    throw std::invalid_argument("stride " + std::to_string(factor) +
                                " is incompatible with mask block " + std::to_string(block_h_) +
                                "x" + std::to_string(block_w_));
  }
  if (h_ % factor != 0 || w_ % factor != 0) {
    throw std::invalid_argument("SiteMask::downsample: " + std::to_string(h_) + "x" +
                                std::to_string(w_) + " not divisible by " + std::to_string(factor));
  }
  SiteMask out;
  out.n_ = n_;
  out.h_ = h_ / factor;
  out.w_ = w_ / factor;
  out.block_h_ = unbounded ? 0 : block_h_ / factor;
  out.block_w_ = unbounded ? 0 : block_w_ / factor;
  out.visible_.assign(static_cast<size_t>(out.n_ * out.h_ * out.w_), 1);
  for (int b = 0; b < n_; ++b)
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x)
        if (!is_visible(b, y, x))
          out.visible_[static_cast<size_t>((b * out.h_ + y / factor) * out.w_ + x / factor)] = 0;
  return out;
}

std::string dump_mask(const MaskGrid& mask) {
  char ratio[64];
  std::snprintf(ratio, sizeof ratio, "%.17g", mask.ratio);
  std::ostringstream os;
  os << "MASK " << mask.grid_h << ' ' << mask.grid_w << ' ' << ratio << ' ' << mask.seed << '\n';
  for (int y = 0; y < mask.grid_h; ++y) {
    for (int x = 0; x < mask.grid_w; ++x) os << (mask.is_visible(y, x) ? '1' : '0');
    os << '\n';
  }
  return os.str();
}

MaskGrid parse_mask_dump(const std::string& text) {
  std::istringstream is(text);
  std::string tag;
  MaskGrid m;
  if (!(is >> tag >> m.grid_h >> m.grid_w >> m.ratio >> m.seed) || tag != "MASK" || m.grid_h < 1 ||
      m.grid_w < 1) {
    throw std::runtime_error("mask dump: malformed header");
  }
  for (int y = 0; y < m.grid_h; ++y) {
    std::string row;
    if (!(is >> row) || static_cast<int>(row.size()) != m.grid_w) {
      throw std::runtime_error("mask dump: row " + std::to_string(y) + " malformed");
    }
    for (char ch : row) {
      if (ch != '0' && ch != '1') throw std::runtime_error("mask dump: bad cell character");
      m.visible.push_back(ch == '1' ? 1 : 0);
    }
  }
  return m;
}

}  // namespace mvm
