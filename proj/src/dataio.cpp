#include "mvm/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "mvm/rng.hpp"

namespace fs = std::filesystem;

namespace mvm {

namespace {

struct PnmHeader {
  int width = 0;
  int height = 0;
  size_t data_offset = 0;
};

bool is_space(uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

PnmHeader parse_pnm_header(const std::vector<uint8_t>& bytes, const char* magic) {
  if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1]) {
    throw ParseError(std::string("expected magic '") + magic + "'", 0);
  }
  size_t pos = 2;
  size_t last_digits = 0;
  auto skip_space_and_comments = [&] {
    for (;;) {
      while (pos < bytes.size() && is_space(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      return;
    }
  };
  auto read_int = [&](const char* what) {
    const size_t before = pos;
    skip_space_and_comments();
    if (pos == before) throw ParseError(std::string("expected whitespace before ") + what, pos);
    if (pos >= bytes.size()) throw ParseError(std::string("header ends before ") + what, pos);
    long value = 0;
    const size_t digits = pos;
    last_digits = digits;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      value = value * 10 + (bytes[pos] - '0');
      if (value > 1'000'000) throw ParseError(std::string(what) + " too large", digits);
      ++pos;
    }
    if (pos == digits) throw ParseError(std::string("expected ") + what, pos);
    return static_cast<int>(value);
  };

  PnmHeader h;
  h.width = read_int("width");
  h.height = read_int("height");
  const int maxval = read_int("maxval");
  if (maxval != 255) {
    throw ParseError("unsupported maxval " + std::to_string(maxval) + " (need 255)", last_digits);
  }
  if (h.width < 1 || h.height < 1) throw ParseError("image dimensions must be positive", 2);
  if (pos >= bytes.size() || !is_space(bytes[pos])) {
    throw ParseError("expected single whitespace after maxval", pos);
  }
  h.data_offset = pos + 1;
  return h;
}

void check_payload(const std::vector<uint8_t>& bytes, const PnmHeader& h, size_t channels) {
  const size_t expected = static_cast<size_t>(h.width) * static_cast<size_t>(h.height) * channels;
  const size_t actual = bytes.size() - h.data_offset;
  if (actual < expected) {
    throw ParseError("truncated pixel data: expected " + std::to_string(expected) +
                         " bytes, got " + std::to_string(actual),
                     bytes.size());
  }
}

std::string header_text(const char* magic, int w, int h) {
  return std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
}

uint8_t to_byte(double v) {
  const double scaled = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<uint8_t>(scaled);
}

}  // namespace

std::vector<uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const fs::path& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

Tensor decode_ppm(const std::vector<uint8_t>& bytes) {
  const PnmHeader h = parse_pnm_header(bytes, "P6");
  check_payload(bytes, h, 3);
  const size_t plane = static_cast<size_t>(h.width) * static_cast<size_t>(h.height);
  std::vector<double> v(plane * 3);
  for (size_t i = 0; i < plane; ++i)
    for (size_t c = 0; c < 3; ++c) v[c * plane + i] = bytes[h.data_offset + i * 3 + c] / 255.0;
  return Tensor::from({3, h.height, h.width}, std::move(v));
}

std::vector<uint8_t> encode_ppm(const Tensor& frame) {
  if (frame.dim() != 3 || frame.size(0) != 3) {
    throw DimensionError("encode_ppm: expected [3,H,W], got " + to_string(frame.shape()));
  }
  const int h = static_cast<int>(frame.size(1)), w = static_cast<int>(frame.size(2));
  const std::string head = header_text("P6", w, h);
  std::vector<uint8_t> out(head.begin(), head.end());
  const size_t plane = static_cast<size_t>(h) * static_cast<size_t>(w);
  const auto& v = frame.values();
  for (size_t i = 0; i < plane; ++i)
    for (size_t c = 0; c < 3; ++c) out.push_back(to_byte(v[c * plane + i]));
  return out;
}

Tensor read_frame(const fs::path& path) {
  try {
    return decode_ppm(read_bytes(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

void write_frame(const fs::path& path, const Tensor& frame) { write_bytes(path, encode_ppm(frame)); }

LabelMap decode_pgm(const std::vector<uint8_t>& bytes) {
  const PnmHeader h = parse_pnm_header(bytes, "P5");
  check_payload(bytes, h, 1);
  LabelMap m;
  m.height = h.height;
  m.width = h.width;
  const auto begin = bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset);
  m.ids.assign(begin, begin + static_cast<std::ptrdiff_t>(h.width) * h.height);
  return m;
}

std::vector<uint8_t> encode_pgm(const LabelMap& labels) {
  const std::string head = header_text("P5", labels.width, labels.height);
  std::vector<uint8_t> out(head.begin(), head.end());
  out.insert(out.end(), labels.ids.begin(), labels.ids.end());
  return out;
}

LabelMap read_labels(const fs::path& path) {
  try {
    return decode_pgm(read_bytes(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

void write_labels(const fs::path& path, const LabelMap& labels) {
  write_bytes(path, encode_pgm(labels));
}

bool ShapeTrack::covers(int t, int px, int py) const {
  const double x = px + 0.5 - center_x(t);
  const double y = py + 0.5 - center_y(t);
  switch (kind) {
    case ShapeKind::circle: return x * x + y * y <= radius * radius;
    case ShapeKind::square: return std::abs(x) <= radius && std::abs(y) <= radius;
    case ShapeKind::triangle: {
      // Apex (0,-r), base corners (-r,r) and (r,r) relative to the center.
      if (y > radius || y < -radius) return false;
      const double half_width = radius * (y + radius) / (2.0 * radius);
      return std::abs(x) <= half_width;
    }
  }
  return false;
}

std::vector<Sequence> gen_synthetic(uint64_t seed, int num_sequences, int frames_per_seq, int size) {
  if (num_sequences < 0 || frames_per_seq < 1 || size < 4) {
    throw std::invalid_argument("gen_synthetic: need sequences >= 0, frames >= 1, size >= 4");
  }
  Rng rng(seed);
  std::vector<Sequence> out;
  for (int s = 0; s < num_sequences; ++s) {
    Sequence seq;
    char name[32];
    std::snprintf(name, sizeof name, "seq%04d", s);
    seq.name = name;

    // Background: a few oriented sinusoids per channel over a base color.
    struct Wave { double fx, fy, phase, amp; };
    double base[3];
    std::vector<Wave> waves[3];
    for (int c = 0; c < 3; ++c) {
      base[c] = rng.uniform(0.25, 0.75);
      for (int k = 0; k < 3; ++k) {
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double cycles = rng.uniform(1.0, 4.0);
        waves[c].push_back({std::cos(angle) * cycles, std::sin(angle) * cycles,
                            rng.uniform(0.0, 2.0 * std::numbers::pi), rng.uniform(0.05, 0.15)});
      }
    }
    std::vector<double> background(static_cast<size_t>(3 * size * size));
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          double v = base[c];
          for (const auto& w : waves[c]) {
            v += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * x + w.fy * y) / size + w.phase);
          }
          background[static_cast<size_t>((c * size + y) * size + x)] = std::clamp(v, 0.0, 1.0);
        }

    const int count = 1 + static_cast<int>(rng.below(3));
    const double span = frames_per_seq - 1;
    for (int k = 0; k < count; ++k) {
      ShapeTrack tr;
      tr.kind = static_cast<ShapeKind>(rng.below(3));
      tr.radius = rng.uniform(0.12, 0.22) * size;
      for (auto& c : tr.color) c = rng.uniform(0.0, 1.0);
      tr.vx = rng.uniform(-1.5, 1.5);
      tr.vy = rng.uniform(-1.5, 1.5);
      auto place = [&](double& v) {
        // Keep the center inside [r, size - r] for every frame.
        double lo = tr.radius - std::min(0.0, v * span);
        double hi = size - tr.radius - std::max(0.0, v * span);
        if (hi < lo) {
          v = 0.0;
          lo = tr.radius;
          hi = size - tr.radius;
        }
        return rng.uniform(lo, hi);
      };
      tr.cx = place(tr.vx);
      tr.cy = place(tr.vy);
      seq.tracks.push_back(tr);
    }

    for (int t = 0; t < frames_per_seq; ++t) {
      std::vector<double> img = background;
      LabelMap labels{size, size, std::vector<uint8_t>(static_cast<size_t>(size * size), 0)};
      for (int k = 0; k < count; ++k) {
        const auto& tr = seq.tracks[static_cast<size_t>(k)];
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) {
            if (!tr.covers(t, x, y)) continue;
            labels.ids[static_cast<size_t>(y * size + x)] = static_cast<uint8_t>(k + 1);
            for (int c = 0; c < 3; ++c) img[static_cast<size_t>((c * size + y) * size + x)] = tr.color[c];
          }
      }
      // Quantize so frames survive a PPM round trip unchanged.
      for (auto& v : img) v = std::round(v * 255.0) / 255.0;
      seq.frames.push_back(Tensor::from({3, size, size}, std::move(img)));
      seq.labels.push_back(std::move(labels));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

void write_store(const fs::path& root, const std::vector<Sequence>& sequences) {
  for (const auto& seq : sequences) {
    const fs::path dir = root / seq.name;
    fs::create_directories(dir / "labels");
    for (size_t t = 0; t < seq.frames.size(); ++t) {
      char file[32];
      std::snprintf(file, sizeof file, "%05zu", t);
      write_frame(dir / (std::string(file) + ".ppm"), seq.frames[t]);
      if (t < seq.labels.size()) write_labels(dir / "labels" / (std::string(file) + ".pgm"), seq.labels[t]);
    }
  }
}

SequenceStore SequenceStore::open(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("data directory not found: " + root.string());
  SequenceStore store;
  store.root_ = root;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    Entry entry;
    entry.name = dir.filename().string();
    for (const auto& f : fs::directory_iterator(dir))
      if (f.is_regular_file() && f.path().extension() == ".ppm") entry.frames.push_back(f.path());
    if (entry.frames.empty()) continue;
    std::sort(entry.frames.begin(), entry.frames.end());
    if (fs::is_directory(dir / "labels")) {
      for (const auto& f : fs::directory_iterator(dir / "labels"))
        if (f.is_regular_file() && f.path().extension() == ".pgm") entry.labels.push_back(f.path());
      std::sort(entry.labels.begin(), entry.labels.end());
    }
    store.entries_.push_back(std::move(entry));
  }
  if (store.entries_.empty()) throw DataError("no sequences under " + root.string());
  return store;
}

Sequence SequenceStore::load(size_t index) const {
  const Entry& e = entries_.at(index);
  Sequence seq;
  seq.name = e.name;
  for (const auto& p : e.frames) {
    Tensor f = read_frame(p);
    if (!seq.frames.empty() && f.shape() != seq.frames.front().shape()) {
      throw DataError("sequence " + e.name + ": frame " + p.filename().string() +
                      " differs in size from the first frame");
    }
    seq.frames.push_back(std::move(f));
  }
  for (const auto& p : e.labels) seq.labels.push_back(read_labels(p));
  if (!seq.labels.empty() && seq.labels.size() != seq.frames.size()) {
    throw DataError("sequence " + e.name + ": " + std::to_string(seq.labels.size()) +
                    " label maps for " + std::to_string(seq.frames.size()) + " frames");
  }
  return seq;
}

std::vector<Sequence> SequenceStore::load_all() const {
  std::vector<Sequence> out;
  out.reserve(entries_.size());
  for (size_t i = 0; i < entries_.size(); ++i) out.push_back(load(i));
  return out;
}

}  // namespace mvm
