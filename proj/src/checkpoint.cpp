#include "mvm/checkpoint.hpp"

#include <bit>
#include <cstring>

namespace mvm {

namespace {

constexpr char kMagic[4] = {'V', 'M', 'C', '1'};
constexpr uint8_t kDtypeF64 = 1;

class Writer {
 public:
  void u8(uint8_t v) { out.push_back(v); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
  void str64(const std::string& s) {
    u64(s.size());
    out.insert(out.end(), s.begin(), s.end());
  }
  void str32(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }

  std::vector<uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<uint8_t>& bytes) : b_(bytes) {}

  size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

  void need(uint64_t n, const char* what) {
    if (n > b_.size() - pos_) {
      throw CheckpointError("checkpoint truncated reading " + std::string(what) + " at byte " +
                            std::to_string(pos_) + ": need " + std::to_string(n) + " bytes, have " +
                            std::to_string(b_.size() - pos_));
    }
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return b_[pos_++];
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string bytes(uint64_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), static_cast<size_t>(n));
    pos_ += static_cast<size_t>(n);
    return s;
  }

 private:
  const std::vector<uint8_t>& b_;
  size_t pos_ = 0;
};

struct Entry {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

void write_entry(Writer& w, const std::string& name, const Shape& shape,
                 std::span<const double> data) {
  w.str32(name);
  w.u8(kDtypeF64);
  w.u32(static_cast<uint32_t>(shape.size()));
  for (int64_t d : shape) w.u64(static_cast<uint64_t>(d));
  for (double v : data) w.f64(v);
}

void write_params(Writer& w, const ParamSet& params) {
  w.u32(static_cast<uint32_t>(params.size()));
  for (const auto& p : params) write_entry(w, p.name, p.value.shape(), p.value.values());
}

void write_moments(Writer& w, const ParamSet& params, const std::vector<std::vector<double>>& moments) {
  if (moments.size() != params.size()) {
    throw CheckpointError("optimizer state has " + std::to_string(moments.size()) +
                          " tables for " + std::to_string(params.size()) + " parameters");
  }
  w.u32(static_cast<uint32_t>(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    if (moments[i].size() != static_cast<size_t>(params[i].value.numel())) {
      throw CheckpointError("optimizer moment size mismatch for " + params[i].name);
    }
    write_entry(w, params[i].name, params[i].value.shape(), moments[i]);
  }
}

std::vector<Entry> read_table(Reader& r, const char* table) {
  const uint32_t count = r.u32(table);
  std::vector<Entry> entries;
  for (uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.bytes(r.u32("entry name length"), "entry name");
    const uint8_t dtype = r.u8("dtype");
    if (dtype != kDtypeF64) {
      throw CheckpointError("unsupported dtype " + std::to_string(dtype) + " for " + e.name);
    }
    const uint32_t ndim = r.u32("ndim");
    uint64_t n = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      const uint64_t dim = r.u64("dims");
      if (dim != 0 && n > (uint64_t{1} << 40) / dim) {
        throw CheckpointError("implausible shape for " + e.name);
      }
      n *= dim;
      e.shape.push_back(static_cast<int64_t>(dim));
    }
    r.need(n * 8, "tensor data");
    e.data.resize(static_cast<size_t>(n));
    for (auto& v : e.data) v = r.f64("tensor data");
    entries.push_back(std::move(e));
  }
  return entries;
}

ParamSet to_params(std::vector<Entry> entries, bool trainable) {
  ParamSet set;
  for (auto& e : entries) {
    Tensor t = Tensor::from(e.shape, std::move(e.data));
    t.set_requires_grad(trainable);
    set.add(e.name, t, true);
  }
  return set;
}

std::vector<std::vector<double>> to_moments(std::vector<Entry> entries, const ParamSet& params,
                                            const char* table) {
  if (entries.size() != params.size()) {
    throw CheckpointError(std::string(table) + " table has " + std::to_string(entries.size()) +
                          " entries, expected " + std::to_string(params.size()));
  }
  std::vector<std::vector<double>> out;
  for (size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].name != params[i].name || entries[i].shape != params[i].value.shape()) {
      throw CheckpointError(std::string(table) + " entry " + entries[i].name +
                            " does not match parameter " + params[i].name);
    }
    out.push_back(std::move(entries[i].data));
  }
  return out;
}

}  // namespace

std::vector<uint8_t> encode_checkpoint(const std::string& config_text, const TrainerState& state) {
  Writer w;
  for (char c : kMagic) w.u8(static_cast<uint8_t>(c));
  w.u32(kCheckpointVersion);
  w.u64(static_cast<uint64_t>(state.step));
  w.str64(config_text);
  w.str64(state.rng.state());
  w.u64(static_cast<uint64_t>(state.optimizer.t));
  write_params(w, state.dual.online);
  write_params(w, state.dual.target);
  write_moments(w, state.dual.online, state.optimizer.m);
  write_moments(w, state.dual.online, state.optimizer.v);
  // The momentum lives in the config echo.
  return std::move(w.out);
}

Checkpoint decode_checkpoint(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  const std::string magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw CheckpointError("bad checkpoint magic");
  const uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.state.step = static_cast<int64_t>(r.u64("step"));
  ck.config_text = r.bytes(r.u64("config length"), "config");
  const std::string rng_text = r.bytes(r.u64("rng length"), "rng state");
  ck.state.optimizer.t = static_cast<int64_t>(r.u64("adam_t"));
  ck.state.dual.online = to_params(read_table(r, "online table"), true);
  ck.state.dual.target = to_params(read_table(r, "target table"), false);
  if (!ck.state.dual.online.congruent(ck.state.dual.target)) {
    throw CheckpointError("online and target tables are not congruent");
  }
  ck.state.optimizer.m = to_moments(read_table(r, "adam_m table"), ck.state.dual.online, "adam_m");
  ck.state.optimizer.v = to_moments(read_table(r, "adam_v table"), ck.state.dual.online, "adam_v");
  if (!r.done()) {
    throw CheckpointError("trailing bytes after checkpoint at byte " + std::to_string(r.pos()));
  }
  try {
    ck.state.rng.set_state(rng_text);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint rng state: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const std::string& config_text,
                     const TrainerState& state) {
  write_bytes(path, encode_checkpoint(config_text, state));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_bytes(path));
}

}  // namespace mvm
