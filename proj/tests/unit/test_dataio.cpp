#include <cmath>
#include <cstdio>
#include <string>

#include "doctest.h"
#include "helpers.hpp"
#include "mvm/checkpoint.hpp"
#include "mvm/config.hpp"

using namespace mvm;
using mvm::test::bitwise_equal;
using mvm::test::ScratchDir;

namespace {

std::vector<uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

std::string hex(const std::vector<uint8_t>& b, size_t from, size_t count) {
  std::string out;
  char buf[4];
  for (size_t i = from; i < from + count && i < b.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%02x", b[i]);
    out += buf;
  }
  return out;
}

// Pixel-center point-in-shape test written independently of ShapeTrack::covers:
// triangles via edge functions, circles via hypot.
bool oracle_covers(const ShapeTrack& s, int t, int px, int py) {
  const double x = px + 0.5 - s.center_x(t), y = py + 0.5 - s.center_y(t), r = s.radius;
  switch (s.kind) {
    case ShapeKind::circle: return std::hypot(x, y) <= r;
    case ShapeKind::square: return std::max(std::abs(x), std::abs(y)) <= r;
    case ShapeKind::triangle: {
      auto edge = [&](double ax, double ay, double bx, double by) {
        return (bx - ax) * (y - ay) - (by - ay) * (x - ax);
      };
      const double e0 = edge(0, -r, r, r), e1 = edge(r, r, -r, r), e2 = edge(-r, r, 0, -r);
      return e0 >= 0 && e1 >= 0 && e2 >= 0;
    }
  }
  return false;
}

TrainerState tiny_state() {
  TrainerState s;
  s.dual.online.add("w", Tensor::from({2}, {1.0, -2.0}, true), true);
  s.dual.target.add("w", Tensor::from({2}, {0.5, 0.25}), true);
  s.optimizer = AdamWState::zeros_like(s.dual.online);
  s.optimizer.m[0] = {0.125, -0.0};
  s.optimizer.t = 3;
  s.step = 42;
  return s;
}

std::vector<double> flat(const ParamSet& p) {
  std::vector<double> out;
  for (const auto& e : p) out.insert(out.end(), e.value.values().begin(), e.value.values().end());
  return out;
}

}  // namespace

TEST_CASE("PPM decoding") {
  const Tensor white = decode_ppm(bytes_of(std::string("P6\n1 1\n255\n") + "\xff\xff\xff"));
  CHECK(white.shape() == Shape{3, 1, 1});
  for (double v : white.values()) CHECK(v == 1.0);

  // Comments and mixed whitespace in the header; channel-interleaved payload.
  const Tensor t = decode_ppm(bytes_of(std::string("P6 # c\n2\t1 255\n") + std::string("\x00\x33\xff\x80\x01\x02", 6)));
  CHECK(t.shape() == Shape{3, 1, 2});
  CHECK(t.values() == std::vector<double>{0.0, 128 / 255.0, 0x33 / 255.0, 1 / 255.0, 1.0, 2 / 255.0});
}

TEST_CASE("PPM errors carry byte offsets") {
  try {
    decode_ppm(bytes_of(std::string("P6\n2 2\n255\n") + "abcdef"));
    FAIL("no throw");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("expected 12 bytes, got 6") != std::string::npos);
  }
  try {
    decode_ppm(bytes_of("P3\n1 1\n255\n"));
    FAIL("no throw");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 0);
  }
  try {
    decode_ppm(bytes_of("P6\n1 1\n65535\n"));
    FAIL("no throw");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 7);
  }
  CHECK_THROWS_AS(decode_ppm(bytes_of("P6\n1")), ParseError);
  CHECK_THROWS_AS(decode_ppm(bytes_of("P6\n0 1\n255\n")), ParseError);
}

TEST_CASE("PPM and PGM round trips are byte-identical") {
  Rng rng(71);
  std::string raw = "P6\n5 3\n255\n";
  for (int i = 0; i < 45; ++i) raw.push_back(static_cast<char>(rng.below(256)));
  CHECK(encode_ppm(decode_ppm(bytes_of(raw))) == bytes_of(raw));

  LabelMap m{2, 3, {0, 1, 2, 3, 0, 255}};
  const auto pgm = encode_pgm(m);
  CHECK(hex(pgm, 0, 11) == "50350a3320320a3235350a");  // "P5\n3 2\n255\n"
  CHECK(decode_pgm(pgm) == m);

  ScratchDir dir("ppm");
  const Tensor f = decode_ppm(bytes_of(raw));
  write_frame(dir / "f.ppm", f);
  CHECK(read_bytes(dir / "f.ppm") == bytes_of(raw));
  CHECK(bitwise_equal(read_frame(dir / "f.ppm").values(), f.values()));
  CHECK_THROWS_AS(read_frame(dir / "missing.ppm"), DataError);
}

TEST_CASE("gen_synthetic is seed-deterministic") {
  const auto a = gen_synthetic(5, 4, 3, 16), b = gen_synthetic(5, 4, 3, 16), c = gen_synthetic(6, 4, 3, 16);
  bool differs = false;
  REQUIRE(a.size() == 4);
  for (size_t s = 0; s < a.size(); ++s) {
    CHECK(a[s].name == b[s].name);
    for (size_t t = 0; t < 3; ++t) {
      CHECK(encode_ppm(a[s].frames[t]) == encode_ppm(b[s].frames[t]));
      CHECK(a[s].labels[t] == b[s].labels[t]);
      differs |= encode_ppm(a[s].frames[t]) != encode_ppm(c[s].frames[t]);
    }
  }
  CHECK(differs);
}

TEST_CASE("gen_synthetic labels match an independent rasterizer") {
  for (const auto& seq : gen_synthetic(7, 12, 4, 32)) {
    REQUIRE(seq.tracks.size() >= 1);
    REQUIRE(seq.tracks.size() <= 3);
    for (int t = 0; t < 4; ++t) {
      const LabelMap& lm = seq.labels[static_cast<size_t>(t)];
      int label_count = 0, oracle_count = 0;
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          label_count += lm.at(y, x) != 0;
          int top = 0;
          for (size_t k = 0; k < seq.tracks.size(); ++k)
            if (oracle_covers(seq.tracks[k], t, x, y)) top = static_cast<int>(k) + 1;
          oracle_count += top != 0;
          CHECK(lm.at(y, x) == top);
          if (top != 0) {
            const auto& color = seq.tracks[static_cast<size_t>(top - 1)].color;
            for (int c = 0; c < 3; ++c)
              CHECK(seq.frames[static_cast<size_t>(t)].values()[static_cast<size_t>((c * 32 + y) * 32 + x)] ==
                    std::round(color[c] * 255.0) / 255.0);
          }
        }
      CHECK(label_count == oracle_count);
    }
  }
}

TEST_CASE("gen_synthetic motion is constant velocity") {
  for (const auto& seq : gen_synthetic(8, 6, 8, 64)) {
    for (const auto& tr : seq.tracks)
      for (int g = 1; g < 8; ++g)
        for (int t = 0; t + g < 8; ++t) {
          CHECK(std::abs((tr.center_x(t + g) - tr.center_x(t)) - g * tr.vx) < 1e-12);
          CHECK(std::abs((tr.center_y(t + g) - tr.center_y(t)) - g * tr.vy) < 1e-12);
        }
    // With a single unoccluded square the label centroid follows the track.
    if (seq.tracks.size() != 1 || seq.tracks[0].kind != ShapeKind::square) continue;
    for (int t = 0; t < 8; ++t) {
      double sx = 0, sy = 0, n = 0;
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
          if (seq.labels[static_cast<size_t>(t)].at(y, x)) sx += x + 0.5, sy += y + 0.5, ++n;
      CHECK(std::abs(sx / n - seq.tracks[0].center_x(t)) <= 0.5);
      CHECK(std::abs(sy / n - seq.tracks[0].center_y(t)) <= 0.5);
    }
  }
}

TEST_CASE("store layout and reload") {
  ScratchDir dir("store");
  const auto data = gen_synthetic(9, 2, 3, 16);
  write_store(dir.path(), data);
  CHECK(std::filesystem::exists(dir / "seq0000/00000.ppm"));
  CHECK(std::filesystem::exists(dir / "seq0001/00002.ppm"));
  CHECK(std::filesystem::exists(dir / "seq0001/labels/00002.pgm"));

  ScratchDir other("store_other");
  write_store(other.path(), gen_synthetic(10, 1, 2, 8));
  const SequenceStore a = SequenceStore::open(dir.path()), b = SequenceStore::open(other.path());
  CHECK(a.size() == 2);
  CHECK(b.size() == 1);
  const Sequence b0 = b.load(0);
  const auto loaded = a.load_all();
  CHECK(b0.frames.size() == 2);
  for (size_t s = 0; s < 2; ++s) {
    CHECK(loaded[s].name == data[s].name);
    for (size_t t = 0; t < 3; ++t) {
      CHECK(bitwise_equal(loaded[s].frames[t].values(), data[s].frames[t].values()));
      CHECK(loaded[s].labels[t] == data[s].labels[t]);
    }
  }
  CHECK_THROWS_AS(SequenceStore::open(dir / "nowhere"), DataError);

  // A frame of a different size breaks the sequence.
  write_frame(dir / "seq0000/00003.ppm", Tensor::zeros({3, 8, 8}));
  CHECK_THROWS_AS(SequenceStore::open(dir.path()).load(0), DataError);
}

TEST_CASE("checkpoint header layout") {
  const TrainerState s = tiny_state();
  const auto b = encode_checkpoint("a=1\n", s);
  CHECK(hex(b, 0, 4) == "564d4331");                  // magic
  CHECK(hex(b, 4, 4) == "01000000");                  // version
  CHECK(hex(b, 8, 8) == "2a00000000000000");          // step 42
  CHECK(hex(b, 16, 12) == "0400000000000000613d310a"); // config
  const std::string rng = s.rng.state();
  uint64_t rng_len = 0;
  for (int i = 0; i < 8; ++i) rng_len |= static_cast<uint64_t>(b[static_cast<size_t>(28 + i)]) << (8 * i);
  CHECK(rng_len == rng.size());
  const size_t at = 36 + rng.size();
  CHECK(hex(b, at, 8) == "0300000000000000");  // adam t
  // online table: count, name, dtype, ndim, dims, data
  CHECK(hex(b, at + 8, 4 + 4 + 1 + 1 + 4 + 8 + 16) ==
        "01000000" "01000000" "77" "01" "01000000" "0200000000000000"
        "000000000000f03f" "00000000000000c0");
}

TEST_CASE("checkpoint round trip is bitwise") {
  RunConfig cfg;
  cfg.model.decoder.width = 32;
  cfg.train.batch_size = 2;
  Trainer trainer(cfg);
  trainer.step(gen_synthetic(3, 2, 3, 32));
  const std::string text = format_run_config(cfg);
  const TrainerState& s = trainer.state();

  ScratchDir dir("ckpt");
  save_checkpoint(dir / "a.vmc", text, s);
  const Checkpoint c = load_checkpoint(dir / "a.vmc");
  CHECK(c.config_text == text);
  CHECK(c.state.step == s.step);
  CHECK(c.state.rng == s.rng);
  CHECK(c.state.optimizer.t == s.optimizer.t);
  CHECK(bitwise_equal(flat(c.state.dual.online), flat(s.dual.online)));
  CHECK(bitwise_equal(flat(c.state.dual.target), flat(s.dual.target)));
  for (size_t i = 0; i < s.optimizer.m.size(); ++i) {
    CHECK(bitwise_equal(c.state.optimizer.m[i], s.optimizer.m[i]));
    CHECK(bitwise_equal(c.state.optimizer.v[i], s.optimizer.v[i]));
  }
  for (size_t i = 0; i < s.dual.online.size(); ++i) {
    CHECK(c.state.dual.online[i].name == s.dual.online[i].name);
    CHECK(c.state.dual.online[i].value.shape() == s.dual.online[i].value.shape());
  }
  save_checkpoint(dir / "b.vmc", c.config_text, c.state);
  CHECK(read_bytes(dir / "a.vmc") == read_bytes(dir / "b.vmc"));

  Trainer resumed(cfg);
  resumed.restore(c.state);
  CHECK(resumed.state().step == s.step);
}

TEST_CASE("checkpoint corruption is a structured error") {
  const auto good = encode_checkpoint("a=1\n", tiny_state());
  CHECK_NOTHROW(decode_checkpoint(good));

  auto bad_length = good;
  bad_length[16] = 0xff;  // config length far past the end
  CHECK_THROWS_AS(decode_checkpoint(bad_length), CheckpointError);

  auto bad_magic = good;
  bad_magic[3] = '2';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), CheckpointError);

  auto bad_version = good;
  bad_version[4] = 2;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), CheckpointError);

  for (size_t cut : {size_t{3}, size_t{20}, good.size() - 1}) {
    const std::vector<uint8_t> truncated(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(decode_checkpoint(truncated), CheckpointError);
  }
  auto trailing = good;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), CheckpointError);

  ScratchDir dir("ckpt_bad");
  write_bytes(dir / "x.vmc", bad_length);
  CHECK_THROWS_AS(load_checkpoint(dir / "x.vmc"), DataError);
  CHECK(read_bytes(dir / "x.vmc") == bad_length);
}

TEST_CASE("config parsing") {
  const std::string text = format_run_config(RunConfig{});
  CHECK(format_run_config(parse_run_config(text)) == text);

  const auto pos = text.find("momentum");
  std::string missing = text;
  missing.erase(pos, text.find('\n', pos) - pos + 1);
  try {
    parse_run_config(missing);
    FAIL("no throw");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("momentum") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_run_config(text + "bogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(text + "lr = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(text, {{"lr", "fast"}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(text, {{"nope", "1"}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(text, {{"mask_ratio", "1.0"}}), ConfigError);

  const RunConfig o = parse_run_config("# leading comment\n" + text, {{"gamma", "0.5"}, {"betas", "0.8,0.9"}});
  CHECK(o.train.gamma == 0.5);
  CHECK(o.train.betas[0] == 0.8);
  CHECK(o.train.betas[1] == 0.9);
}

TEST_CASE("content_hash matches git blob hashing") {
  CHECK(content_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(content_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}
