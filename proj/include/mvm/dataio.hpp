#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvm/tensor.hpp"

namespace mvm {

/// Malformed or truncated input file. `offset` is the byte position where
/// parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, uint64_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  uint64_t offset() const { return offset_; }

 private:
  uint64_t offset_;
};

/// Missing files, inconsistent sequences, unusable datasets.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Integer label image; 0 is background.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> ids;

  uint8_t at(int y, int x) const { return ids[static_cast<size_t>(y * width + x)]; }
  bool operator==(const LabelMap&) const = default;
};

// PPM (P6, maxval 255) <-> [3,H,W] tensors in [0,1]; PGM (P5) <-> LabelMap.

Tensor decode_ppm(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_ppm(const Tensor& frame);
Tensor read_frame(const std::filesystem::path& path);
void write_frame(const std::filesystem::path& path, const Tensor& frame);

LabelMap decode_pgm(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_pgm(const LabelMap& labels);
LabelMap read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const LabelMap& labels);

std::vector<uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<uint8_t>& bytes);

enum class ShapeKind { circle, square, triangle };

/// One rigid shape moving at constant velocity: center(t) = start + t * velocity.
struct ShapeTrack {
  ShapeKind kind = ShapeKind::circle;
  double radius = 0.0;  // circle radius, half side, or half base/height
  double cx = 0.0, cy = 0.0;
  double vx = 0.0, vy = 0.0;
  double color[3] = {0.0, 0.0, 0.0};

  double center_x(int t) const { return cx + t * vx; }
  double center_y(int t) const { return cy + t * vy; }
  /// Hard-edged membership test for the pixel center (px + 0.5, py + 0.5).
  bool covers(int t, int px, int py) const;
};

struct Sequence {
  std::string name;
  std::vector<Tensor> frames;     // each [3,H,W]
  std::vector<LabelMap> labels;   // empty or one per frame
  std::vector<ShapeTrack> tracks; // synthetic sequences only

  int height() const { return frames.empty() ? 0 : static_cast<int>(frames[0].size(1)); }
  int width() const { return frames.empty() ? 0 : static_cast<int>(frames[0].size(2)); }
};

/// Deterministic moving-shapes videos: 1-3 hard-edged colored shapes over a
/// smooth textured background, with exact per-pixel label maps (later shapes
/// occlude earlier ones; label k marks shape k).
std::vector<Sequence> gen_synthetic(uint64_t seed, int num_sequences, int frames_per_seq, int size);

/// Lays out `root/<name>/<%05d>.ppm` and `root/<name>/labels/<%05d>.pgm`.
void write_store(const std::filesystem::path& root, const std::vector<Sequence>& sequences);

/// Directory-backed collection of frame sequences.
class SequenceStore {
 public:
  struct Entry {
    std::string name;
    std::vector<std::filesystem::path> frames;
    std::vector<std::filesystem::path> labels;
  };

  /// Indexes `root`; each subdirectory holding .ppm files is one sequence,
  /// frames ordered lexicographically.
  static SequenceStore open(const std::filesystem::path& root);

  const std::filesystem::path& root() const { return root_; }
  const std::vector<Entry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

  /// Reads one sequence; frames must share dimensions.
  Sequence load(size_t index) const;
  std::vector<Sequence> load_all() const;

 private:
  std::filesystem::path root_;
  std::vector<Entry> entries_;
};

}  // namespace mvm
