#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mvm/dataio.hpp"
#include "mvm/trainer.hpp"

namespace mvm {

/// Bad magic, unsupported version, truncated or inconsistent checkpoint.
class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

/// "VMC1" checkpoint, all integers and floats little-endian:
///
///   magic    4 bytes "VMC1"
///   version  u32 (= 1)
///   step     u64
///   config   u64 length + bytes (canonical config echo)
///   rng      u64 length + bytes (engine state text)
///   adam_t   u64
///   tables   online, target, adam_m, adam_v; each
///              u32 count, then per entry:
///              u32 name length + name, u8 dtype (1 = f64), u32 ndim,
///              ndim x u64 dims, prod(dims) x f64
///
/// The adam tables reuse the parameter names and shapes.
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_text;
  TrainerState state;
};

std::vector<uint8_t> encode_checkpoint(const std::string& config_text, const TrainerState& state);

/// Parses the whole buffer before returning; nothing is produced on error.
Checkpoint decode_checkpoint(const std::vector<uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::string& config_text,
                     const TrainerState& state);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mvm
