#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "elp/tensor.hpp"
#include "elp/training.hpp"
#include "elp/unfolding.hpp"

namespace elp::io {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// VCUBE: "VCB1", u32 rank, rank x u32 dims, f32 payload, all little-endian,
// row-major.

void write_vcube(std::ostream& os, const Tensor& t);
/// `source` names the origin in error messages.
Tensor read_vcube(std::istream& is, const std::string& source);

void write_vcube(const fs::path& path, const Tensor& t);
Tensor read_vcube(const fs::path& path);

/// Writes to a sibling temporary file and renames it over `path`.
void atomic_write(const fs::path& path, const std::string& bytes);

/// P5, 8-bit: clamp to [0,1], scale by 255, round half up.
void write_pgm(const fs::path& path, const Tensor& plane);
std::uint8_t pgm_level(double value);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  std::uint32_t version = kCheckpointVersion;
  Index single_stages = 0;
  Index ensemble_stages = 0;
  CnnConfig cnn;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
};

struct Checkpoint {
  CheckpointInfo info;
  ElpNetwork network;
};

void save_checkpoint(const fs::path& path, ElpNetwork& network, std::uint64_t seed,
                     std::int64_t step);
Checkpoint load_checkpoint(const fs::path& path);

/// Network with the descriptor's topology and all-zero weights.
ElpNetwork empty_network(const CheckpointInfo& info);

// ---------------------------------------------------------------------------
// Configuration: one `key = value` per line, '#' starts a comment.

struct ConfigEntry {
  std::string value;
  int line = 0;
};

using ConfigMap = std::map<std::string, ConfigEntry>;

ConfigMap parse_config(std::istream& is);
ConfigMap read_config(const fs::path& path);

/// Training options as read from a config file.
struct TrainSettings {
  TrainConfig train;
  Index corpus_size = 24;  // synthetic scenes generated for --synth
};

/// Unknown keys and malformed values raise ParseError with the line number.
TrainSettings train_settings(const ConfigMap& config);

/// The documented keys with a one-line description each.
const std::vector<std::pair<std::string, std::string>>& config_keys();

}  // namespace elp::io
