#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advrl/numerics.hpp"

namespace advrl {

/// One weighted layer as stored on disk: rows x cols row-major f32 weights
/// followed by `rows` f32 biases.
struct LayerRecord {
  Mat weight;
  Vec bias;
};

/// Little-endian binary container shared by victim ("AVRL") and policy
/// ("AVRP") checkpoints:
///   magic[4] | version u32 | k u32 | n u32 | layer count u32
///   per layer: rows u32 | cols u32 | f32 weights | f32 biases
/// Policy files append a u32 length and a key=value text trailer.
struct Checkpoint {
  std::array<char, 4> magic{};
  std::uint32_t version = 1;
  std::uint32_t classes = 0;
  std::uint32_t features = 0;
  std::vector<LayerRecord> layers;
  std::string trailer;
};

inline constexpr std::array<char, 4> kVictimMagic{'A', 'V', 'R', 'L'};
inline constexpr std::array<char, 4> kPolicyMagic{'A', 'V', 'R', 'P'};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace advrl
