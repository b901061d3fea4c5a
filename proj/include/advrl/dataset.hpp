#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "advrl/nn.hpp"
#include "advrl/numerics.hpp"

namespace advrl {

struct LabeledSample {
  Vec x0;  // entries in [0, 1]
  int y = 0;
  std::int64_t source_id = 0;
};

struct Dataset {
  nn::ImageShape shape;
  int classes = 0;
  std::vector<LabeledSample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

/// D (attack training) and D' (held-out attack evaluation) plus the victim's
/// own training data.
struct DatasetSplit {
  Dataset train;
  Dataset attack_train;
  Dataset attack_test;
};

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr int kCifarClasses = 10;
inline constexpr nn::ImageShape kCifarShape{3, 32, 32};

/// Parses the CIFAR-10 binary layout: per record one label byte followed by
/// 1024 R, 1024 G, 1024 B bytes (32x32 row-major), pixels scaled by 1/255.
/// Source ids are `id_offset + record index`.
std::vector<LabeledSample> parse_cifar10_binary(std::span<const std::uint8_t> bytes,
                                                std::int64_t id_offset = 0);

/// Inverse of parse_cifar10_binary (pixels rounded from x * 255). Works for any
/// image shape; records are 1 label byte + n pixel bytes.
std::vector<std::uint8_t> serialize_records(const std::vector<LabeledSample>& samples);

Dataset load_cifar10_file(const std::filesystem::path& path, std::int64_t id_offset = 0);

struct SyntheticSpec {
  int classes = 3;
  int side = 16;
  int channels = 3;
  int per_class = 200;
  double noise = 0.12;
  int blobs_per_class = 1;
  double blob_amplitude = 0.2;
  double blob_radius = 1.0;
  double background = 0.5;
};

/// Class templates are fixed blob patterns drawn once from `seed`; every
/// sample is clip(template + N(0, noise^2)). Samples are ordered class by class.
Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed,
                           std::int64_t id_offset = 0);

/// The noiseless per-class templates used by generate_synthetic.
std::vector<Vec> synthetic_templates(const SyntheticSpec& spec, std::uint64_t seed);

/// Seeded shuffle, first half D, second half D'. Requires an even count.
std::pair<Dataset, Dataset> partition(const Dataset& test, std::uint64_t seed);

std::vector<int> label_histogram(const Dataset& d);

}  // namespace advrl
