#include <algorithm>
#include <set>

#include "advrl/dataset.hpp"
#include "advrl/errors.hpp"
#include "doctest.h"

using namespace advrl;

namespace {

std::vector<std::uint8_t> random_cifar_bytes(std::size_t records, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<std::uint8_t> bytes(records * kCifarRecordBytes);
  for (std::size_t r = 0; r < records; ++r) {
    bytes[r * kCifarRecordBytes] = static_cast<std::uint8_t>(rng.uniform_int(10));
    for (std::size_t i = 1; i < kCifarRecordBytes; ++i)
      bytes[r * kCifarRecordBytes + i] = static_cast<std::uint8_t>(rng.uniform_int(256));
  }
  return bytes;
}

}  // namespace

TEST_CASE("CIFAR parser examples") {
  std::vector<std::uint8_t> rec(kCifarRecordBytes, 255);
  rec[0] = 7;
  const auto parsed = parse_cifar10_binary(rec, 40);
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0].y == 7);
  CHECK(parsed[0].source_id == 40);
  CHECK(parsed[0].x0.size() == 3072);
  CHECK(parsed[0].x0.minCoeff() == 1.0);
  CHECK(parse_cifar10_binary({}).empty());

  // Channel-major layout: byte 1 is R(0,0), byte 1025 is G(0,0).
  std::vector<std::uint8_t> layout(kCifarRecordBytes, 0);
  layout[1025] = 51;
  CHECK(parse_cifar10_binary(layout)[0].x0[1024] == doctest::Approx(0.2));
}

TEST_CASE("CIFAR round-trip is bit-exact") {
  const auto bytes = random_cifar_bytes(25, 3);
  const auto parsed = parse_cifar10_binary(bytes);
  CHECK(serialize_records(parsed) == bytes);
  for (const auto& s : parsed) {
    CHECK(s.x0.minCoeff() >= 0.0);
    CHECK(s.x0.maxCoeff() <= 1.0);
  }
}

TEST_CASE("CIFAR malformed and corrupt inputs") {
  auto bytes = random_cifar_bytes(3, 4);
  bytes.pop_back();
  try {
    parse_cifar10_binary(bytes);
    FAIL("expected MalformedFile");
  } catch (const MalformedFile& e) {
    CHECK(e.byte_offset == 2 * kCifarRecordBytes);
  }
  bytes = random_cifar_bytes(3, 4);
  bytes[2 * kCifarRecordBytes] = 10;
  try {
    parse_cifar10_binary(bytes);
    FAIL("expected CorruptRecord");
  } catch (const CorruptRecord& e) {
    CHECK(e.record_index == 2);
  }
  CHECK_THROWS_AS(load_cifar10_file("/nonexistent/data_batch_1.bin"), IoError);
}

TEST_CASE("synthetic generation invariants") {
  SyntheticSpec spec;
  spec.per_class = 20;
  const Dataset a = generate_synthetic(spec, 11, 100);
  const Dataset b = generate_synthetic(spec, 11, 100);
  REQUIRE(a.size() == 60);
  CHECK(a.shape.size() == 768);
  CHECK(a.classes == 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.samples[i].x0 == b.samples[i].x0);
    CHECK(a.samples[i].y == static_cast<int>(i / 20));
    CHECK(a.samples[i].source_id == 100 + static_cast<std::int64_t>(i));
    CHECK(a.samples[i].x0.minCoeff() >= 0.0);
    CHECK(a.samples[i].x0.maxCoeff() <= 1.0);
  }
  CHECK(label_histogram(a) == std::vector<int>{20, 20, 20});
  CHECK(generate_synthetic(spec, 12).samples[0].x0 != a.samples[0].x0);

  spec.noise = 0.0;
  const Dataset clean = generate_synthetic(spec, 11);
  const auto templates = synthetic_templates(spec, 11);
  for (const auto& s : clean.samples) CHECK(s.x0 == templates[s.y].cwiseMax(0.0).cwiseMin(1.0));

  // Synthetic data exports to the record format.
  const auto bytes = serialize_records(clean.samples);
  CHECK(bytes.size() == clean.size() * 769);
  CHECK(bytes[769] == 0);
}

TEST_CASE("two-class synthetic task is linearly separable") {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.noise = 0.05;
  spec.per_class = 300;
  const Dataset train = generate_synthetic(spec, 5);
  spec.per_class = 200;
  // Held-out samples: the same templates with independent noise.
  Dataset test = generate_synthetic(spec, 5);
  {
    RngStream rng(77);
    const auto templates = synthetic_templates(spec, 5);
    for (auto& s : test.samples) {
      for (Eigen::Index i = 0; i < s.x0.size(); ++i)
        s.x0[i] = std::clamp(templates[s.y][i] + spec.noise * rng.normal(), 0.0, 1.0);
    }
  }
  // Ridge least-squares linear classifier as the oracle.
  const Eigen::Index n = train.shape.size();
  Mat X(train.size(), n + 1);
  Vec t(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    X.row(i).head(n) = train.samples[i].x0.transpose();
    X(i, n) = 1.0;
    t[i] = train.samples[i].y == 0 ? -1.0 : 1.0;
  }
  const Mat A = X.transpose() * X + 1e-2 * Mat::Identity(n + 1, n + 1);
  const Vec w = A.ldlt().solve(X.transpose() * t);
  int correct = 0;
  for (const auto& s : test.samples) {
    const double score = s.x0.dot(w.head(n)) + w[n];
    correct += (score > 0) == (s.y == 1);
  }
  CHECK(correct / double(test.size()) >= 0.99);
}

TEST_CASE("partition is a disjoint equal split") {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.per_class = 5;
  const Dataset d = generate_synthetic(spec, 1);
  for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
    const auto [x, y] = partition(d, seed);
    CHECK(x.size() == 5);
    CHECK(y.size() == 5);
    std::set<std::int64_t> ids;
    for (const auto& s : x.samples) ids.insert(s.source_id);
    for (const auto& s : y.samples) ids.insert(s.source_id);
    CHECK(ids.size() == 10);
    const auto [x2, y2] = partition(d, seed);
    for (std::size_t i = 0; i < 5; ++i) CHECK(x.samples[i].source_id == x2.samples[i].source_id);
  }
  Dataset odd = d;
  odd.samples.pop_back();
  CHECK_THROWS_AS(partition(odd, 0), InvalidParameter);
}
