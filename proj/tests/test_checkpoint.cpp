#include <filesystem>

#include "advrl/checkpoint.hpp"
#include "advrl/errors.hpp"
#include "doctest.h"

using namespace advrl;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.magic = kVictimMagic;
  c.classes = 3;
  c.features = 4;
  LayerRecord a{Mat(2, 4), Vec(2)}, b{Mat(3, 2), Vec(3)};
  a.weight << 1, 2, 3, 4, 5, 6, 7, 8;
  a.bias << 0.5, -0.5;
  b.weight << 0.25, -1, 2, 3, -4, 0.125;
  b.bias << 1, 2, 3;
  c.layers = {a, b};
  return c;
}

}  // namespace

TEST_CASE("checkpoint header layout is little-endian and exact") {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  REQUIRE(bytes.size() == 20 + (8 + 4 * 8 + 4 * 2) + (8 + 4 * 6 + 4 * 3));
  CHECK(bytes[0] == 'A');
  CHECK(bytes[3] == 'L');
  CHECK(bytes[4] == 1);  // version
  CHECK(bytes[5] == 0);
  CHECK(bytes[8] == 3);   // k
  CHECK(bytes[12] == 4);  // n
  CHECK(bytes[16] == 2);  // layers
  CHECK(bytes[20] == 2);  // rows of layer 0
  CHECK(bytes[24] == 4);  // cols of layer 0
  // f32 1.0 = 0x3f800000 little-endian.
  CHECK(bytes[28] == 0x00);
  CHECK(bytes[31] == 0x3f);
}

TEST_CASE("checkpoint round-trips through bytes and files") {
  Checkpoint c = sample_checkpoint();
  c.trailer = "key=value\nother=2";
  const Checkpoint back = decode_checkpoint(encode_checkpoint(c));
  CHECK(back.magic == c.magic);
  CHECK(back.classes == 3);
  CHECK(back.features == 4);
  REQUIRE(back.layers.size() == 2);
  CHECK(back.layers[0].weight == c.layers[0].weight);
  CHECK(back.layers[1].bias == c.layers[1].bias);
  CHECK(back.trailer == c.trailer);

  const auto path = std::filesystem::temp_directory_path() / "advrl_ckpt_test.bin";
  write_checkpoint(path, c);
  CHECK(encode_checkpoint(read_checkpoint(path)) == encode_checkpoint(c));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_checkpoint(path), IoError);
}

TEST_CASE("corrupt checkpoints are rejected") {
  auto bytes = encode_checkpoint(sample_checkpoint());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), MalformedFile);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(truncated), MalformedFile);
  CHECK_THROWS_AS(decode_checkpoint({}), MalformedFile);
}
