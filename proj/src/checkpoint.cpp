#include "advrl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace advrl {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }

  void raw(char* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw MalformedFile("checkpoint truncated", pos_);
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), ckpt.magic.begin(), ckpt.magic.end());
  put_u32(out, ckpt.version);
  put_u32(out, ckpt.classes);
  put_u32(out, ckpt.features);
  put_u32(out, static_cast<std::uint32_t>(ckpt.layers.size()));
  for (const auto& layer : ckpt.layers) {
    if (layer.bias.size() != layer.weight.rows()) {
      throw DimensionMismatch("checkpoint layer: bias length must equal weight rows");
    }
    put_u32(out, static_cast<std::uint32_t>(layer.weight.rows()));
    put_u32(out, static_cast<std::uint32_t>(layer.weight.cols()));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) put_f32(out, layer.weight(r, c));
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) put_f32(out, layer.bias[r]);
  }
  if (!ckpt.trailer.empty()) {
    put_u32(out, static_cast<std::uint32_t>(ckpt.trailer.size()));
    out.insert(out.end(), ckpt.trailer.begin(), ckpt.trailer.end());
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  Checkpoint ckpt;
  in.raw(ckpt.magic.data(), 4);
  if (ckpt.magic != kVictimMagic && ckpt.magic != kPolicyMagic) {
    throw MalformedFile("checkpoint: unknown magic", 0);
  }
  ckpt.version = in.u32();
  ckpt.classes = in.u32();
  ckpt.features = in.u32();
  const std::uint32_t count = in.u32();
  for (std::uint32_t l = 0; l < count; ++l) {
    const std::uint32_t rows = in.u32();
    const std::uint32_t cols = in.u32();
    if (std::uint64_t(rows) * cols * 4 > in.remaining()) {
      throw MalformedFile("checkpoint: layer exceeds file size", in.pos());
    }
    LayerRecord rec{Mat(rows, cols), Vec(rows)};
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) rec.weight(r, c) = in.f32();
    }
    for (std::uint32_t r = 0; r < rows; ++r) rec.bias[r] = in.f32();
    ckpt.layers.push_back(std::move(rec));
  }
  if (in.remaining() > 0) {
    const std::uint32_t len = in.u32();
    ckpt.trailer.resize(len);
    in.raw(ckpt.trailer.data(), len);
    if (in.remaining() != 0) throw MalformedFile("checkpoint: trailing bytes", in.pos());
  }
  return ckpt;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace advrl
