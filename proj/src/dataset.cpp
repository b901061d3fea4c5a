#include "advrl/dataset.hpp"

#include <cmath>
#include <string>

#include "advrl/checkpoint.hpp"

namespace advrl {

std::vector<LabeledSample> parse_cifar10_binary(std::span<const std::uint8_t> bytes,
                                                std::int64_t id_offset) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % kCifarRecordBytes;
    throw MalformedFile("CIFAR-10 stream length " + std::to_string(bytes.size()) +
                            " is not a multiple of 3073 (partial record at byte " +
                            std::to_string(offset) + ")",
                        offset);
  }
  const std::size_t records = bytes.size() / kCifarRecordBytes;
  const Eigen::Index n = kCifarShape.size();
  std::vector<LabeledSample> out;
  out.reserve(records);
  for (std::size_t r = 0; r < records; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] >= kCifarClasses) {
      throw CorruptRecord("CIFAR-10 record " + std::to_string(r) + " has label byte " +
                              std::to_string(rec[0]),
                          r);
    }
    LabeledSample s;
    s.y = rec[0];
    s.source_id = id_offset + static_cast<std::int64_t>(r);
    s.x0.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) s.x0[i] = rec[1 + i] / 255.0;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::uint8_t> serialize_records(const std::vector<LabeledSample>& samples) {
  std::vector<std::uint8_t> out;
  for (const auto& s : samples) {
    if (s.y < 0 || s.y > 255) throw InvalidParameter("serialize_records: label exceeds one byte");
    out.push_back(static_cast<std::uint8_t>(s.y));
    for (Eigen::Index i = 0; i < s.x0.size(); ++i) {
      const double v = std::clamp(s.x0[i], 0.0, 1.0);
      out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    }
  }
  return out;
}

Dataset load_cifar10_file(const std::filesystem::path& path, std::int64_t id_offset) {
  const auto bytes = read_file_bytes(path);
  Dataset d;
  d.shape = kCifarShape;
  d.classes = kCifarClasses;
  d.samples = parse_cifar10_binary(bytes, id_offset);
  return d;
}

namespace {

void validate(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw InvalidParameter("synthetic: need at least 2 classes");
  if (spec.side < 4) throw InvalidParameter("synthetic: side must be >= 4");
  if (spec.channels < 1) throw InvalidParameter("synthetic: channels must be >= 1");
  if (spec.per_class < 1) throw InvalidParameter("synthetic: per_class must be >= 1");
  if (!(spec.noise >= 0)) throw InvalidParameter("synthetic: noise must be >= 0");
  if (spec.blobs_per_class < 1 || !(spec.blob_radius > 0)) {
    throw InvalidParameter("synthetic: invalid blob parameters");
  }
}

}  // namespace

std::vector<Vec> synthetic_templates(const SyntheticSpec& spec, std::uint64_t seed) {
  validate(spec);
  RngStream rng = RngStream(seed).split(0x7e3);
  const int s = spec.side;
  const Eigen::Index n = Eigen::Index(spec.channels) * s * s;
  std::vector<Vec> templates;
  for (int k = 0; k < spec.classes; ++k) {
    Vec t = Vec::Constant(n, spec.background);
    for (int b = 0; b < spec.blobs_per_class; ++b) {
      const double cy = rng.uniform(1.0, s - 2.0);
      const double cx = rng.uniform(1.0, s - 2.0);
      std::vector<double> colour(spec.channels);
      for (auto& c : colour) c = rng.sign() * spec.blob_amplitude;
      for (int ch = 0; ch < spec.channels; ++ch) {
        for (int yy = 0; yy < s; ++yy) {
          for (int xx = 0; xx < s; ++xx) {
            const double r2 = (yy - cy) * (yy - cy) + (xx - cx) * (xx - cx);
            t[(ch * s + yy) * s + xx] +=
                colour[ch] * std::exp(-r2 / (2.0 * spec.blob_radius * spec.blob_radius));
          }
        }
      }
    }
    templates.push_back(clip_unit(t));
  }
  return templates;
}

Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed, std::int64_t id_offset) {
  const auto templates = synthetic_templates(spec, seed);
  RngStream noise = RngStream(seed).split(0x401 + static_cast<std::uint64_t>(id_offset));
  Dataset d;
  d.shape = {spec.channels, spec.side, spec.side};
  d.classes = spec.classes;
  std::int64_t id = id_offset;
  for (int k = 0; k < spec.classes; ++k) {
    for (int m = 0; m < spec.per_class; ++m) {
      LabeledSample s;
      s.y = k;
      s.source_id = id++;
      s.x0 = templates[k];
      if (spec.noise > 0) {
        for (Eigen::Index i = 0; i < s.x0.size(); ++i) s.x0[i] += spec.noise * noise.normal();
        s.x0 = clip_unit(s.x0);
      }
      d.samples.push_back(std::move(s));
    }
  }
  return d;
}

std::pair<Dataset, Dataset> partition(const Dataset& test, std::uint64_t seed) {
  if (test.size() % 2 != 0) {
    throw InvalidParameter("partition: sample count " + std::to_string(test.size()) + " is odd");
  }
  std::vector<std::size_t> order(test.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  RngStream rng(seed, 0xd5);
  rng.shuffle(order);
  Dataset d{test.shape, test.classes, {}}, d_prime{test.shape, test.classes, {}};
  const std::size_t half = order.size() / 2;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < half ? d : d_prime).samples.push_back(test.samples[order[i]]);
  }
  return {std::move(d), std::move(d_prime)};
}

std::vector<int> label_histogram(const Dataset& d) {
  std::vector<int> h(static_cast<std::size_t>(d.classes), 0);
  for (const auto& s : d.samples) ++h.at(static_cast<std::size_t>(s.y));
  return h;
}

}  // namespace advrl
