#include "advrl/victim.hpp"

#include <cmath>
#include <numeric>

namespace advrl {

VictimSpec default_victim_spec(const nn::ImageShape& shape, int classes) {
  VictimSpec spec;
  spec.shape = shape;
  spec.classes = classes;
  if (shape.height >= 32) {
    spec.conv1 = 32;
    spec.conv2 = 64;
    spec.hidden = 128;
  }
  return spec;
}

nn::Sequential Classifier::build(const VictimSpec& spec) {
  if (spec.classes < 2) throw InvalidParameter("victim: need at least 2 classes");
  nn::Sequential net;
  if (spec.arch == VictimArch::Conv) {
    auto& c1 = net.add<nn::Conv2d>(spec.shape, spec.conv1);
    net.add<nn::Relu>(c1.out_features());
    auto& c2 = net.add<nn::Conv2d>(c1.out_shape(), spec.conv2);
    net.add<nn::Relu>(c2.out_features());
    net.add<nn::Dense>(c2.out_features(), spec.hidden);
  } else {
    net.add<nn::Dense>(spec.shape.size(), spec.hidden);
    net.add<nn::Relu>(spec.hidden);
    net.add<nn::Dense>(spec.hidden, spec.hidden);
  }
  net.add<nn::Relu>(spec.hidden);
  net.add<nn::Dense>(spec.hidden, spec.classes);
  return net;
}

Classifier::Classifier(const VictimSpec& spec, RngStream& rng) : spec_(spec), net_(build(spec)) {
  for (nn::Layer* layer : net_.weighted_layers()) nn::fan_in_init(*layer->weight(), rng);
  // Small output layer keeps the untrained classifier near uniform.
  *net_.weighted_layers().back()->weight() *= 0.1;
}

Vec Classifier::forward(const Vec& x) const {
  if (x.size() != features()) {
    throw DimensionMismatch("victim forward: expected " + std::to_string(features()) +
                            " features, got " + std::to_string(x.size()));
  }
  return softmax(net_.infer(x).col(0));
}

Mat Classifier::logits(const Mat& xs) const {
  if (xs.rows() != features()) throw DimensionMismatch("victim logits: input size mismatch");
  return net_.infer(xs);
}

int Classifier::predict(const Vec& x) const {
  Eigen::Index arg;
  forward(x).maxCoeff(&arg);
  return static_cast<int>(arg);
}

double Classifier::accuracy(const Dataset& data) const {
  if (data.empty()) return 0.0;
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, data.size() - start);
    Mat xs(features(), static_cast<Eigen::Index>(count));
    for (std::size_t i = 0; i < count; ++i) xs.col(static_cast<Eigen::Index>(i)) = data.samples[start + i].x0;
    const Mat z = logits(xs);
    for (std::size_t i = 0; i < count; ++i) {
      Eigen::Index arg;
      z.col(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
      if (arg == data.samples[start + i].y) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

Checkpoint Classifier::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.magic = kVictimMagic;
  ckpt.classes = static_cast<std::uint32_t>(spec_.classes);
  ckpt.features = static_cast<std::uint32_t>(features());
  auto net = net_;
  for (nn::Layer* layer : net.weighted_layers()) ckpt.layers.push_back({*layer->weight(), *layer->bias()});
  return ckpt;
}

Classifier Classifier::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.magic != kVictimMagic) throw MalformedFile("not a victim checkpoint", 0);
  if (ckpt.layers.size() < 3) throw MalformedFile("victim checkpoint: too few layers", 0);
  VictimSpec spec;
  spec.classes = static_cast<int>(ckpt.classes);
  const auto n = static_cast<Eigen::Index>(ckpt.features);
  const auto& first = ckpt.layers.front();
  if (first.weight.cols() == n) {
    spec.arch = VictimArch::Mlp;
    spec.hidden = static_cast<int>(first.weight.rows());
    // Geometry is irrelevant for dense inputs; store as a single-channel row.
    spec.shape = {1, 1, static_cast<int>(n)};
  } else {
    if (ckpt.layers.size() != 4 || first.weight.cols() % 9 != 0) {
      throw MalformedFile("victim checkpoint: unrecognised layer layout", 0);
    }
    const int channels = static_cast<int>(first.weight.cols() / 9);
    const int side = static_cast<int>(std::lround(std::sqrt(double(n) / channels)));
    if (Eigen::Index(channels) * side * side != n) {
      throw MalformedFile("victim checkpoint: features are not a square image", 0);
    }
    spec.shape = {channels, side, side};
    spec.conv1 = static_cast<int>(first.weight.rows());
    spec.conv2 = static_cast<int>(ckpt.layers[1].weight.rows());
    spec.hidden = static_cast<int>(ckpt.layers[2].weight.rows());
  }
  nn::Sequential net = build(spec);
  auto layers = net.weighted_layers();
  if (layers.size() != ckpt.layers.size()) throw MalformedFile("victim checkpoint: layer count", 0);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Mat& w = *layers[i]->weight();
    if (w.rows() != ckpt.layers[i].weight.rows() || w.cols() != ckpt.layers[i].weight.cols()) {
      throw MalformedFile("victim checkpoint: layer " + std::to_string(i) + " shape mismatch", 0);
    }
    w = ckpt.layers[i].weight;
    *layers[i]->bias() = ckpt.layers[i].bias;
  }
  return Classifier(spec, std::move(net));
}

VictimTrainResult train_victim(const Dataset& train, const Dataset& test, const VictimSpec& spec,
                               const VictimTrainConfig& config, RngStream& rng) {
  if (train.empty()) throw InvalidParameter("train_victim: empty training set");
  if (config.epochs < 0 || config.batch_size < 1) {
    throw InvalidParameter("train_victim: invalid epochs or batch size");
  }
  for (const auto& s : train.samples) {
    if (s.y < 0 || s.y >= spec.classes) throw InvalidParameter("train_victim: label out of range");
  }
  RngStream init_rng = rng.split(1);
  RngStream order_rng = rng.split(2);
  Classifier model(spec, init_rng);
  nn::Sequential& net = model.net();
  const auto params = net.params();
  nn::SgdMomentum opt(config.lr, config.momentum, config.weight_decay);
  nn::ReduceOnPlateau plateau(config.plateau_factor, config.plateau_patience);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const Eigen::Index n = model.features();
  int epoch = 0;
  for (; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min<std::size_t>(config.batch_size, order.size() - start);
      Mat xs(n, static_cast<Eigen::Index>(count));
      std::vector<int> ys(count);
      for (std::size_t i = 0; i < count; ++i) {
        xs.col(static_cast<Eigen::Index>(i)) = train.samples[order[start + i]].x0;
        ys[i] = train.samples[order[start + i]].y;
      }
      net.zero_grad();
      const Mat z = net.forward(xs);
      Mat grad(z.rows(), z.cols());
      for (Eigen::Index b = 0; b < z.cols(); ++b) {
        const Vec p = softmax(z.col(b));
        epoch_loss -= std::log(std::max(p[ys[b]], kProbFloor));
        grad.col(b) = p;
        grad(ys[b], b) -= 1.0;
      }
      grad /= static_cast<double>(count);
      net.backward(grad);
      opt.step(params);
    }
    opt.set_lr(plateau.observe(epoch_loss / static_cast<double>(train.size()), opt.lr()));
  }
  for (const auto& p : params) {
    if (!p.values().allFinite()) throw TrainingFailed("victim weights diverged", 0.0);
  }
  VictimTrainResult result{model, model.accuracy(train), test.empty() ? 0.0 : model.accuracy(test),
                           epoch};
  const double achieved = test.empty() ? result.train_acc : result.test_acc;
  if (achieved < config.target_acc) {
    throw TrainingFailed("victim accuracy " + std::to_string(achieved) + " below target " +
                             std::to_string(config.target_acc),
                         achieved);
  }
  return result;
}

}  // namespace advrl
