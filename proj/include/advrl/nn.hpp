#pragma once

#include <memory>
#include <string>
#include <vector>

#include "advrl/numerics.hpp"

namespace advrl::nn {

/// Channel-major image geometry; a flattened sample is indexed
/// c * height * width + row * width + col.
struct ImageShape {
  int channels = 3;
  int height = 16;
  int width = 16;

  Eigen::Index size() const { return Eigen::Index(channels) * height * width; }
  bool operator==(const ImageShape&) const = default;
};

/// Non-owning view of one trainable tensor and its gradient accumulator.
struct ParamBlock {
  std::string name;
  double* value;
  double* grad;
  Eigen::Index size;

  Eigen::Map<Vec> values() const { return {value, size}; }
  Eigen::Map<Vec> grads() const { return {grad, size}; }
};

/// A layer maps a (features x batch) matrix to another. forward() caches what
/// backward() needs; backward() accumulates parameter gradients and returns
/// the gradient with respect to its input.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Mat forward(const Mat& in) = 0;
  /// Cache-free forward pass; safe to call concurrently.
  virtual Mat infer(const Mat& in) const = 0;
  virtual Mat backward(const Mat& grad_out) = 0;
  virtual std::vector<ParamBlock> params() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual Eigen::Index out_features() const = 0;
  /// Weight matrix / bias for layers that carry them (checkpointing).
  virtual Mat* weight() { return nullptr; }
  virtual Vec* bias() { return nullptr; }
};

class Dense final : public Layer {
 public:
  Dense(Eigen::Index in, Eigen::Index out);

  Mat forward(const Mat& in) override;
  Mat infer(const Mat& in) const override;
  Mat backward(const Mat& grad_out) override;
  std::vector<ParamBlock> params() override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }
  Eigen::Index out_features() const override { return w_.rows(); }
  Mat* weight() override { return &w_; }
  Vec* bias() override { return &b_; }

 private:
  Mat w_, dw_;
  Vec b_, db_;
  Mat in_;
};

/// Square-kernel 2-D convolution implemented as im2col + GEMM.
class Conv2d final : public Layer {
 public:
  Conv2d(ImageShape in, int out_channels, int kernel = 3, int stride = 2, int padding = 1);

  Mat forward(const Mat& in) override;
  Mat infer(const Mat& in) const override;
  Mat backward(const Mat& grad_out) override;
  std::vector<ParamBlock> params() override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  Eigen::Index out_features() const override { return out_shape_.size(); }
  Mat* weight() override { return &w_; }
  Vec* bias() override { return &b_; }

  const ImageShape& out_shape() const { return out_shape_; }

 private:
  ImageShape in_shape_, out_shape_;
  int kernel_;
  // For each (output position, patch column): flat input index or -1 for padding.
  std::vector<int> gather_;
  Mat w_, dw_;  // out_channels x (in_channels * kernel^2)
  Vec b_, db_;
  Mat build_patches(const Mat& in) const;
  Mat apply(const Mat& patches, Eigen::Index batch) const;

  Mat patches_;  // (batch * positions) x (in_channels * kernel^2)
  Eigen::Index batch_ = 0;
};

class Relu final : public Layer {
 public:
  explicit Relu(Eigen::Index features) : features_(features) {}
  Mat forward(const Mat& in) override;
  Mat infer(const Mat& in) const override { return in.cwiseMax(0.0); }
  Mat backward(const Mat& grad_out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }
  Eigen::Index out_features() const override { return features_; }

 private:
  Eigen::Index features_;
  Mat in_;
};

class Tanh final : public Layer {
 public:
  explicit Tanh(Eigen::Index features) : features_(features) {}
  Mat forward(const Mat& in) override;
  Mat infer(const Mat& in) const override { return in.array().tanh().matrix(); }
  Mat backward(const Mat& grad_out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Tanh>(*this); }
  Eigen::Index out_features() const override { return features_; }

 private:
  Eigen::Index features_;
  Mat out_;
};

/// Ordered stack of layers with value semantics.
class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Mat forward(const Mat& in);
  Mat infer(const Mat& in) const;
  Mat backward(const Mat& grad_out);
  std::vector<ParamBlock> params();
  void zero_grad();

  /// Layers carrying a weight matrix, in order.
  std::vector<Layer*> weighted_layers();
  std::size_t size() const { return layers_.size(); }
  Layer& operator[](std::size_t i) { return *layers_[i]; }
  const Layer& operator[](std::size_t i) const { return *layers_[i]; }
  Eigen::Index out_features() const { return layers_.back()->out_features(); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Scaled orthogonal initialisation of a weight matrix; biases zeroed.
void orthogonal_init(Mat& w, double gain, RngStream& rng);
/// He/Kaiming uniform-style initialisation with fan-in scaling.
void fan_in_init(Mat& w, RngStream& rng);

Eigen::Index parameter_count(const std::vector<ParamBlock>& blocks);
/// Global l2 norm of all gradients.
double grad_norm(const std::vector<ParamBlock>& blocks);
void clip_grad_norm(const std::vector<ParamBlock>& blocks, double max_norm);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-5);
  void step(const std::vector<ParamBlock>& blocks);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, epsilon_;
  long t_ = 0;
  std::vector<Vec> m_, v_;
};

/// SGD with heavy-ball momentum and L2 weight decay (PyTorch semantics).
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum, double weight_decay);
  void step(const std::vector<ParamBlock>& blocks);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_, momentum_, weight_decay_;
  std::vector<Vec> velocity_;
};

/// Multiplies the learning rate by `factor` once the monitored loss has not
/// improved (relative threshold 1e-4) for more than `patience` epochs.
class ReduceOnPlateau {
 public:
  ReduceOnPlateau(double factor = 0.1, int patience = 10, double min_lr = 0.0);
  /// Returns the learning rate to use after observing `loss`.
  double observe(double loss, double lr);

 private:
  double factor_, min_lr_;
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
};

}  // namespace advrl::nn
