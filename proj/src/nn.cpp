#include "advrl/nn.hpp"

#include <cmath>

namespace advrl::nn {

// ---------------------------------------------------------------- Dense

Dense::Dense(Eigen::Index in, Eigen::Index out)
    : w_(Mat::Zero(out, in)), dw_(Mat::Zero(out, in)), b_(Vec::Zero(out)), db_(Vec::Zero(out)) {}

Mat Dense::forward(const Mat& in) {
  if (in.rows() != w_.cols()) {
    throw DimensionMismatch("Dense: expected " + std::to_string(w_.cols()) + " inputs, got " +
                            std::to_string(in.rows()));
  }
  in_ = in;
  Mat out = w_ * in;
  out.colwise() += b_;
  return out;
}

Mat Dense::infer(const Mat& in) const {
  if (in.rows() != w_.cols()) throw DimensionMismatch("Dense: input size mismatch");
  Mat out = w_ * in;
  out.colwise() += b_;
  return out;
}

Mat Dense::backward(const Mat& grad_out) {
  dw_.noalias() += grad_out * in_.transpose();
  db_ += grad_out.rowwise().sum();
  return w_.transpose() * grad_out;
}

std::vector<ParamBlock> Dense::params() {
  return {{"weight", w_.data(), dw_.data(), w_.size()}, {"bias", b_.data(), db_.data(), b_.size()}};
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(ImageShape in, int out_channels, int kernel, int stride, int padding)
    : in_shape_(in), kernel_(kernel) {
  if (kernel < 1 || stride < 1 || padding < 0 || out_channels < 1) {
    throw InvalidParameter("Conv2d: invalid geometry");
  }
  out_shape_.channels = out_channels;
  out_shape_.height = (in.height + 2 * padding - kernel) / stride + 1;
  out_shape_.width = (in.width + 2 * padding - kernel) / stride + 1;
  if (out_shape_.height < 1 || out_shape_.width < 1) {
    throw InvalidParameter("Conv2d: input too small for kernel");
  }
  const int cols = in.channels * kernel * kernel;
  const int positions = out_shape_.height * out_shape_.width;
  gather_.assign(static_cast<std::size_t>(positions) * cols, -1);
  for (int oy = 0; oy < out_shape_.height; ++oy) {
    for (int ox = 0; ox < out_shape_.width; ++ox) {
      const int p = oy * out_shape_.width + ox;
      for (int c = 0; c < in.channels; ++c) {
        for (int ky = 0; ky < kernel; ++ky) {
          for (int kx = 0; kx < kernel; ++kx) {
            const int iy = oy * stride + ky - padding;
            const int ix = ox * stride + kx - padding;
            if (iy < 0 || iy >= in.height || ix < 0 || ix >= in.width) continue;
            const int col = (c * kernel + ky) * kernel + kx;
            gather_[static_cast<std::size_t>(p) * cols + col] = (c * in.height + iy) * in.width + ix;
          }
        }
      }
    }
  }
  w_ = Mat::Zero(out_channels, cols);
  dw_ = Mat::Zero(out_channels, cols);
  b_ = Vec::Zero(out_channels);
  db_ = Vec::Zero(out_channels);
}

Mat Conv2d::build_patches(const Mat& in) const {
  if (in.rows() != in_shape_.size()) {
    throw DimensionMismatch("Conv2d: expected " + std::to_string(in_shape_.size()) +
                            " inputs, got " + std::to_string(in.rows()));
  }
  const Eigen::Index batch = in.cols();
  const Eigen::Index positions = Eigen::Index(out_shape_.height) * out_shape_.width;
  const Eigen::Index cols = w_.cols();
  Mat patches(batch * positions, cols);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const double* src = in.col(b).data();
    for (Eigen::Index p = 0; p < positions; ++p) {
      const int* g = &gather_[static_cast<std::size_t>(p * cols)];
      const Eigen::Index row = b * positions + p;
      for (Eigen::Index c = 0; c < cols; ++c) patches(row, c) = g[c] < 0 ? 0.0 : src[g[c]];
    }
  }
  return patches;
}

Mat Conv2d::apply(const Mat& patches, Eigen::Index batch) const {
  const Eigen::Index positions = Eigen::Index(out_shape_.height) * out_shape_.width;
  Mat flat = patches * w_.transpose();  // (batch*positions) x out_channels
  flat.rowwise() += b_.transpose();
  Mat out(out_shape_.size(), batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    // Column-major block of positions x channels flattens to channel-major order.
    Eigen::Map<Mat>(out.col(b).data(), positions, out_shape_.channels) =
        flat.middleRows(b * positions, positions);
  }
  return out;
}

Mat Conv2d::forward(const Mat& in) {
  patches_ = build_patches(in);
  batch_ = in.cols();
  return apply(patches_, batch_);
}

Mat Conv2d::infer(const Mat& in) const { return apply(build_patches(in), in.cols()); }

Mat Conv2d::backward(const Mat& grad_out) {
  const Eigen::Index positions = Eigen::Index(out_shape_.height) * out_shape_.width;
  const Eigen::Index cols = w_.cols();
  Mat g(batch_ * positions, out_shape_.channels);
  for (Eigen::Index b = 0; b < batch_; ++b) {
    g.middleRows(b * positions, positions) =
        Eigen::Map<const Mat>(grad_out.col(b).data(), positions, out_shape_.channels);
  }
  dw_.noalias() += g.transpose() * patches_;
  db_ += g.colwise().sum().transpose();
  const Mat dpatches = g * w_;
  Mat grad_in = Mat::Zero(in_shape_.size(), batch_);
  for (Eigen::Index b = 0; b < batch_; ++b) {
    double* dst = grad_in.col(b).data();
    for (Eigen::Index p = 0; p < positions; ++p) {
      const int* gi = &gather_[static_cast<std::size_t>(p * cols)];
      const Eigen::Index row = b * positions + p;
      for (Eigen::Index c = 0; c < cols; ++c) {
        if (gi[c] >= 0) dst[gi[c]] += dpatches(row, c);
      }
    }
  }
  return grad_in;
}

std::vector<ParamBlock> Conv2d::params() {
  return {{"weight", w_.data(), dw_.data(), w_.size()}, {"bias", b_.data(), db_.data(), b_.size()}};
}

// ---------------------------------------------------------------- activations

Mat Relu::forward(const Mat& in) {
  in_ = in;
  return in.cwiseMax(0.0);
}

Mat Relu::backward(const Mat& grad_out) {
  return (in_.array() > 0.0).select(grad_out, 0.0);
}

Mat Tanh::forward(const Mat& in) {
  out_ = in.array().tanh().matrix();
  return out_;
}

Mat Tanh::backward(const Mat& grad_out) {
  return (grad_out.array() * (1.0 - out_.array().square())).matrix();
}

// ---------------------------------------------------------------- Sequential

Sequential::Sequential(const Sequential& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

Mat Sequential::forward(const Mat& in) {
  Mat x = in;
  for (auto& l : layers_) x = l->forward(x);
  return x;
}

Mat Sequential::infer(const Mat& in) const {
  Mat x = in;
  for (const auto& l : layers_) x = l->infer(x);
  return x;
}

Mat Sequential::backward(const Mat& grad_out) {
  Mat g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

std::vector<ParamBlock> Sequential::params() {
  std::vector<ParamBlock> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto& p : layers_[i]->params()) {
      p.name = "layer" + std::to_string(i) + "." + p.name;
      out.push_back(p);
    }
  }
  return out;
}

void Sequential::zero_grad() {
  for (auto& p : params()) p.grads().setZero();
}

std::vector<Layer*> Sequential::weighted_layers() {
  std::vector<Layer*> out;
  for (auto& l : layers_) {
    if (l->weight() != nullptr) out.push_back(l.get());
  }
  return out;
}

// ---------------------------------------------------------------- init

void orthogonal_init(Mat& w, double gain, RngStream& rng) {
  const Eigen::Index rows = w.rows(), cols = w.cols();
  const bool tall = rows >= cols;
  Mat a(tall ? rows : cols, tall ? cols : rows);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ() * Mat::Identity(a.rows(), a.cols());
  // Sign correction makes the distribution uniform over orthogonal matrices.
  const Vec d = qr.matrixQR().diagonal();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (d[j] < 0) q.col(j) *= -1.0;
  }
  w = gain * (tall ? q : Mat(q.transpose()));
}

void fan_in_init(Mat& w, RngStream& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(w.cols()));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
}

Eigen::Index parameter_count(const std::vector<ParamBlock>& blocks) {
  Eigen::Index n = 0;
  for (const auto& b : blocks) n += b.size;
  return n;
}

double grad_norm(const std::vector<ParamBlock>& blocks) {
  double sq = 0.0;
  for (const auto& b : blocks) sq += b.grads().squaredNorm();
  return std::sqrt(sq);
}

void clip_grad_norm(const std::vector<ParamBlock>& blocks, double max_norm) {
  const double norm = grad_norm(blocks);
  if (norm > max_norm) {
    const double scale = max_norm / (norm + 1e-6);
    for (const auto& b : blocks) b.grads() *= scale;
  }
}

// ---------------------------------------------------------------- optimizers

Adam::Adam(double lr, double beta1, double beta2, double epsilon)
    : lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

void Adam::step(const std::vector<ParamBlock>& blocks) {
  if (m_.empty()) {
    for (const auto& b : blocks) {
      m_.push_back(Vec::Zero(b.size));
      v_.push_back(Vec::Zero(b.size));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto g = blocks[i].grads();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    blocks[i].values().array() -=
        lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + epsilon_);
  }
}

SgdMomentum::SgdMomentum(double lr, double momentum, double weight_decay)
    : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

void SgdMomentum::step(const std::vector<ParamBlock>& blocks) {
  if (velocity_.empty()) {
    for (const auto& b : blocks) velocity_.push_back(Vec::Zero(b.size));
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const Vec g = blocks[i].grads() + weight_decay_ * blocks[i].values();
    velocity_[i] = momentum_ * velocity_[i] + g;
    blocks[i].values() -= lr_ * velocity_[i];
  }
}

ReduceOnPlateau::ReduceOnPlateau(double factor, int patience, double min_lr)
    : factor_(factor), min_lr_(min_lr), patience_(patience) {}

double ReduceOnPlateau::observe(double loss, double lr) {
  if (loss < best_ * (1.0 - 1e-4)) {
    best_ = loss;
    bad_epochs_ = 0;
    return lr;
  }
  if (++bad_epochs_ > patience_) {
    bad_epochs_ = 0;
    return std::max(lr * factor_, min_lr_);
  }
  return lr;
}

}  // namespace advrl::nn
