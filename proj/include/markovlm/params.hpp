#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "markovlm/config.hpp"
#include "markovlm/error.hpp"
#include "markovlm/rng.hpp"

namespace markovlm {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// One named block of the flat parameter vector (column-major inside).
struct FieldOffset {
  std::string name;
  Eigen::Index offset;
  Eigen::Index rows;
  Eigen::Index cols;

  Eigen::Index size() const noexcept { return rows * cols; }
};

/// Flattening order: embedding, positional, per layer (wq, wk, wv, wo, w1, w2),
/// head (untied only), bias.
std::vector<FieldOffset> param_layout(const ModelConfig& config);
Eigen::Index flat_size(const ModelConfig& config);
/// Looks up a block by name; throws OutOfRange if absent.
const FieldOffset& find_field(const std::vector<FieldOffset>& layout, const std::string& name);

template <typename Scalar>
struct LayerParamsT {
  MatrixX<Scalar> wq, wk, wv;  // m x d
  MatrixX<Scalar> wo;          // d x m
  MatrixX<Scalar> w1;          // r x d
  MatrixX<Scalar> w2;          // d x r
};

/// Full transformer parameter set. With tying the head has no storage of its
/// own: head_weight() returns the embedding matrix.
template <typename Scalar>
class ParamSetT {
 public:
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;
  using Layer = LayerParamsT<Scalar>;

  explicit ParamSetT(const ModelConfig& config) : config_(config) {
    config_.validate();
    const int K = config_.token_rows();
    embedding_ = Matrix::Zero(K, config_.d);
    positional_ = Matrix::Zero(config_.d, config_.N);
    layers_.resize(static_cast<std::size_t>(config_.layers));
    for (Layer& layer : layers_) {
      layer.wq = Matrix::Zero(config_.m, config_.d);
      layer.wk = Matrix::Zero(config_.m, config_.d);
      layer.wv = Matrix::Zero(config_.m, config_.d);
      layer.wo = Matrix::Zero(config_.d, config_.m);
      layer.w1 = Matrix::Zero(config_.r, config_.d);
      layer.w2 = Matrix::Zero(config_.d, config_.r);
    }
    if (!config_.tied) head_ = Matrix::Zero(K, config_.d);
    bias_ = Matrix::Zero(K, 1);
  }

  const ModelConfig& config() const noexcept { return config_; }
  bool tied() const noexcept { return config_.tied; }

  Matrix& embedding() noexcept { return embedding_; }
  const Matrix& embedding() const noexcept { return embedding_; }
  /// d x N, column n is p_{n+1}.
  Matrix& positional() noexcept { return positional_; }
  const Matrix& positional() const noexcept { return positional_; }
  std::vector<Layer>& layers() noexcept { return layers_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  Layer& layer(int l) { return layers_.at(static_cast<std::size_t>(l)); }
  const Layer& layer(int l) const { return layers_.at(static_cast<std::size_t>(l)); }
  Matrix& head_weight() noexcept { return config_.tied ? embedding_ : head_; }
  const Matrix& head_weight() const noexcept { return config_.tied ? embedding_ : head_; }
  Matrix& bias() noexcept { return bias_; }
  const Matrix& bias() const noexcept { return bias_; }

  // Reduced binary view (Sigmoid head).
  auto e() { require_sigmoid(); return embedding_.row(0).transpose(); }
  auto e() const { require_sigmoid(); return embedding_.row(0).transpose(); }
  auto a() { require_sigmoid(); return head_weight().row(0).transpose(); }
  auto a() const { require_sigmoid(); return head_weight().row(0).transpose(); }
  Scalar& b() { require_sigmoid(); return bias_(0, 0); }
  Scalar b() const { require_sigmoid(); return bias_(0, 0); }

  Eigen::Index size() const { return flat_size(config_); }

  /// Calls fn(name, matrix) for each stored block in flattening order.
  template <typename Fn>
  void visit_blocks(Fn&& fn) {
    visit_impl(*this, fn);
  }
  template <typename Fn>
  void visit_blocks(Fn&& fn) const {
    visit_impl(*this, fn);
  }

  Vector flatten() const {
    Vector flat(size());
    Eigen::Index offset = 0;
    visit_blocks([&](const std::string&, const Matrix& block) {
      flat.segment(offset, block.size()) = block.reshaped();
      offset += block.size();
    });
    return flat;
  }

  void unflatten(const Eigen::Ref<const Vector>& flat) {
    if (flat.size() != size()) {
      throw Error(ErrorKind::ShapeMismatch, "unflatten: expected " + std::to_string(size()) +
                                                " values, got " + std::to_string(flat.size()));
    }
    Eigen::Index offset = 0;
    visit_blocks([&](const std::string&, Matrix& block) {
      block.reshaped() = flat.segment(offset, block.size());
      offset += block.size();
    });
  }

  static ParamSetT from_flat(const ModelConfig& config, const Eigen::Ref<const Vector>& flat) {
    ParamSetT params(config);
    params.unflatten(flat);
    return params;
  }

  void set_zero() {
    visit_blocks([](const std::string&, Matrix& block) { block.setZero(); });
  }

  template <typename Other>
  ParamSetT<Other> cast() const {
    return ParamSetT<Other>::from_flat(config_, flatten().template cast<Other>());
  }

 private:
  void require_sigmoid() const {
    if (config_.head != Head::Sigmoid) {
      throw Error(ErrorKind::Precondition, "reduced (e, a, b) view needs the binary sigmoid head");
    }
  }

  template <typename Self, typename Fn>
  static void visit_impl(Self& self, Fn& fn) {
    fn(std::string("embedding"), self.embedding_);
    fn(std::string("positional"), self.positional_);
    for (std::size_t l = 0; l < self.layers_.size(); ++l) {
      auto& layer = self.layers_[l];
      const std::string prefix = "layer" + std::to_string(l) + ".";
      fn(prefix + "wq", layer.wq);
      fn(prefix + "wk", layer.wk);
      fn(prefix + "wv", layer.wv);
      fn(prefix + "wo", layer.wo);
      fn(prefix + "w1", layer.w1);
      fn(prefix + "w2", layer.w2);
    }
    if (!self.config_.tied) fn(std::string("head"), self.head_);
    fn(std::string("bias"), self.bias_);
  }

  ModelConfig config_;
  Matrix embedding_;
  Matrix positional_;
  std::vector<Layer> layers_;
  Matrix head_;
  Matrix bias_;
};

using ParamSet = ParamSetT<double>;

/// Gaussian(0, std^2) for every weight, zero bias. Deterministic per seed.
template <typename Scalar = double>
ParamSetT<Scalar> init_params(const ModelConfig& config, std::uint64_t seed, double std_dev = 0.02) {
  ParamSetT<Scalar> params(config);
  SplitMix64 rng(derive_seed(seed, {0x1417}));
  params.visit_blocks([&](const std::string& name, MatrixX<Scalar>& block) {
    if (name == "bias") return;
    for (Eigen::Index j = 0; j < block.cols(); ++j) {
      for (Eigen::Index i = 0; i < block.rows(); ++i) {
        block(i, j) = static_cast<Scalar>(std_dev * rng.normal());
      }
    }
  });
  return params;
}

/// Maps a Softmax-head parameter set with S = 2 onto the reduced Sigmoid form:
/// e = E_1 - E_0, p_n <- p_n + E_0, a = A_1 - A_0, b = b_1 - b_0.
ParamSet reduce_binary(const ParamSet& general);

}  // namespace markovlm
