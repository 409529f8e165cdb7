#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sse/rng.hpp"

namespace sse {

struct EncoderConfig {
  int input_dim = 40;
  int conv_channels = 64;  // model width C after the gated linear unit
  int conv_kernel = 4;
  int conv_stride = 1;
  double dropout_p = 0.1;
  int n_heads = 4;
  int ffn_dim = 128;
  int projection_dim = 64;
  double temperature = 0.15;
  double learning_rate = 1e-4;
  int batch_pairs = 64;
  int max_steps = 5000;
  int patience = 500;
  int eval_every = 50;
  double dev_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Learnable tensors, in checkpoint order.
enum class Tensor : int {
  ln_in_gamma,
  ln_in_beta,
  conv_w,
  conv_b,
  attn_wq,
  attn_bq,
  attn_wk,
  attn_bk,
  attn_wv,
  attn_bv,
  attn_wo,
  attn_bo,
  ln1_gamma,
  ln1_beta,
  ffn_w1,
  ffn_b1,
  ffn_w2,
  ffn_b2,
  ln2_gamma,
  ln2_beta,
  head_w1,
  head_b1,
  head_w2,
  head_b2,
  count
};
inline constexpr int kTensorCount = static_cast<int>(Tensor::count);

struct TensorInfo {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::size_t offset = 0;
};

/// Shapes of every tensor for a config; all tensors share one flat buffer.
class ParamLayout {
 public:
  explicit ParamLayout(const EncoderConfig& cfg);

  const TensorInfo& info(Tensor t) const { return tensors_[static_cast<int>(t)]; }
  const std::array<TensorInfo, kTensorCount>& tensors() const { return tensors_; }
  std::size_t size() const { return size_; }

 private:
  std::array<TensorInfo, kTensorCount> tensors_;
  std::size_t size_ = 0;
};

/// Flat parameter (or gradient) storage with column-major tensor views.
template <typename S>
class ParamBuffer {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

  explicit ParamBuffer(std::shared_ptr<const ParamLayout> layout)
      : layout_(std::move(layout)), values_(layout_->size(), S(0)) {}

  Eigen::Map<Mat> operator[](Tensor t) {
    const auto& i = layout_->info(t);
    return Eigen::Map<Mat>(values_.data() + i.offset, i.rows, i.cols);
  }
  Eigen::Map<const Mat> operator[](Tensor t) const {
    const auto& i = layout_->info(t);
    return Eigen::Map<const Mat>(values_.data() + i.offset, i.rows, i.cols);
  }

  std::vector<S>& values() { return values_; }
  const std::vector<S>& values() const { return values_; }
  const ParamLayout& layout() const { return *layout_; }
  std::shared_ptr<const ParamLayout> layout_ptr() const { return layout_; }

  void zero() { std::fill(values_.begin(), values_.end(), S(0)); }

 private:
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<S> values_;
};

/// Layer-norm -> strided conv + GLU -> dropout -> sinusoidal positions ->
/// post-norm transformer layer -> max-pool over time. A two-layer ReLU
/// projection head sits on top for the training loss only.
template <typename S>
class Encoder {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

  /// Activations kept by a training-mode forward pass.
  struct Cache {
    Mat x_hat;      // normalized input
    Vec in_rstd;
    Mat unfolded;   // im2col rows
    Mat conv_out;   // pre-GLU, T' x 2C
    Mat gate;       // sigmoid of the gate half
    Mat drop_mask;  // scaled keep mask, empty when dropout is off
    Mat h;          // transformer input
    Mat q, k, v;
    std::vector<Mat> attn;  // per-head softmax
    Mat attn_concat;
    Mat z1_hat;
    Vec z1_rstd;
    Mat z1;
    Mat ffn_pre;
    Mat ffn_act;
    Mat z2_hat;
    Vec z2_rstd;
    std::vector<Eigen::Index> argmax;
    Eigen::Index in_frames = 0;
  };

  struct HeadCache {
    Vec input;
    Vec pre;
  };

  explicit Encoder(const EncoderConfig& cfg);

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit
  /// layer-norm gains.
  void initialize(Rng& rng);

  const EncoderConfig& config() const { return cfg_; }
  ParamBuffer<S>& params() { return params_; }
  const ParamBuffer<S>& params() const { return params_; }
  ParamBuffer<S> make_gradient() const { return ParamBuffer<S>(params_.layout_ptr()); }

  Eigen::Index min_frames() const { return cfg_.conv_kernel; }

  /// Inference-mode embedding (dropout off); deterministic.
  Vec encode(const Mat& x) const;
  /// Training-mode forward. Dropout is applied when `dropout_rng` is non-null.
  Vec encode(const Mat& x, Cache& cache, Rng* dropout_rng) const;
  /// Accumulates parameter gradients for d(loss)/d(embedding).
  void backward(const Cache& cache, const Vec& d_embedding, ParamBuffer<S>& grad) const;

  Vec project(const Vec& z, HeadCache* cache = nullptr) const;
  /// Accumulates head gradients; returns d(loss)/d(z).
  Vec project_backward(const HeadCache& cache, const Vec& d_out, ParamBuffer<S>& grad) const;

  template <typename T>
  Encoder<T> cast() const {
    Encoder<T> out(cfg_);
    auto& dst = out.params().values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(params_.values()[i]);
    return out;
  }

 private:
  Vec forward(const Mat& x, Cache* cache, Rng* dropout_rng) const;

  EncoderConfig cfg_;
  ParamBuffer<S> params_;
  Mat positions_;
};

using EncoderModel = Encoder<float>;

/// Sinusoidal position table, rows = positions.
Eigen::MatrixXd sinusoidal_positions(Eigen::Index length, Eigen::Index dim);

}  // namespace sse
