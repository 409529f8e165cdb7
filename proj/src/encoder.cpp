#include "sse/encoder.hpp"

#include <cmath>

#include "sse/error.hpp"

namespace sse {

void EncoderConfig::validate() const {
  if (input_dim < 1) throw UsageError("encoder: input_dim must be positive");
  if (conv_channels < 2 || conv_channels % 2 != 0) throw UsageError("encoder: conv_channels must be even and >= 2");
  if (conv_kernel < 1 || conv_stride < 1) throw UsageError("encoder: kernel and stride must be positive");
  if (n_heads < 1 || conv_channels % n_heads != 0) throw UsageError("encoder: n_heads must divide conv_channels");
  if (ffn_dim < 1 || projection_dim < 1) throw UsageError("encoder: ffn_dim and projection_dim must be positive");
  if (dropout_p < 0 || dropout_p >= 1) throw UsageError("encoder: dropout must be in [0, 1)");
  if (!(temperature > 0)) throw UsageError("encoder: temperature must be positive");
  if (!(learning_rate > 0)) throw UsageError("encoder: learning rate must be positive");
  if (batch_pairs < 1) throw UsageError("encoder: batch_pairs must be >= 1");
  if (max_steps < 0 || patience < 1 || eval_every < 1) throw UsageError("encoder: invalid step schedule");
  if (dev_fraction < 0 || dev_fraction >= 1) throw UsageError("encoder: dev_fraction must be in [0, 1)");
}

ParamLayout::ParamLayout(const EncoderConfig& cfg) {
  cfg.validate();
  const Eigen::Index D = cfg.input_dim, C = cfg.conv_channels, K = cfg.conv_kernel, F = cfg.ffn_dim,
                     P = cfg.projection_dim;
  auto set = [&](Tensor t, const char* name, Eigen::Index rows, Eigen::Index cols) {
    tensors_[static_cast<int>(t)] = {name, rows, cols, 0};
  };
  set(Tensor::ln_in_gamma, "ln_in.gamma", 1, D);
  set(Tensor::ln_in_beta, "ln_in.beta", 1, D);
  set(Tensor::conv_w, "conv.weight", K * D, 2 * C);
  set(Tensor::conv_b, "conv.bias", 1, 2 * C);
  set(Tensor::attn_wq, "attn.wq", C, C);
  set(Tensor::attn_bq, "attn.bq", 1, C);
  set(Tensor::attn_wk, "attn.wk", C, C);
  set(Tensor::attn_bk, "attn.bk", 1, C);
  set(Tensor::attn_wv, "attn.wv", C, C);
  set(Tensor::attn_bv, "attn.bv", 1, C);
  set(Tensor::attn_wo, "attn.wo", C, C);
  set(Tensor::attn_bo, "attn.bo", 1, C);
  set(Tensor::ln1_gamma, "ln1.gamma", 1, C);
  set(Tensor::ln1_beta, "ln1.beta", 1, C);
  set(Tensor::ffn_w1, "ffn.w1", C, F);
  set(Tensor::ffn_b1, "ffn.b1", 1, F);
  set(Tensor::ffn_w2, "ffn.w2", F, C);
  set(Tensor::ffn_b2, "ffn.b2", 1, C);
  set(Tensor::ln2_gamma, "ln2.gamma", 1, C);
  set(Tensor::ln2_beta, "ln2.beta", 1, C);
  set(Tensor::head_w1, "head.w1", C, P);
  set(Tensor::head_b1, "head.b1", 1, P);
  set(Tensor::head_w2, "head.w2", P, P);
  set(Tensor::head_b2, "head.b2", 1, P);
  for (auto& t : tensors_) {
    t.offset = size_;
    size_ += static_cast<std::size_t>(t.rows * t.cols);
  }
}

Eigen::MatrixXd sinusoidal_positions(Eigen::Index length, Eigen::Index dim) {
  Eigen::MatrixXd pe(length, dim);
  for (Eigen::Index t = 0; t < length; ++t)
    for (Eigen::Index i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
      pe(t, i) = std::sin(static_cast<double>(t) * freq);
      if (i + 1 < dim) pe(t, i + 1) = std::cos(static_cast<double>(t) * freq);
    }
  return pe;
}

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr Eigen::Index kPositionTableRows = 512;

// Row-wise layer norm; returns x_hat and writes 1/sigma per row.
template <typename Mat, typename Vec>
Mat layer_norm(const Mat& x, Vec& rstd) {
  using S = typename Mat::Scalar;
  const Vec mean = x.rowwise().mean();
  Mat xc = x.colwise() - mean;
  const Vec var = xc.array().square().rowwise().mean();
  rstd = (var.array() + S(kLayerNormEps)).rsqrt();
  return xc.array().colwise() * rstd.array();
}

// Gradient w.r.t. the layer-norm input given gradient w.r.t. x_hat.
template <typename Mat, typename Vec>
Mat layer_norm_backward(const Mat& d_xhat, const Mat& x_hat, const Vec& rstd) {
  const Vec mean_d = d_xhat.rowwise().mean();
  const Vec mean_dx = (d_xhat.array() * x_hat.array()).rowwise().mean();
  Mat out = d_xhat.colwise() - mean_d;
  out -= (x_hat.array().colwise() * mean_dx.array()).matrix();
  return out.array().colwise() * rstd.array();
}

}  // namespace

template <typename S>
Encoder<S>::Encoder(const EncoderConfig& cfg)
    : cfg_(cfg), params_(std::make_shared<const ParamLayout>(cfg)) {
  positions_ = sinusoidal_positions(kPositionTableRows, cfg.conv_channels).cast<S>();
  params_[Tensor::ln_in_gamma].setOnes();
  params_[Tensor::ln1_gamma].setOnes();
  params_[Tensor::ln2_gamma].setOnes();
}

template <typename S>
void Encoder<S>::initialize(Rng& rng) {
  params_.zero();
  params_[Tensor::ln_in_gamma].setOnes();
  params_[Tensor::ln1_gamma].setOnes();
  params_[Tensor::ln2_gamma].setOnes();
  auto fill = [&](Tensor t) {
    auto m = params_[t];
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.rows()));
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = static_cast<S>(rng.uniform(-bound, bound));
  };
  for (Tensor t : {Tensor::conv_w, Tensor::attn_wq, Tensor::attn_wk, Tensor::attn_wv, Tensor::attn_wo,
                   Tensor::ffn_w1, Tensor::ffn_w2, Tensor::head_w1, Tensor::head_w2})
    fill(t);
}

template <typename S>
typename Encoder<S>::Vec Encoder<S>::encode(const Mat& x) const {
  Cache cache;
  return forward(x, &cache, nullptr);
}

template <typename S>
typename Encoder<S>::Vec Encoder<S>::encode(const Mat& x, Cache& cache, Rng* dropout_rng) const {
  return forward(x, &cache, dropout_rng);
}

template <typename S>
typename Encoder<S>::Vec Encoder<S>::forward(const Mat& x, Cache* cache_ptr, Rng* dropout_rng) const {
  Cache& c = *cache_ptr;
  const Eigen::Index T = x.rows(), D = cfg_.input_dim, C = cfg_.conv_channels, K = cfg_.conv_kernel,
                     stride = cfg_.conv_stride;
  if (x.cols() != D)
    throw DataError("encode: input dimension " + std::to_string(x.cols()) + " != " + std::to_string(D));
  if (T < K) throw DataError("encode: sequence of " + std::to_string(T) + " frames shorter than kernel " + std::to_string(K));
  const Eigen::Index Tp = (T - K) / stride + 1;
  c.in_frames = T;

  c.x_hat = layer_norm(x, c.in_rstd);
  const Mat y0 = (c.x_hat.array().rowwise() * params_[Tensor::ln_in_gamma].row(0).array()).matrix().rowwise() +
                 params_[Tensor::ln_in_beta].row(0);

  c.unfolded.resize(Tp, K * D);
  for (Eigen::Index t = 0; t < Tp; ++t)
    for (Eigen::Index j = 0; j < K; ++j) c.unfolded.block(t, j * D, 1, D) = y0.row(t * stride + j);
  c.conv_out.noalias() = c.unfolded * params_[Tensor::conv_w];
  c.conv_out.rowwise() += params_[Tensor::conv_b].row(0);

  c.gate = (S(1) + (-c.conv_out.rightCols(C).array()).exp()).inverse().matrix();
  Mat g = c.conv_out.leftCols(C).cwiseProduct(c.gate);
  if (dropout_rng != nullptr && cfg_.dropout_p > 0) {
    const S keep = S(1) / S(1 - cfg_.dropout_p);
    c.drop_mask.resize(Tp, C);
    for (Eigen::Index j = 0; j < C; ++j)
      for (Eigen::Index t = 0; t < Tp; ++t)
        c.drop_mask(t, j) = dropout_rng->uniform() >= cfg_.dropout_p ? keep : S(0);
    g = g.cwiseProduct(c.drop_mask);
  } else {
    c.drop_mask.resize(0, 0);
  }
  if (Tp <= positions_.rows())
    c.h = g + positions_.topRows(Tp);
  else
    c.h = g + sinusoidal_positions(Tp, C).cast<S>();

  c.q.noalias() = c.h * params_[Tensor::attn_wq];
  c.q.rowwise() += params_[Tensor::attn_bq].row(0);
  c.k.noalias() = c.h * params_[Tensor::attn_wk];
  c.k.rowwise() += params_[Tensor::attn_bk].row(0);
  c.v.noalias() = c.h * params_[Tensor::attn_wv];
  c.v.rowwise() += params_[Tensor::attn_bv].row(0);

  const Eigen::Index H = cfg_.n_heads, dh = C / H;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  c.attn.resize(static_cast<std::size_t>(H));
  c.attn_concat.resize(Tp, C);
  for (Eigen::Index h = 0; h < H; ++h) {
    Mat& p = c.attn[static_cast<std::size_t>(h)];
    p.noalias() = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose();
    p *= scale;
    const Vec row_max = p.rowwise().maxCoeff();
    p = (p.colwise() - row_max).array().exp().matrix();
    const Vec row_sum = p.rowwise().sum();
    p = p.array().colwise() / row_sum.array();
    c.attn_concat.middleCols(h * dh, dh).noalias() = p * c.v.middleCols(h * dh, dh);
  }
  Mat r1 = c.h;
  r1.noalias() += c.attn_concat * params_[Tensor::attn_wo];
  r1.rowwise() += params_[Tensor::attn_bo].row(0);

  c.z1_hat = layer_norm(r1, c.z1_rstd);
  c.z1 = (c.z1_hat.array().rowwise() * params_[Tensor::ln1_gamma].row(0).array()).matrix().rowwise() +
         params_[Tensor::ln1_beta].row(0);

  c.ffn_pre.noalias() = c.z1 * params_[Tensor::ffn_w1];
  c.ffn_pre.rowwise() += params_[Tensor::ffn_b1].row(0);
  c.ffn_act = c.ffn_pre.cwiseMax(S(0));
  Mat r2 = c.z1;
  r2.noalias() += c.ffn_act * params_[Tensor::ffn_w2];
  r2.rowwise() += params_[Tensor::ffn_b2].row(0);

  c.z2_hat = layer_norm(r2, c.z2_rstd);
  const Mat z2 = (c.z2_hat.array().rowwise() * params_[Tensor::ln2_gamma].row(0).array()).matrix().rowwise() +
                 params_[Tensor::ln2_beta].row(0);

  Vec out(C);
  c.argmax.assign(static_cast<std::size_t>(C), 0);
  for (Eigen::Index j = 0; j < C; ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index t = 1; t < Tp; ++t)
      if (z2(t, j) > z2(best, j)) best = t;
    c.argmax[static_cast<std::size_t>(j)] = best;
    out(j) = z2(best, j);
  }
  return out;
}

template <typename S>
void Encoder<S>::backward(const Cache& c, const Vec& d_emb, ParamBuffer<S>& grad) const {
  const Eigen::Index D = cfg_.input_dim, C = cfg_.conv_channels, K = cfg_.conv_kernel, stride = cfg_.conv_stride;
  const Eigen::Index Tp = c.z2_hat.rows();
  const Eigen::Index H = cfg_.n_heads, dh = C / H;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  // Max-pool routes each channel's gradient to its argmax frame.
  Mat dz2 = Mat::Zero(Tp, C);
  for (Eigen::Index j = 0; j < C; ++j) dz2(c.argmax[static_cast<std::size_t>(j)], j) = d_emb(j);

  grad[Tensor::ln2_gamma].row(0) += dz2.cwiseProduct(c.z2_hat).colwise().sum();
  grad[Tensor::ln2_beta].row(0) += dz2.colwise().sum();
  const Mat dr2 = layer_norm_backward(Mat(dz2.array().rowwise() * params_[Tensor::ln2_gamma].row(0).array()),
                                      c.z2_hat, c.z2_rstd);

  // Feed-forward branch and its residual.
  grad[Tensor::ffn_w2].noalias() += c.ffn_act.transpose() * dr2;
  grad[Tensor::ffn_b2].row(0) += dr2.colwise().sum();
  Mat d_pre = dr2 * params_[Tensor::ffn_w2].transpose();
  d_pre = d_pre.cwiseProduct((c.ffn_pre.array() > S(0)).template cast<S>().matrix());
  grad[Tensor::ffn_w1].noalias() += c.z1.transpose() * d_pre;
  grad[Tensor::ffn_b1].row(0) += d_pre.colwise().sum();
  Mat dz1 = dr2;
  dz1.noalias() += d_pre * params_[Tensor::ffn_w1].transpose();

  grad[Tensor::ln1_gamma].row(0) += dz1.cwiseProduct(c.z1_hat).colwise().sum();
  grad[Tensor::ln1_beta].row(0) += dz1.colwise().sum();
  const Mat dr1 = layer_norm_backward(Mat(dz1.array().rowwise() * params_[Tensor::ln1_gamma].row(0).array()),
                                      c.z1_hat, c.z1_rstd);

  // Attention branch and its residual.
  grad[Tensor::attn_wo].noalias() += c.attn_concat.transpose() * dr1;
  grad[Tensor::attn_bo].row(0) += dr1.colwise().sum();
  const Mat d_concat = dr1 * params_[Tensor::attn_wo].transpose();
  Mat dq(Tp, C), dk(Tp, C), dv(Tp, C);
  for (Eigen::Index h = 0; h < H; ++h) {
    const Mat& p = c.attn[static_cast<std::size_t>(h)];
    const auto d_out = d_concat.middleCols(h * dh, dh);
    const Mat dp = d_out * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh).noalias() = p.transpose() * d_out;
    const Vec row_dot = dp.cwiseProduct(p).rowwise().sum();
    Mat ds = p.cwiseProduct(Mat(dp.colwise() - row_dot));
    ds *= scale;
    dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  grad[Tensor::attn_wq].noalias() += c.h.transpose() * dq;
  grad[Tensor::attn_bq].row(0) += dq.colwise().sum();
  grad[Tensor::attn_wk].noalias() += c.h.transpose() * dk;
  grad[Tensor::attn_bk].row(0) += dk.colwise().sum();
  grad[Tensor::attn_wv].noalias() += c.h.transpose() * dv;
  grad[Tensor::attn_bv].row(0) += dv.colwise().sum();
  Mat dh_in = dr1;
  dh_in.noalias() += dq * params_[Tensor::attn_wq].transpose();
  dh_in.noalias() += dk * params_[Tensor::attn_wk].transpose();
  dh_in.noalias() += dv * params_[Tensor::attn_wv].transpose();

  // Positions are constant; dropout and the gated linear unit.
  if (c.drop_mask.size() > 0) dh_in = dh_in.cwiseProduct(c.drop_mask);
  Mat d_conv(Tp, 2 * C);
  const auto lin = c.conv_out.leftCols(C);
  d_conv.leftCols(C) = dh_in.cwiseProduct(c.gate);
  d_conv.rightCols(C) =
      (dh_in.array() * lin.array() * c.gate.array() * (S(1) - c.gate.array())).matrix();

  grad[Tensor::conv_w].noalias() += c.unfolded.transpose() * d_conv;
  grad[Tensor::conv_b].row(0) += d_conv.colwise().sum();
  const Mat d_unfolded = d_conv * params_[Tensor::conv_w].transpose();
  Mat dy0 = Mat::Zero(c.in_frames, D);
  for (Eigen::Index t = 0; t < Tp; ++t)
    for (Eigen::Index j = 0; j < K; ++j) dy0.row(t * stride + j) += d_unfolded.block(t, j * D, 1, D);

  grad[Tensor::ln_in_gamma].row(0) += dy0.cwiseProduct(c.x_hat).colwise().sum();
  grad[Tensor::ln_in_beta].row(0) += dy0.colwise().sum();
}

template <typename S>
typename Encoder<S>::Vec Encoder<S>::project(const Vec& z, HeadCache* cache) const {
  if (z.size() != cfg_.conv_channels) throw DataError("project: embedding dimension mismatch");
  Vec pre = params_[Tensor::head_w1].transpose() * z + params_[Tensor::head_b1].row(0).transpose();
  Vec out = params_[Tensor::head_w2].transpose() * pre.cwiseMax(S(0)) + params_[Tensor::head_b2].row(0).transpose();
  if (cache != nullptr) {
    cache->input = z;
    cache->pre = std::move(pre);
  }
  return out;
}

template <typename S>
typename Encoder<S>::Vec Encoder<S>::project_backward(const HeadCache& cache, const Vec& d_out,
                                                      ParamBuffer<S>& grad) const {
  const Vec act = cache.pre.cwiseMax(S(0));
  grad[Tensor::head_w2].noalias() += act * d_out.transpose();
  grad[Tensor::head_b2].row(0) += d_out.transpose();
  Vec d_pre = params_[Tensor::head_w2] * d_out;
  d_pre = d_pre.cwiseProduct((cache.pre.array() > S(0)).template cast<S>().matrix());
  grad[Tensor::head_w1].noalias() += cache.input * d_pre.transpose();
  grad[Tensor::head_b1].row(0) += d_pre.transpose();
  return params_[Tensor::head_w1] * d_pre;
}

template class Encoder<float>;
template class Encoder<double>;

}  // namespace sse
