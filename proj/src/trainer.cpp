#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "sse/embedder.hpp"
#include "sse/error.hpp"
#include "sse/ntxent.hpp"
#include "sse/parallel.hpp"
#include "text_util.hpp"

namespace sse {

const FeatureSequence& FeatureStore::get(const std::string& ref) const {
  auto it = seqs_.find(ref);
  if (it == seqs_.end()) throw DataError("no features for '" + ref + "'");
  return it->second;
}

double FeatureStore::frame_rate() const {
  if (seqs_.empty()) throw DataError("feature store is empty");
  return seqs_.begin()->second.frame_rate;
}

FeatureMatrix span_rows(const FeatureStore& store, const FrameSpan& span, Eigen::Index min_frames) {
  const auto& f = store.get(span.seq_ref);
  const Eigen::Index T = f.num_frames();
  if (span.s < 0 || span.e > T || span.s >= span.e)
    throw DataError("span [" + std::to_string(span.s) + ", " + std::to_string(span.e) + ") outside '" + span.seq_ref +
                    "' of " + std::to_string(T) + " frames");
  if (T < min_frames)
    throw DataError("sequence '" + span.seq_ref + "' shorter than " + std::to_string(min_frames) + " frames");
  Eigen::Index s = span.s, e = span.e;
  if (e - s < min_frames) {
    const Eigen::Index need = min_frames - (e - s);
    s -= need / 2;
    e += need - need / 2;
    if (s < 0) {
      e -= s;
      s = 0;
    }
    if (e > T) {
      s -= e - T;
      e = T;
    }
  }
  return f.data.middleRows(s, e - s);
}

std::vector<PositivePair> pairs_to_spans(const std::vector<PairRecord>& records, const FeatureStore& store,
                                         Eigen::Index min_frames) {
  std::vector<PositivePair> out;
  out.reserve(records.size());
  auto to_span = [&](const SpeechInterval& iv) {
    const auto& f = store.get(iv.file_id);
    SpeechInterval rel{iv.file_id, iv.start_s - f.source.start_s, iv.end_s - f.source.start_s};
    const auto [s, e] = interval_frames(rel, f.frame_rate, f.num_frames(), min_frames);
    return FrameSpan{iv.file_id, s, e};
  };
  for (const auto& r : records) out.push_back({to_span(r.a), to_span(r.b), r.provenance});
  return out;
}

namespace {

using Mat = EncoderModel::Mat;
using Vec = EncoderModel::Vec;

Mat load_rows(const FeatureStore& store, const FrameSpan& span, Eigen::Index min_frames) {
  return span_rows(store, span, min_frames);
}

Eigen::MatrixXd project_batch(const EncoderModel& model, const std::vector<PositivePair>& pairs,
                              const std::vector<std::size_t>& idx, const FeatureStore& store) {
  const Eigen::Index P = model.config().projection_dim;
  Eigen::MatrixXd z(static_cast<Eigen::Index>(2 * idx.size()), P);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& p = pairs[idx[k]];
    z.row(static_cast<Eigen::Index>(2 * k)) =
        model.project(model.encode(load_rows(store, p.a, model.min_frames()))).cast<double>().transpose();
    z.row(static_cast<Eigen::Index>(2 * k + 1)) =
        model.project(model.encode(load_rows(store, p.b, model.min_frames()))).cast<double>().transpose();
  }
  return z;
}

class Adam {
 public:
  Adam(std::size_t n, double lr) : lr_(lr), m_(n, 0.0f), v_(n, 0.0f) {}

  void step(std::vector<float>& params, const std::vector<float>& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    const auto step_size = static_cast<float>(lr_ * std::sqrt(c2) / c1);
    const auto eps = static_cast<float>(kEps * std::sqrt(c2));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0f - kBeta1) * grad[i];
      v_[i] = kBeta2 * v_[i] + (1.0f - kBeta2) * grad[i] * grad[i];
      params[i] -= step_size * m_[i] / (std::sqrt(v_[i]) + eps);
    }
  }

 private:
  static constexpr float kBeta1 = 0.9f;
  static constexpr float kBeta2 = 0.999f;
  static constexpr double kEps = 1e-8;
  double lr_;
  int t_ = 0;
  std::vector<float> m_, v_;
};

}  // namespace

double evaluate_loss(const EncoderModel& model, const std::vector<PositivePair>& pairs, const FeatureStore& store,
                     int batch_pairs) {
  const std::size_t n = pairs.size();
  const auto b = static_cast<std::size_t>(std::max(1, batch_pairs));
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < n; start += b) {
    const std::size_t end = std::min(n, start + b);
    if (end - start < 2 && batches > 0) break;
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    total += ntxent_loss(project_batch(model, pairs, idx, store), model.config().temperature).loss;
    ++batches;
  }
  if (batches == 0) throw UsageError("evaluate_loss: no pairs");
  return total / static_cast<double>(batches);
}

TrainResult train(const std::vector<PositivePair>& pairs, const FeatureStore& store, const EncoderConfig& cfg) {
  cfg.validate();
  if (pairs.empty()) throw UsageError("train: empty pair list");

  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(derive_seed(cfg.seed, "dev-split"));
  split_rng.shuffle(order);
  auto n_dev = static_cast<std::size_t>(std::floor(cfg.dev_fraction * static_cast<double>(pairs.size())));
  if (n_dev < 2 || n_dev >= pairs.size()) n_dev = 0;
  std::vector<PositivePair> dev;
  for (std::size_t i = 0; i < n_dev; ++i) dev.push_back(pairs[order[i]]);
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_dev), order.end());

  TrainResult result{EncoderModel(cfg), {}, 0, 0, std::nullopt, train_idx.size(), dev.size()};
  EncoderModel& model = result.model;
  Rng init_rng(derive_seed(cfg.seed, "init"));
  model.initialize(init_rng);
  std::vector<float> best_params = model.params().values();

  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_pairs), train_idx.size());
  Rng shuffle_rng(derive_seed(cfg.seed, "epochs"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  Adam adam(model.params().values().size(), cfg.learning_rate);
  auto grad = model.make_gradient();
  const Eigen::Index min_frames = model.min_frames();

  std::size_t cursor = train_idx.size();
  std::vector<EncoderModel::Cache> caches(2 * batch);
  std::vector<EncoderModel::HeadCache> heads(2 * batch);
  for (int step = 1; step <= cfg.max_steps; ++step) {
    if (cursor + batch > train_idx.size()) {
      shuffle_rng.shuffle(train_idx);
      cursor = 0;
    }
    const std::size_t first = cursor;
    cursor += batch;

    Eigen::MatrixXd z(static_cast<Eigen::Index>(2 * batch), cfg.projection_dim);
    for (std::size_t k = 0; k < batch; ++k) {
      const auto& p = pairs[train_idx[first + k]];
      for (int side = 0; side < 2; ++side) {
        const std::size_t item = 2 * k + static_cast<std::size_t>(side);
        const Mat x = load_rows(store, side == 0 ? p.a : p.b, min_frames);
        const Vec emb = model.encode(x, caches[item], &dropout_rng);
        z.row(static_cast<Eigen::Index>(item)) = model.project(emb, &heads[item]).cast<double>().transpose();
      }
    }

    NtxentResult loss;
    try {
      loss = ntxent_loss(z, cfg.temperature);
    } catch (const NumericalError& e) {
      std::ostringstream msg;
      msg << "training diverged at step " << step << " (" << e.what() << "); batch pair ids:";
      for (std::size_t k = 0; k < batch; ++k) msg << ' ' << train_idx[first + k];
      throw NumericalError(msg.str());
    }

    grad.zero();
    for (std::size_t item = 0; item < 2 * batch; ++item) {
      const Vec d_proj = loss.grad.row(static_cast<Eigen::Index>(item)).transpose().cast<float>();
      const Vec d_emb = model.project_backward(heads[item], d_proj, grad);
      model.backward(caches[item], d_emb, grad);
    }
    adam.step(model.params().values(), grad.values());
    result.steps = step;

    TrainLogEntry entry{step, loss.loss, std::nullopt};
    const bool eval_now = step % cfg.eval_every == 0 || step == cfg.max_steps;
    if (eval_now && !dev.empty()) {
      entry.dev_loss = evaluate_loss(model, dev, store, cfg.batch_pairs);
      if (!std::isfinite(*entry.dev_loss)) throw NumericalError("non-finite dev loss at step " + std::to_string(step));
      if (!result.best_dev_loss || *entry.dev_loss < *result.best_dev_loss) {
        result.best_dev_loss = entry.dev_loss;
        result.best_step = step;
        best_params = model.params().values();
      }
    }
    result.log.push_back(entry);
    if (!dev.empty() && result.best_dev_loss && step - result.best_step >= cfg.patience) break;
  }

  if (dev.empty()) {
    result.best_step = result.steps;
  } else if (result.best_dev_loss) {
    model.params().values() = best_params;
  }
  return result;
}

void write_train_log(const std::vector<TrainLogEntry>& log, const std::filesystem::path& path) {
  auto out = text::open_out(path.string());
  out << "step,loss,dev_loss\n";
  for (const auto& e : log) {
    out << e.step << ',' << text::format_double(e.loss) << ',';
    if (e.dev_loss) out << text::format_double(*e.dev_loss);
    out << '\n';
  }
}

namespace {

template <typename Embed>
Eigen::MatrixXf embed_all(const std::vector<SpeechInterval>& intervals, const FeatureStore& store,
                          Eigen::Index dim, Eigen::Index min_frames, int jobs, Embed&& embed) {
  Eigen::MatrixXf out(static_cast<Eigen::Index>(intervals.size()), dim);
  parallel_for(intervals.size(), jobs, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& iv = intervals[i];
      const auto& f = store.get(iv.file_id);
      const SpeechInterval rel{iv.file_id, iv.start_s - f.source.start_s, iv.end_s - f.source.start_s};
      const auto [s, e] = interval_frames(rel, f.frame_rate, f.num_frames(), min_frames);
      Eigen::VectorXf v = embed(Mat(f.data.middleRows(s, e - s)));
      const float norm = v.norm();
      if (!(norm > 0) || !std::isfinite(norm))
        throw NumericalError("embedding of " + iv.file_id + " [" + std::to_string(iv.start_s) + ", " +
                             std::to_string(iv.end_s) + "] has zero or non-finite norm");
      out.row(static_cast<Eigen::Index>(i)) = (v / norm).transpose();
    }
  });
  return out;
}

}  // namespace

Eigen::MatrixXf embed_intervals(const EncoderModel& model, const std::vector<SpeechInterval>& intervals,
                                const FeatureStore& store, int jobs) {
  return embed_all(intervals, store, model.config().conv_channels, model.min_frames(), jobs,
                   [&](const Mat& x) { return Eigen::VectorXf(model.encode(x)); });
}

Eigen::VectorXf maxpool_baseline(const FeatureSequence& f) {
  if (f.num_frames() < 1) throw DataError("maxpool_baseline: empty sequence");
  Eigen::VectorXf v = f.data.colwise().maxCoeff().transpose();
  const float norm = v.norm();
  if (!(norm > 0)) throw NumericalError("maxpool_baseline: zero vector");
  return v / norm;
}

Eigen::MatrixXf maxpool_intervals(const std::vector<SpeechInterval>& intervals, const FeatureStore& store, int jobs) {
  if (store.size() == 0) throw DataError("maxpool_intervals: empty feature store");
  const Eigen::Index dim = store.all().begin()->second.dim();
  return embed_all(intervals, store, dim, 1, jobs,
                   [](const Mat& x) { return Eigen::VectorXf(x.colwise().maxCoeff().transpose()); });
}

}  // namespace sse
