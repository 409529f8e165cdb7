#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sse/encoder.hpp"
#include "sse/features.hpp"
#include "sse/interval.hpp"
#include "sse/sampling.hpp"

namespace sse {

/// Feature sequences addressed by reference: file ids for corpus features,
/// derived names for stretched variants.
class FeatureStore {
 public:
  void put(const std::string& ref, FeatureSequence f) { seqs_[ref] = std::move(f); }
  bool contains(const std::string& ref) const { return seqs_.count(ref) > 0; }
  const FeatureSequence& get(const std::string& ref) const;
  std::size_t size() const { return seqs_.size(); }
  double frame_rate() const;
  const std::map<std::string, FeatureSequence>& all() const { return seqs_; }

 private:
  std::map<std::string, FeatureSequence> seqs_;
};

/// Rows of a span, widened symmetrically to `min_frames` when shorter.
FeatureMatrix span_rows(const FeatureStore& store, const FrameSpan& span, Eigen::Index min_frames);

/// Converts interval pairs (mined or topline) to frame spans over file features.
std::vector<PositivePair> pairs_to_spans(const std::vector<PairRecord>& records, const FeatureStore& store,
                                         Eigen::Index min_frames);

struct TrainLogEntry {
  int step = 0;
  double loss = 0.0;
  std::optional<double> dev_loss;
};

struct TrainResult {
  EncoderModel model;
  std::vector<TrainLogEntry> log;
  int steps = 0;
  int best_step = 0;
  std::optional<double> best_dev_loss;
  std::size_t train_pairs = 0;
  std::size_t dev_pairs = 0;
};

/// Mean NT-Xent loss of `pairs` in inference mode, in consecutive batches of
/// `batch_pairs` (a trailing batch with a single pair is skipped).
double evaluate_loss(const EncoderModel& model, const std::vector<PositivePair>& pairs, const FeatureStore& store,
                     int batch_pairs);

/// Trains a freshly initialized encoder with Adam on NT-Xent. A held-out dev
/// split drives early stopping and the returned model is the best-dev one.
TrainResult train(const std::vector<PositivePair>& pairs, const FeatureStore& store, const EncoderConfig& cfg);

void write_train_log(const std::vector<TrainLogEntry>& log, const std::filesystem::path& path);

/// Pre-head embeddings, L2-normalized, one row per interval.
Eigen::MatrixXf embed_intervals(const EncoderModel& model, const std::vector<SpeechInterval>& intervals,
                                const FeatureStore& store, int jobs = 1);

/// Coordinate-wise max over frames, L2-normalized.
Eigen::VectorXf maxpool_baseline(const FeatureSequence& f);
Eigen::MatrixXf maxpool_intervals(const std::vector<SpeechInterval>& intervals, const FeatureStore& store,
                                  int jobs = 1);

// Checkpoint: "SSEM", u32 version, u32-length JSON config, u32 tensor count,
// then per tensor: u32-length name, u32 rows, u32 cols, rows*cols f32
// (column-major).
void save_model(const EncoderModel& model, const std::filesystem::path& path);
EncoderModel load_model(const std::filesystem::path& path);

}  // namespace sse
