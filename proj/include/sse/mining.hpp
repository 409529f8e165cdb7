#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "sse/interval.hpp"

namespace sse {

struct Neighbor {
  Eigen::Index row = 0;
  double distance = 0.0;  // cosine distance, 1 - cos
};

/// Exact cosine k-NN over L2-normalized rows. Similarities are computed as
/// blocked dense inner products in double precision.
class EmbeddingIndex {
 public:
  EmbeddingIndex(const Eigen::MatrixXf& embeddings, std::vector<SpeechInterval> intervals);

  Eigen::Index size() const { return data_.rows(); }
  Eigen::Index dim() const { return data_.cols(); }
  const SpeechInterval& interval(Eigen::Index row) const { return intervals_[static_cast<std::size_t>(row)]; }
  const std::vector<SpeechInterval>& intervals() const { return intervals_; }
  const Eigen::MatrixXd& data() const { return data_; }

  /// The n closest rows to an arbitrary vector (normalized internally).
  std::vector<Neighbor> search(const Eigen::VectorXf& query, std::size_t n) const;

  /// n nearest neighbors of every row (self excluded), one list per row,
  /// computed over row blocks on up to `jobs` threads.
  std::vector<std::vector<Neighbor>> search_all(std::size_t n, int jobs = 1) const;

 private:
  Eigen::MatrixXd data_;
  std::vector<SpeechInterval> intervals_;
};

/// Validates unit-norm finite rows and consistent sizes.
EmbeddingIndex build_index(const Eigen::MatrixXf& embeddings, std::vector<SpeechInterval> intervals);

/// Exactly n results, self excluded, ascending by distance with ties broken
/// by row index.
std::vector<Neighbor> query_neighbors(const EmbeddingIndex& index, Eigen::Index row, std::size_t n);

/// Same file and strictly positive intersection.
bool overlaps(const SpeechInterval& a, const SpeechInterval& b);

struct ScoredInterval {
  SpeechInterval interval;
  double distance = 0.0;
  Eigen::Index row = -1;
};

/// Drops neighbors overlapping the query, then greedy non-maximal
/// suppression in ascending distance: a neighbor is kept iff it overlaps no
/// already-kept neighbor. Input must be sorted by distance.
std::vector<ScoredInterval> filter_neighbors(const SpeechInterval& query, const std::vector<ScoredInterval>& neighbors);

struct Calibration {
  double threshold = 0.0;
  // Fewer than the target fraction of queries had any neighbor; the
  // threshold fell back to the largest available best distance.
  bool degenerate = false;
};

/// Smallest t such that the fraction of queries whose best distance is <= t
/// reaches `target_fraction`. Queries without neighbors count in the
/// denominator.
Calibration calibrate_threshold(const std::vector<std::optional<double>>& per_query_best,
                                double target_fraction = 0.5);

struct MiningConfig {
  int n_neighbors = 10;
  double target_pair_fraction = 0.5;
  // Denominator of the calibration: every indexed sequence (true) or only
  // those with a surviving neighbor (false).
  bool count_all_indexed = true;

  void validate() const;
};

struct MinedPair {
  SpeechInterval query;
  SpeechInterval neighbor;
  double distance = 0.0;
};

struct MiningResult {
  std::vector<MinedPair> pairs;  // ascending distance
  Calibration calibration;
  std::size_t n_queries = 0;
  std::size_t n_queries_with_pair = 0;
};

/// kNN -> overlap filter + NMS -> calibrated threshold -> unordered-pair
/// deduplication (first occurrence kept) -> sort by distance.
MiningResult mine_pairs(const EmbeddingIndex& index, const MiningConfig& cfg, int jobs = 1);

}  // namespace sse
