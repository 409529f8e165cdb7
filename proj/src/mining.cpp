#include "sse/mining.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "sse/error.hpp"
#include "sse/parallel.hpp"

namespace sse {

namespace {

constexpr Eigen::Index kQueryBlock = 256;

bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.row < b.row);
}

// The n best entries of one similarity row, skipping `exclude`.
std::vector<Neighbor> top_n(const Eigen::Ref<const Eigen::RowVectorXd>& sims, std::size_t n, Eigen::Index exclude) {
  std::vector<Neighbor> all;
  all.reserve(static_cast<std::size_t>(sims.size()));
  for (Eigen::Index j = 0; j < sims.size(); ++j)
    if (j != exclude) all.push_back({j, 1.0 - sims(j)});
  n = std::min(n, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), neighbor_less);
  all.resize(n);
  return all;
}

}  // namespace

EmbeddingIndex::EmbeddingIndex(const Eigen::MatrixXf& embeddings, std::vector<SpeechInterval> intervals)
    : data_(embeddings.cast<double>()), intervals_(std::move(intervals)) {}

EmbeddingIndex build_index(const Eigen::MatrixXf& embeddings, std::vector<SpeechInterval> intervals) {
  if (embeddings.rows() == 0) throw DataError("build_index: no embeddings");
  if (static_cast<std::size_t>(embeddings.rows()) != intervals.size())
    throw DataError("build_index: " + std::to_string(embeddings.rows()) + " embeddings but " +
                    std::to_string(intervals.size()) + " intervals");
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
    if (!embeddings.row(i).allFinite()) throw DataError("build_index: non-finite row " + std::to_string(i));
    if (std::abs(embeddings.row(i).cast<double>().norm() - 1.0) > 1e-4)
      throw DataError("build_index: row " + std::to_string(i) + " is not unit-norm");
  }
  return EmbeddingIndex(embeddings, std::move(intervals));
}

std::vector<Neighbor> EmbeddingIndex::search(const Eigen::VectorXf& query, std::size_t n) const {
  if (query.size() != dim()) throw DataError("search: query dimension mismatch");
  const double norm = query.cast<double>().norm();
  if (!(norm > 0)) throw NumericalError("search: zero query vector");
  const Eigen::RowVectorXd sims = (data_ * (query.cast<double>() / norm)).transpose();
  return top_n(sims, n, -1);
}

std::vector<std::vector<Neighbor>> EmbeddingIndex::search_all(std::size_t n, int jobs) const {
  const Eigen::Index rows = size();
  if (n >= static_cast<std::size_t>(rows))
    throw UsageError("query_neighbors: N=" + std::to_string(n) + " must be smaller than index size " +
                     std::to_string(rows));
  std::vector<std::vector<Neighbor>> out(static_cast<std::size_t>(rows));
  const auto blocks = static_cast<std::size_t>((rows + kQueryBlock - 1) / kQueryBlock);
  parallel_for(blocks, jobs, [&](std::size_t b0, std::size_t b1) {
    Eigen::MatrixXd sims;
    for (std::size_t b = b0; b < b1; ++b) {
      const Eigen::Index start = static_cast<Eigen::Index>(b) * kQueryBlock;
      const Eigen::Index len = std::min(kQueryBlock, rows - start);
      sims.noalias() = data_.middleRows(start, len) * data_.transpose();
      for (Eigen::Index i = 0; i < len; ++i)
        out[static_cast<std::size_t>(start + i)] = top_n(sims.row(i), n, start + i);
    }
  });
  return out;
}

std::vector<Neighbor> query_neighbors(const EmbeddingIndex& index, Eigen::Index row, std::size_t n) {
  if (row < 0 || row >= index.size()) throw UsageError("query_neighbors: row out of range");
  if (n >= static_cast<std::size_t>(index.size()))
    throw UsageError("query_neighbors: N=" + std::to_string(n) + " must be smaller than index size " +
                     std::to_string(index.size()));
  const Eigen::RowVectorXd sims = index.data().row(row) * index.data().transpose();
  return top_n(sims, n, row);
}

bool overlaps(const SpeechInterval& a, const SpeechInterval& b) {
  if (a.file_id != b.file_id) return false;
  return std::min(a.end_s, b.end_s) - std::max(a.start_s, b.start_s) > 0.0;
}

std::vector<ScoredInterval> filter_neighbors(const SpeechInterval& query, const std::vector<ScoredInterval>& neighbors) {
  for (std::size_t i = 1; i < neighbors.size(); ++i)
    if (neighbors[i].distance < neighbors[i - 1].distance)
      throw UsageError("filter_neighbors: neighbors not sorted by distance");
  std::vector<ScoredInterval> kept;
  for (const auto& n : neighbors) {
    if (overlaps(query, n.interval)) continue;
    const bool conflict =
        std::any_of(kept.begin(), kept.end(), [&](const ScoredInterval& k) { return overlaps(k.interval, n.interval); });
    if (!conflict) kept.push_back(n);
  }
  return kept;
}

Calibration calibrate_threshold(const std::vector<std::optional<double>>& per_query_best, double target_fraction) {
  if (per_query_best.empty()) throw UsageError("calibrate_threshold: empty input");
  if (!(target_fraction > 0 && target_fraction <= 1)) throw UsageError("calibrate_threshold: target must be in (0, 1]");
  std::vector<double> available;
  for (const auto& d : per_query_best)
    if (d) available.push_back(*d);
  Calibration out;
  if (available.empty()) {
    out.degenerate = true;
    return out;
  }
  std::sort(available.begin(), available.end());
  const double needed = std::ceil(target_fraction * static_cast<double>(per_query_best.size()) - 1e-9);
  const auto count = static_cast<std::size_t>(std::max(1.0, needed));
  if (count > available.size()) {
    out.threshold = available.back();
    out.degenerate = true;
  } else {
    out.threshold = available[count - 1];
  }
  return out;
}

void MiningConfig::validate() const {
  if (n_neighbors < 1) throw UsageError("mining: n_neighbors must be >= 1");
  if (!(target_pair_fraction > 0 && target_pair_fraction < 1))
    throw UsageError("mining: target_pair_fraction must be in (0, 1)");
}

MiningResult mine_pairs(const EmbeddingIndex& index, const MiningConfig& cfg, int jobs) {
  cfg.validate();
  const Eigen::Index rows = index.size();
  MiningResult result;
  result.n_queries = static_cast<std::size_t>(rows);
  if (rows < 2) {
    result.calibration.degenerate = true;
    return result;
  }
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg.n_neighbors), static_cast<std::size_t>(rows - 1));
  const auto knn = index.search_all(n, jobs);

  std::vector<std::vector<ScoredInterval>> kept(static_cast<std::size_t>(rows));
  std::vector<std::optional<double>> best;
  best.reserve(static_cast<std::size_t>(rows));
  for (Eigen::Index i = 0; i < rows; ++i) {
    std::vector<ScoredInterval> scored;
    for (const auto& nb : knn[static_cast<std::size_t>(i)]) scored.push_back({index.interval(nb.row), nb.distance, nb.row});
    auto& k = kept[static_cast<std::size_t>(i)];
    k = filter_neighbors(index.interval(i), scored);
    if (!k.empty())
      best.emplace_back(k.front().distance);
    else if (cfg.count_all_indexed)
      best.emplace_back(std::nullopt);
  }
  if (best.empty()) {
    result.calibration.degenerate = true;
    return result;
  }
  result.calibration = calibrate_threshold(best, cfg.target_pair_fraction);
  const double thr = result.calibration.threshold;

  std::set<std::pair<Eigen::Index, Eigen::Index>> seen;
  for (Eigen::Index i = 0; i < rows; ++i) {
    bool any = false;
    for (const auto& nb : kept[static_cast<std::size_t>(i)]) {
      if (nb.distance > thr) break;
      any = true;
      if (!seen.insert({std::min(i, nb.row), std::max(i, nb.row)}).second) continue;
      result.pairs.push_back({index.interval(i), nb.interval, nb.distance});
    }
    if (any) ++result.n_queries_with_pair;
  }
  std::stable_sort(result.pairs.begin(), result.pairs.end(),
                   [](const MinedPair& a, const MinedPair& b) { return a.distance < b.distance; });
  return result;
}

}  // namespace sse
