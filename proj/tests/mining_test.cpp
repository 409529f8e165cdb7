#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "sse/error.hpp"
#include "sse/mining.hpp"
#include "sse/rng.hpp"

using namespace sse;

namespace {

Eigen::MatrixXf random_unit_rows(Rng& rng, Eigen::Index n, Eigen::Index d) {
  Eigen::MatrixXf m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = static_cast<float>(rng.normal());
    m.row(i).normalize();
  }
  return m;
}

std::vector<SpeechInterval> disjoint_intervals(Eigen::Index n) {
  std::vector<SpeechInterval> out;
  for (Eigen::Index i = 0; i < n; ++i) out.push_back({"f", static_cast<double>(i), static_cast<double>(i) + 0.5});
  return out;
}

// Brute-force neighbors: per-pair cosine loop, ties by row.
std::vector<Neighbor> naive_neighbors(const Eigen::MatrixXf& m, Eigen::Index q, std::size_t n) {
  std::vector<Neighbor> all;
  for (Eigen::Index j = 0; j < m.rows(); ++j) {
    if (j == q) continue;
    double dot = 0;
    for (Eigen::Index k = 0; k < m.cols(); ++k) dot += static_cast<double>(m(q, k)) * m(j, k);
    all.push_back({j, 1.0 - dot});
  }
  std::stable_sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) { return a.distance < b.distance; });
  all.resize(n);
  return all;
}

}  // namespace

TEST(Index, SingleRowAndSelfQuery) {
  Rng rng(1);
  const auto one = random_unit_rows(rng, 1, 4);
  const auto idx = build_index(one, {{"f", 0, 1}});
  const auto r = idx.search(Eigen::VectorXf::Ones(4), 1);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].row, 0);

  const auto m = random_unit_rows(rng, 30, 6);
  const auto big = build_index(m, disjoint_intervals(30));
  for (Eigen::Index i = 0; i < 30; ++i) {
    const auto s = big.search(m.row(i).transpose(), 1);
    EXPECT_EQ(s[0].row, i);
    EXPECT_NEAR(s[0].distance, 0.0, 1e-6);
  }
}

TEST(Index, RejectsBadInput) {
  Rng rng(2);
  auto m = random_unit_rows(rng, 3, 4);
  EXPECT_THROW(build_index(m, disjoint_intervals(2)), DataError);
  EXPECT_THROW(build_index(Eigen::MatrixXf(0, 4), {}), DataError);
  auto scaled = m;
  scaled.row(1) *= 2.0f;
  EXPECT_THROW(build_index(scaled, disjoint_intervals(3)), DataError);
  m(0, 0) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(build_index(m, disjoint_intervals(3)), DataError);
}

TEST(Index, MatchesBruteForceOracle) {
  Rng rng(3);
  const auto m = random_unit_rows(rng, 1000, 16);
  const auto idx = build_index(m, disjoint_intervals(1000));
  const auto all = idx.search_all(10, 3);
  for (Eigen::Index q = 0; q < 1000; q += 7) {
    const auto ref = naive_neighbors(m, q, 10);
    const auto got = query_neighbors(idx, q, 10);
    ASSERT_EQ(got.size(), 10u);
    for (std::size_t k = 0; k < 10; ++k) {
      EXPECT_EQ(got[k].row, ref[k].row);
      EXPECT_NEAR(got[k].distance, ref[k].distance, 1e-6);
      EXPECT_EQ(all[static_cast<std::size_t>(q)][k].row, ref[k].row);
    }
  }
}

TEST(Index, DuplicateAndTieOrder) {
  Eigen::MatrixXf m(4, 2);
  m << 1, 0, 0, 1, 1, 0, 1, 0;
  const auto idx = build_index(m, disjoint_intervals(4));
  const auto n1 = query_neighbors(idx, 0, 1);
  EXPECT_EQ(n1[0].row, 2);
  EXPECT_EQ(n1[0].distance, 0.0);
  const auto n3 = query_neighbors(idx, 0, 3);
  EXPECT_EQ(n3[1].row, 3);
  EXPECT_EQ(n3[2].row, 1);
  for (std::size_t k = 1; k < n3.size(); ++k) EXPECT_LE(n3[k - 1].distance, n3[k].distance);
  EXPECT_THROW(query_neighbors(idx, 0, 4), UsageError);
}

TEST(Overlap, Boundaries) {
  EXPECT_FALSE(overlaps({"f", 0, 1}, {"f", 1, 2}));
  EXPECT_TRUE(overlaps({"f", 0, 1}, {"f", 0.5, 2}));
  EXPECT_FALSE(overlaps({"f", 0, 1}, {"g", 0, 1}));
  EXPECT_TRUE(overlaps({"f", 0, 2}, {"f", 0.5, 1}));
}

TEST(Filter, Examples) {
  const SpeechInterval q{"f", 0, 1};
  EXPECT_TRUE(filter_neighbors(q, {{{"f", 0.5, 1.5}, 0.1, 1}, {{"f", 0.0, 0.4}, 0.2, 2}}).empty());
  const auto kept = filter_neighbors(q, {{{"g", 0, 1}, 0.1, 1}, {{"g", 0.5, 1.5}, 0.2, 2}, {{"f", 1, 2}, 0.3, 3}});
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].row, 1);
  EXPECT_EQ(kept[1].row, 3);
  EXPECT_THROW(filter_neighbors(q, {{{"g", 0, 1}, 0.3, 1}, {{"g", 2, 3}, 0.2, 2}}), UsageError);
}

TEST(Filter, GreedyPropertyOnRandomSets) {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const SpeechInterval q{"a", 1.0, 1.0 + rng.uniform(0.1, 1.0)};
    std::vector<ScoredInterval> nbs;
    std::vector<double> d;
    for (int i = 0; i < 12; ++i) d.push_back(rng.uniform(0, 1));
    std::sort(d.begin(), d.end());
    for (int i = 0; i < 12; ++i) {
      const double s = rng.uniform(0, 4);
      nbs.push_back({{rng.uniform(0, 1) < 0.7 ? "a" : "b", s, s + rng.uniform(0.05, 1.0)}, d[static_cast<std::size_t>(i)], i});
    }
    const auto kept = filter_neighbors(q, nbs);
    std::set<Eigen::Index> kept_rows;
    for (const auto& k : kept) {
      ASSERT_FALSE(overlaps(k.interval, q));
      kept_rows.insert(k.row);
    }
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = i + 1; j < kept.size(); ++j) ASSERT_FALSE(overlaps(kept[i].interval, kept[j].interval));
    for (const auto& n : nbs) {
      if (kept_rows.count(n.row) || overlaps(n.interval, q)) continue;
      const bool conflicts = std::any_of(kept.begin(), kept.end(), [&](const ScoredInterval& k) {
        return k.row < n.row && overlaps(k.interval, n.interval);
      });
      ASSERT_TRUE(conflicts);
    }
  }
}

TEST(Calibrate, Examples) {
  EXPECT_EQ(calibrate_threshold({0.1, 0.2, 0.3, 0.4}, 0.5).threshold, 0.2);
  EXPECT_FALSE(calibrate_threshold({0.4, 0.3, 0.2, 0.1}, 0.5).degenerate);
  EXPECT_EQ(calibrate_threshold({0.7, 0.7, 0.7}, 0.5).threshold, 0.7);
  const auto deg = calibrate_threshold({0.1, std::nullopt, std::nullopt, std::nullopt}, 0.5);
  EXPECT_EQ(deg.threshold, 0.1);
  EXPECT_TRUE(deg.degenerate);
  EXPECT_EQ(calibrate_threshold({0.1, 0.2, std::nullopt, std::nullopt}, 0.5).threshold, 0.2);
  EXPECT_THROW(calibrate_threshold({}, 0.5), UsageError);
}

TEST(Calibrate, MonotoneInTarget) {
  Rng rng(5);
  std::vector<std::optional<double>> best;
  for (int i = 0; i < 200; ++i) best.push_back(rng.uniform(0, 1) < 0.2 ? std::nullopt : std::optional<double>(rng.uniform(0, 2)));
  double prev = -1;
  for (double t = 0.05; t <= 0.8; t += 0.05) {
    const auto c = calibrate_threshold(best, t);
    EXPECT_GE(c.threshold, prev);
    prev = c.threshold;
    std::size_t within = 0;
    for (const auto& b : best)
      if (b && *b <= c.threshold) ++within;
    EXPECT_GE(static_cast<double>(within), t * 200 - 1e-9);
  }
}

TEST(Mine, DedupSortedAndNonOverlapping) {
  Rng rng(6);
  // Clusters of near-identical embeddings spread over several files.
  const Eigen::Index n = 120;
  const auto centers = random_unit_rows(rng, 10, 8);
  Eigen::MatrixXf m(n, 8);
  std::vector<SpeechInterval> ivs;
  for (Eigen::Index i = 0; i < n; ++i) {
    m.row(i) = centers.row(i % 10) + 0.05f * random_unit_rows(rng, 1, 8);
    m.row(i).normalize();
    const double s = 0.5 * static_cast<double>(i / 5);
    ivs.push_back({"f" + std::to_string(i % 5), s, s + 0.3});
  }
  const auto idx = build_index(m, ivs);
  const auto r = mine_pairs(idx, MiningConfig{}, 2);
  ASSERT_FALSE(r.pairs.empty());
  EXPECT_EQ(r.n_queries, 120u);
  std::set<std::pair<SpeechInterval, SpeechInterval>> seen;
  for (std::size_t i = 0; i < r.pairs.size(); ++i) {
    const auto& p = r.pairs[i];
    EXPECT_FALSE(overlaps(p.query, p.neighbor));
    EXPECT_LE(p.distance, r.calibration.threshold);
    if (i) EXPECT_LE(r.pairs[i - 1].distance, p.distance);
    EXPECT_TRUE(seen.insert({p.query, p.neighbor}).second);
    EXPECT_FALSE(seen.count({p.neighbor, p.query}) && !(p.query == p.neighbor));
  }
  EXPECT_GE(r.n_queries_with_pair, 60u);
  const auto again = mine_pairs(idx, MiningConfig{}, 1);
  ASSERT_EQ(again.pairs.size(), r.pairs.size());
  for (std::size_t i = 0; i < r.pairs.size(); ++i) {
    EXPECT_EQ(again.pairs[i].query, r.pairs[i].query);
    EXPECT_EQ(again.pairs[i].distance, r.pairs[i].distance);
  }
}

TEST(Mine, OrthogonalEmbeddingsGiveUnitDistances) {
  const Eigen::MatrixXf m = Eigen::MatrixXf::Identity(6, 6);
  const auto r = mine_pairs(build_index(m, disjoint_intervals(6)), MiningConfig{});
  for (const auto& p : r.pairs) EXPECT_NEAR(p.distance, 1.0, 1e-9);
  EXPECT_NEAR(r.calibration.threshold, 1.0, 1e-9);
}
