#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sse/corpus.hpp"
#include "sse/interval.hpp"
#include "sse/mining.hpp"

namespace sse {

using Transcription = std::vector<std::string>;

/// Unit-cost Levenshtein distance over phone labels.
std::size_t edit_distance(const Transcription& a, const Transcription& b);

/// edit_distance / max(|a|, |b|); both must be non-empty.
double ned(const Transcription& a, const Transcription& b);

/// A phone belongs to an interval's transcription when the overlap covers at
/// least `min_phone_fraction` of the phone or lasts at least `min_overlap_s`.
struct TranscriptionRule {
  double min_phone_fraction = 0.5;
  double min_overlap_s = 0.030;
};

/// Non-silence phones selected by the rule, in time order.
Transcription transcribe_interval(const SpeechInterval& interval, const PhonemeAlignment& alignment,
                                  const TranscriptionRule& rule = {});

struct RetrievalItem {
  Eigen::VectorXf embedding;  // unit norm
  Transcription transcription;
  SpeechInterval interval;
};

/// Rank-form AP: candidates ranked by ascending distance (stable), AP = mean
/// over positives at ranks k_1 < k_2 < ... of i / k_i. Requires a positive.
double average_precision(const std::vector<double>& distances, const std::vector<bool>& relevant);

/// AP of one query against a pool that excludes it.
double average_precision(const RetrievalItem& query, const std::vector<RetrievalItem>& pool);

struct MapReport {
  std::size_t n_queries = 0;
  double map = 0.0;
  std::map<std::string, std::size_t> per_transcription_class_count;
};

/// Mean AP with every item queried against all the others.
MapReport map_score(const std::vector<RetrievalItem>& items, int jobs = 1);

/// Fraction of non-silence phone tokens transcribed by at least one interval.
double coverage(const std::vector<SpeechInterval>& intervals, const PhonemeAlignment& alignment,
                const TranscriptionRule& rule = {});

struct NedCovPoint {
  double threshold = 0.0;
  double ned = 0.0;  // 0 when no pair passes the threshold
  double cov = 0.0;
  std::size_t n_pairs = 0;
};

/// NED of a discovered pair; a pair with an empty transcription side scores 1.
double pair_ned(const Transcription& a, const Transcription& b);

/// NED/COV of the pairs whose distance is <= threshold.
NedCovPoint nedcov_point(const std::vector<MinedPair>& pairs, const PhonemeAlignment& alignment, double threshold,
                         const TranscriptionRule& rule = {});

/// n_points thresholds at the k/n_points quantiles (k = 1..n) of the pair
/// distances; pairs must be sorted by distance. COV is non-decreasing.
std::vector<NedCovPoint> nedcov_sweep(const std::vector<MinedPair>& pairs, const PhonemeAlignment& alignment,
                                      std::size_t n_points = 20, const TranscriptionRule& rule = {});

}  // namespace sse
