#include "sse/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "sse/error.hpp"
#include "sse/parallel.hpp"
#include "sse/sampling.hpp"

namespace sse {

std::size_t edit_distance(const Transcription& a, const Transcription& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double ned(const Transcription& a, const Transcription& b) {
  if (a.empty() || b.empty()) throw DataError("ned: empty transcription");
  return static_cast<double>(edit_distance(a, b)) / static_cast<double>(std::max(a.size(), b.size()));
}

double pair_ned(const Transcription& a, const Transcription& b) {
  if (a.empty() || b.empty()) return 1.0;
  return ned(a, b);
}

namespace {

constexpr double kTimeSlack = 1e-6;

const std::vector<Phone>& phones_covering(const SpeechInterval& iv, const PhonemeAlignment& alignment) {
  const auto& phones = alignment.phones(iv.file_id);
  if (phones.empty() || iv.start_s < phones.front().start_s - kTimeSlack || iv.end_s > phones.back().end_s + kTimeSlack ||
      iv.end_s <= iv.start_s)
    throw DataError("interval " + iv.file_id + " [" + std::to_string(iv.start_s) + ", " + std::to_string(iv.end_s) +
                    "] outside alignment span");
  return phones;
}

// Calls f(index) for each phone included by the rule.
template <typename F>
void for_each_included(const SpeechInterval& iv, const std::vector<Phone>& phones, const TranscriptionRule& rule, F&& f) {
  auto it = std::lower_bound(phones.begin(), phones.end(), iv.start_s,
                             [](const Phone& p, double t) { return p.end_s <= t; });
  for (; it != phones.end() && it->start_s < iv.end_s; ++it) {
    if (it->silence) continue;
    const double overlap = std::min(iv.end_s, it->end_s) - std::max(iv.start_s, it->start_s);
    if (overlap <= 0) continue;
    const double dur = it->end_s - it->start_s;
    if (overlap >= rule.min_phone_fraction * dur - 1e-12 || overlap >= rule.min_overlap_s - 1e-12)
      f(static_cast<std::size_t>(it - phones.begin()));
  }
}

}  // namespace

Transcription transcribe_interval(const SpeechInterval& interval, const PhonemeAlignment& alignment,
                                  const TranscriptionRule& rule) {
  const auto& phones = phones_covering(interval, alignment);
  Transcription out;
  for_each_included(interval, phones, rule, [&](std::size_t i) { out.push_back(phones[i].label); });
  return out;
}

double average_precision(const std::vector<double>& distances, const std::vector<bool>& relevant) {
  if (distances.size() != relevant.size()) throw UsageError("average_precision: size mismatch");
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (!relevant[order[rank]]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  if (hits == 0) throw UsageError("average_precision: no relevant item in pool");
  return sum / static_cast<double>(hits);
}

double average_precision(const RetrievalItem& query, const std::vector<RetrievalItem>& pool) {
  std::vector<double> dist(pool.size());
  std::vector<bool> rel(pool.size());
  const Eigen::VectorXd q = query.embedding.cast<double>();
  for (std::size_t i = 0; i < pool.size(); ++i) {
    dist[i] = 1.0 - q.dot(pool[i].embedding.cast<double>());
    rel[i] = pool[i].transcription == query.transcription;
  }
  return average_precision(dist, rel);
}

MapReport map_score(const std::vector<RetrievalItem>& items, int jobs) {
  MapReport report;
  std::map<Transcription, std::size_t> classes;
  for (const auto& it : items) {
    if (it.transcription.empty()) throw DataError("map_score: empty transcription");
    ++classes[it.transcription];
  }
  for (const auto& [t, n] : classes) {
    if (n < 2) throw DataError("map_score: transcription '" + join_transcription(t) + "' has no same-transcription peer");
    report.per_transcription_class_count[join_transcription(t)] = n;
  }
  const std::size_t n = items.size();
  report.n_queries = n;
  if (n == 0) return report;

  const Eigen::Index dim = items.front().embedding.size();
  Eigen::MatrixXd e(static_cast<Eigen::Index>(n), dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (items[i].embedding.size() != dim) throw DataError("map_score: embedding dimension mismatch");
    e.row(static_cast<Eigen::Index>(i)) = items[i].embedding.cast<double>().transpose();
  }
  std::vector<double> ap(n);
  parallel_for(n, jobs, [&](std::size_t begin, std::size_t end) {
    std::vector<double> dist(n - 1);
    std::vector<bool> rel(n - 1);
    for (std::size_t q = begin; q < end; ++q) {
      const Eigen::VectorXd sims = e * e.row(static_cast<Eigen::Index>(q)).transpose();
      std::size_t k = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == q) continue;
        dist[k] = 1.0 - sims(static_cast<Eigen::Index>(j));
        rel[k] = items[j].transcription == items[q].transcription;
        ++k;
      }
      ap[q] = average_precision(dist, rel);
    }
  });
  double total = 0.0;
  for (double v : ap) total += v;
  report.map = total / static_cast<double>(n);
  return report;
}

double coverage(const std::vector<SpeechInterval>& intervals, const PhonemeAlignment& alignment,
                const TranscriptionRule& rule) {
  std::size_t total = 0;
  for (const auto& [id, phones] : alignment.files)
    for (const auto& p : phones)
      if (!p.silence) ++total;
  if (total == 0) return 0.0;
  std::set<std::pair<std::string, std::size_t>> covered;
  for (const auto& iv : intervals) {
    const auto& phones = phones_covering(iv, alignment);
    for_each_included(iv, phones, rule, [&](std::size_t i) { covered.insert({iv.file_id, i}); });
  }
  return static_cast<double>(covered.size()) / static_cast<double>(total);
}

NedCovPoint nedcov_point(const std::vector<MinedPair>& pairs, const PhonemeAlignment& alignment, double threshold,
                         const TranscriptionRule& rule) {
  NedCovPoint pt;
  pt.threshold = threshold;
  std::vector<SpeechInterval> members;
  double ned_sum = 0.0;
  for (const auto& p : pairs) {
    if (p.distance > threshold) continue;
    ned_sum += pair_ned(transcribe_interval(p.query, alignment, rule), transcribe_interval(p.neighbor, alignment, rule));
    members.push_back(p.query);
    members.push_back(p.neighbor);
    ++pt.n_pairs;
  }
  pt.ned = pt.n_pairs ? ned_sum / static_cast<double>(pt.n_pairs) : 0.0;
  pt.cov = coverage(members, alignment, rule);
  return pt;
}

std::vector<NedCovPoint> nedcov_sweep(const std::vector<MinedPair>& pairs, const PhonemeAlignment& alignment,
                                      std::size_t n_points, const TranscriptionRule& rule) {
  if (pairs.empty()) throw DataError("nedcov_sweep: empty pair list");
  if (n_points < 1) throw UsageError("nedcov_sweep: need at least one point");
  for (std::size_t i = 1; i < pairs.size(); ++i)
    if (pairs[i].distance < pairs[i - 1].distance) throw UsageError("nedcov_sweep: pairs not sorted by distance");

  std::size_t total_phones = 0;
  for (const auto& [id, phones] : alignment.files)
    for (const auto& p : phones)
      if (!p.silence) ++total_phones;

  // Pairs are added in distance order; NED sum and covered set grow
  // incrementally across thresholds.
  std::vector<NedCovPoint> out;
  std::set<std::pair<std::string, std::size_t>> covered;
  double ned_sum = 0.0;
  std::size_t next = 0;
  const auto P = pairs.size();
  for (std::size_t k = 1; k <= n_points; ++k) {
    const auto rank = static_cast<std::size_t>(
        std::max(1.0, std::ceil(static_cast<double>(k) * static_cast<double>(P) / static_cast<double>(n_points) - 1e-9)));
    const double thr = pairs[std::min(rank, P) - 1].distance;
    while (next < P && pairs[next].distance <= thr) {
      const auto& p = pairs[next];
      ned_sum += pair_ned(transcribe_interval(p.query, alignment, rule), transcribe_interval(p.neighbor, alignment, rule));
      for (const auto* iv : {&p.query, &p.neighbor}) {
        const auto& phones = phones_covering(*iv, alignment);
        for_each_included(*iv, phones, rule, [&](std::size_t i) { covered.insert({iv->file_id, i}); });
      }
      ++next;
    }
    NedCovPoint pt;
    pt.threshold = thr;
    pt.n_pairs = next;
    pt.ned = next ? ned_sum / static_cast<double>(next) : 0.0;
    pt.cov = total_phones ? static_cast<double>(covered.size()) / static_cast<double>(total_phones) : 0.0;
    out.push_back(pt);
  }
  return out;
}

}  // namespace sse
