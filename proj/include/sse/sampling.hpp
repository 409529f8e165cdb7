#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sse/corpus.hpp"
#include "sse/features.hpp"
#include "sse/interval.hpp"
#include "sse/rng.hpp"

namespace sse {

/// Frames [s, e) of the sequence registered under `seq_ref`.
struct FrameSpan {
  std::string seq_ref;
  Eigen::Index s = 0;
  Eigen::Index e = 0;

  Eigen::Index length() const { return e - s; }
  bool operator==(const FrameSpan&) const = default;
};

enum class Provenance { stretch, mined, topline };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct PositivePair {
  FrameSpan a;
  FrameSpan b;
  Provenance provenance = Provenance::stretch;
};

/// A pair of time intervals as exchanged through pair CSV files.
struct PairRecord {
  SpeechInterval a;
  SpeechInterval b;
  Provenance provenance = Provenance::mined;
  std::optional<double> distance;

  bool operator==(const PairRecord&) const = default;
};

struct NgramToken {
  SpeechInterval interval;
  std::vector<std::string> transcription;
};

struct StretchConfig {
  double factor_min = 0.5;
  double factor_max = 1.8;
  double min_len_s = 0.08;
  double max_len_s = 1.0;
  double grid_s = 0.08;
  // Keep the first variant at its original speed and stretch only the second.
  bool pin_first_factor = false;

  void validate() const;
};

/// round(grid_s * r), never below one frame.
Eigen::Index grid_frames(double frame_rate, double grid_s = 0.08);

/// WSOLA: fixed synthesis hop, analysis hop = synthesis hop / factor, each
/// window's input offset chosen by maximum cross-correlation with the natural
/// continuation of the previous window.
Waveform time_stretch_waveform(const Waveform& w, double factor);

/// round(T * factor) frames; row t' linearly interpolates input position t'/factor.
FeatureSequence time_stretch_features(const FeatureSequence& f, double factor);

/// The span of the second variant covering source frames [s, e) of the first:
/// [floor(s*d2/d1), ceil(e*d2/d1)).
std::pair<Eigen::Index, Eigen::Index> map_span(Eigen::Index s, Eigen::Index e, Eigen::Index d1,
                                               Eigen::Index d2);

/// Grid-aligned span pairs between variants of d1 and d2 frames. Starts are
/// distinct multiples of the grid quantum; lengths are grid multiples within
/// [min_len_s, max_len_s] at `frame_rate`.
std::vector<std::pair<FrameSpan, FrameSpan>> sample_stretch_spans(Eigen::Index d1, Eigen::Index d2,
                                                                  double frame_rate,
                                                                  const StretchConfig& cfg,
                                                                  std::size_t count, Rng& rng);

/// Produces the feature sequence of the segment stretched by a factor.
using StretchVariantBuilder = std::function<FeatureSequence(double factor)>;

/// Draws two stretch factors, builds both variants (registered under
/// `<ref_prefix>/v1` and `<ref_prefix>/v2`) and samples up to `count` pairs.
/// Returns no pairs when the segment is too short.
struct StretchSample {
  std::vector<PositivePair> pairs;
  FeatureSequence first;
  FeatureSequence second;
  double factor_first = 1.0;
  double factor_second = 1.0;
};
StretchSample sample_stretch_pairs(const StretchVariantBuilder& build, const std::string& ref_prefix,
                                   const StretchConfig& cfg, std::size_t count, Rng& rng);

/// All grid-aligned sub-intervals of each segment whose length is a grid
/// multiple between min_len_s (rounded up, at least one step) and max_len_s,
/// ordered by (file, start, end) without duplicates.
std::vector<SpeechInterval> enumerate_candidates(const std::vector<VASegment>& segments,
                                                 double frame_rate, const StretchConfig& cfg = {});

/// Every contiguous silence-free phone run of at most `max_dur` seconds.
std::vector<NgramToken> enumerate_ngrams(const PhonemeAlignment& alignment, double max_dur = 1.0);

/// Samples up to `max_count` distinct ngrams, then drops those whose
/// transcription occurs once in the sample.
std::vector<NgramToken> sample_eval_ngrams(const PhonemeAlignment& alignment, double max_dur, Rng& rng,
                                           std::size_t max_count);

/// Pairs of distinct ngram tokens with identical transcriptions: a token is
/// drawn uniformly among tokens of repeated classes, its partner uniformly
/// from the rest of its class.
std::vector<PairRecord> sample_topline_pairs(const PhonemeAlignment& alignment, Rng& rng,
                                             std::size_t count, double max_dur = 1.0);

/// Frame range of an interval in a sequence of `n_frames` at `frame_rate`
/// (boundaries rounded to the nearest frame). Ranges shorter than
/// `min_frames` are widened symmetrically inside the sequence.
std::pair<Eigen::Index, Eigen::Index> interval_frames(const SpeechInterval& interval, double frame_rate,
                                                      Eigen::Index n_frames, Eigen::Index min_frames = 1);

std::string join_transcription(const std::vector<std::string>& phones);

// Pair CSV: file_a,start_a,end_a,file_b,start_b,end_b,provenance[,distance]
// with times at 6 decimals.
void write_pairs_csv(const std::vector<PairRecord>& pairs, const std::filesystem::path& path);
std::vector<PairRecord> read_pairs_csv(const std::filesystem::path& path);

// Ngram CSV: file,start,end,transcription ('+'-joined phones).
void write_ngrams_csv(const std::vector<NgramToken>& ngrams, const std::filesystem::path& path);
std::vector<NgramToken> read_ngrams_csv(const std::filesystem::path& path);

}  // namespace sse
