#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sse/corpus.hpp"
#include "sse/embedder.hpp"
#include "sse/encoder.hpp"
#include "sse/eval.hpp"
#include "sse/features.hpp"
#include "sse/mining.hpp"
#include "sse/sampling.hpp"

namespace sse {

enum class FeatureSource { mfcc, imported };

struct EvalSettings {
  std::size_t max_ngrams = 2000;
  double max_ngram_s = 1.0;
  std::size_t sweep_points = 20;
  std::size_t topline_pairs = 4000;
  bool run_topline = true;
  bool run_maxpool = true;
};

struct RunConfig {
  fs::path manifest;
  fs::path features_dir;  // defaults to <run_dir>/features
  fs::path run_dir = "run";
  FeatureSource feature_source = FeatureSource::mfcc;
  MfccConfig mfcc;
  // VA segments come from the manifest's VAD files when present, otherwise
  // from energy_vad.
  VadConfig vad;
  EncoderConfig encoder;
  StretchConfig stretch;
  std::size_t stretch_pairs_per_segment = 4;
  MiningConfig mining;
  EvalSettings eval;
  int n_iters = 2;
  std::uint64_t seed = 0;
  int jobs = 1;

  fs::path resolved_features_dir() const { return features_dir.empty() ? run_dir / "features" : features_dir; }
  void validate() const;
};

/// Reads every key present in `j`; absent keys keep their current values.
void update_config(RunConfig& cfg, const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);
/// Applies the file at `path` on top of `base`.
RunConfig load_run_config(const fs::path& path, RunConfig base = {});

struct FeatureReport {
  std::size_t computed = 0;
  std::size_t skipped = 0;
  std::vector<std::string> errors;
};

/// MFCC mode: one normalized `<id>.ssef` per manifest file, skipping files
/// whose feature file is newer than the audio. Imported mode: verifies every
/// file id has a feature file. Per-file errors are collected, not thrown.
FeatureReport compute_features(const RunConfig& cfg, const CorpusManifest& manifest);

FeatureStore load_feature_store(const RunConfig& cfg, const CorpusManifest& manifest);

std::vector<VASegment> corpus_segments(const RunConfig& cfg, const CorpusManifest& manifest);

/// Stretch pairs for every VA segment; stretched variants are added to
/// `store` under "stretch/<file>/<segment>/v1|v2".
std::vector<PositivePair> build_stretch_pairs(const RunConfig& cfg, const CorpusManifest& manifest,
                                              const std::vector<VASegment>& segments, FeatureStore& store);

/// Converts mined pairs to pair records with provenance and distance.
std::vector<PairRecord> to_records(const std::vector<MinedPair>& pairs, Provenance provenance);
std::vector<MinedPair> to_mined(const std::vector<PairRecord>& records);

/// Embeds candidates with `model` and mines pairs.
MiningResult mine_with_model(const EncoderModel& model, const std::vector<SpeechInterval>& candidates,
                             const FeatureStore& store, const MiningConfig& cfg, int jobs);

std::vector<NgramToken> eval_ngrams(const RunConfig& cfg, const PhonemeAlignment& alignment);

/// MAP of a model (or the max-pooling baseline when `model` is null) on the
/// seeded eval n-grams.
MapReport evaluate_map(const EncoderModel* model, const std::vector<NgramToken>& ngrams, const FeatureStore& store,
                       int jobs);

nlohmann::json map_report_json(const MapReport& r);
void write_nedcov_csv(const std::vector<NedCovPoint>& points, const fs::path& path);

struct IterationStats {
  int iteration = 0;
  std::size_t train_pairs = 0;
  int train_steps = 0;
  std::optional<double> final_dev_loss;
  std::size_t n_candidates = 0;
  std::size_t n_pairs = 0;
  double threshold = 0.0;
  bool threshold_degenerate = false;
  double map = 0.0;
  std::size_t map_queries = 0;
};

nlohmann::json stats_json(const IterationStats& s);
IterationStats stats_from_json(const nlohmann::json& j);

struct PipelineResult {
  std::vector<IterationStats> iterations;
  std::optional<double> maxpool_map;
  std::optional<double> topline_map;
  bool stopped_early = false;
  nlohmann::json summary;
};

/// Features, stretch-pair pretraining, then n_iters rounds of
/// mine-and-retrain. Completed iterations found in the run directory are
/// reused. Writes iter_<k>/{model.ssem,pairs.csv,stats.json,map.json,
/// nedcov.csv,train_log.csv} and summary.json.
PipelineResult run_pipeline(const RunConfig& cfg);

/// Trains a fresh model on transcription-matched pairs.
TrainResult train_topline(const RunConfig& cfg, const PhonemeAlignment& alignment, const FeatureStore& store);

}  // namespace sse
