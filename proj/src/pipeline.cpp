#include "sse/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>

#include "sse/error.hpp"
#include "sse/parallel.hpp"
#include "sse/rng.hpp"
#include "text_util.hpp"

namespace sse {

using nlohmann::json;

namespace {

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config key '") + key + "': " + e.what());
  }
}

// A misspelled key would otherwise be ignored silently.
void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw UsageError("config" + where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    if (!known) throw UsageError("config" + where + ": unknown key '" + key + "'");
  }
}

void read_path(const json& j, const char* key, fs::path& out) {
  std::string s;
  if (!j.contains(key)) return;
  read_key(j, key, s);
  out = s;
}

void write_json(const json& j, const fs::path& path) {
  auto out = text::open_out(path.string());
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

json read_json(const fs::path& path) {
  auto in = text::open_in(path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

fs::path feature_path(const RunConfig& cfg, const std::string& id) {
  return cfg.resolved_features_dir() / (id + ".ssef");
}

Eigen::Index seconds_to_sample(double t, int sr) { return static_cast<Eigen::Index>(std::lround(t * sr)); }

}  // namespace

void RunConfig::validate() const {
  if (manifest.empty()) throw UsageError("config: manifest path is required");
  encoder.validate();
  stretch.validate();
  mining.validate();
  if (n_iters < 0) throw UsageError("config: n_iters must be >= 0");
  if (eval.sweep_points < 1) throw UsageError("config: sweep_points must be >= 1");
  if (eval.max_ngrams < 2) throw UsageError("config: max_ngrams must be >= 2");
  if (jobs < 1) throw UsageError("config: jobs must be >= 1");
}

void update_config(RunConfig& cfg, const json& j) {
  check_keys(j, {"manifest", "features_dir", "run_dir", "feature_source", "n_iters", "seed", "jobs",
                 "stretch_pairs_per_segment", "mfcc", "vad", "encoder", "stretch", "mining", "eval"},
             "");
  read_path(j, "manifest", cfg.manifest);
  read_path(j, "features_dir", cfg.features_dir);
  read_path(j, "run_dir", cfg.run_dir);
  if (j.contains("feature_source")) {
    std::string s;
    read_key(j, "feature_source", s);
    if (s == "mfcc")
      cfg.feature_source = FeatureSource::mfcc;
    else if (s == "imported")
      cfg.feature_source = FeatureSource::imported;
    else
      throw UsageError("config: feature_source must be 'mfcc' or 'imported'");
  }
  read_key(j, "n_iters", cfg.n_iters);
  read_key(j, "seed", cfg.seed);
  read_key(j, "jobs", cfg.jobs);
  read_key(j, "stretch_pairs_per_segment", cfg.stretch_pairs_per_segment);
  if (j.contains("mfcc")) {
    const auto& m = j["mfcc"];
    check_keys(m, {"n_coeffs", "n_mels", "frame_ms", "hop_ms", "preemphasis", "log_floor"}, ".mfcc");
    read_key(m, "n_coeffs", cfg.mfcc.n_coeffs);
    read_key(m, "n_mels", cfg.mfcc.n_mels);
    read_key(m, "frame_ms", cfg.mfcc.frame_ms);
    read_key(m, "hop_ms", cfg.mfcc.hop_ms);
    read_key(m, "preemphasis", cfg.mfcc.preemphasis);
    read_key(m, "log_floor", cfg.mfcc.log_floor);
  }
  if (j.contains("vad")) {
    const auto& v = j["vad"];
    check_keys(v, {"frame_ms", "hop_ms", "energy_quantile", "min_speech_ms", "min_gap_ms"}, ".vad");
    read_key(v, "frame_ms", cfg.vad.frame_ms);
    read_key(v, "hop_ms", cfg.vad.hop_ms);
    read_key(v, "energy_quantile", cfg.vad.energy_quantile);
    read_key(v, "min_speech_ms", cfg.vad.min_speech_ms);
    read_key(v, "min_gap_ms", cfg.vad.min_gap_ms);
  }
  if (j.contains("encoder")) {
    const auto& e = j["encoder"];
    check_keys(e, {"input_dim", "conv_channels", "conv_kernel", "conv_stride", "dropout_p", "n_heads", "ffn_dim",
                   "projection_dim", "temperature", "learning_rate", "batch_pairs", "max_steps", "patience",
                   "eval_every", "dev_fraction"},
               ".encoder");
    auto& c = cfg.encoder;
    read_key(e, "input_dim", c.input_dim);
    read_key(e, "conv_channels", c.conv_channels);
    read_key(e, "conv_kernel", c.conv_kernel);
    read_key(e, "conv_stride", c.conv_stride);
    read_key(e, "dropout_p", c.dropout_p);
    read_key(e, "n_heads", c.n_heads);
    read_key(e, "ffn_dim", c.ffn_dim);
    read_key(e, "projection_dim", c.projection_dim);
    read_key(e, "temperature", c.temperature);
    read_key(e, "learning_rate", c.learning_rate);
    read_key(e, "batch_pairs", c.batch_pairs);
    read_key(e, "max_steps", c.max_steps);
    read_key(e, "patience", c.patience);
    read_key(e, "eval_every", c.eval_every);
    read_key(e, "dev_fraction", c.dev_fraction);
  }
  if (j.contains("stretch")) {
    const auto& s = j["stretch"];
    check_keys(s, {"factor_min", "factor_max", "min_len_s", "max_len_s", "grid_s", "pin_first_factor"}, ".stretch");
    read_key(s, "factor_min", cfg.stretch.factor_min);
    read_key(s, "factor_max", cfg.stretch.factor_max);
    read_key(s, "min_len_s", cfg.stretch.min_len_s);
    read_key(s, "max_len_s", cfg.stretch.max_len_s);
    read_key(s, "grid_s", cfg.stretch.grid_s);
    read_key(s, "pin_first_factor", cfg.stretch.pin_first_factor);
  }
  if (j.contains("mining")) {
    const auto& m = j["mining"];
    check_keys(m, {"n_neighbors", "target_pair_fraction", "count_all_indexed"}, ".mining");
    read_key(m, "n_neighbors", cfg.mining.n_neighbors);
    read_key(m, "target_pair_fraction", cfg.mining.target_pair_fraction);
    read_key(m, "count_all_indexed", cfg.mining.count_all_indexed);
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    check_keys(e, {"max_ngrams", "max_ngram_s", "sweep_points", "topline_pairs", "run_topline", "run_maxpool"},
               ".eval");
    read_key(e, "max_ngrams", cfg.eval.max_ngrams);
    read_key(e, "max_ngram_s", cfg.eval.max_ngram_s);
    read_key(e, "sweep_points", cfg.eval.sweep_points);
    read_key(e, "topline_pairs", cfg.eval.topline_pairs);
    read_key(e, "run_topline", cfg.eval.run_topline);
    read_key(e, "run_maxpool", cfg.eval.run_maxpool);
  }
}

json config_to_json(const RunConfig& cfg) {
  const auto& c = cfg.encoder;
  return {
      {"manifest", cfg.manifest.string()},
      {"features_dir", cfg.features_dir.string()},
      {"run_dir", cfg.run_dir.string()},
      {"feature_source", cfg.feature_source == FeatureSource::mfcc ? "mfcc" : "imported"},
      {"n_iters", cfg.n_iters},
      {"seed", cfg.seed},
      {"stretch_pairs_per_segment", cfg.stretch_pairs_per_segment},
      {"mfcc",
       {{"n_coeffs", cfg.mfcc.n_coeffs},
        {"n_mels", cfg.mfcc.n_mels},
        {"frame_ms", cfg.mfcc.frame_ms},
        {"hop_ms", cfg.mfcc.hop_ms},
        {"preemphasis", cfg.mfcc.preemphasis},
        {"log_floor", cfg.mfcc.log_floor}}},
      {"vad",
       {{"frame_ms", cfg.vad.frame_ms},
        {"hop_ms", cfg.vad.hop_ms},
        {"energy_quantile", cfg.vad.energy_quantile},
        {"min_speech_ms", cfg.vad.min_speech_ms},
        {"min_gap_ms", cfg.vad.min_gap_ms}}},
      {"encoder",
       {{"input_dim", c.input_dim},
        {"conv_channels", c.conv_channels},
        {"conv_kernel", c.conv_kernel},
        {"conv_stride", c.conv_stride},
        {"dropout_p", c.dropout_p},
        {"n_heads", c.n_heads},
        {"ffn_dim", c.ffn_dim},
        {"projection_dim", c.projection_dim},
        {"temperature", c.temperature},
        {"learning_rate", c.learning_rate},
        {"batch_pairs", c.batch_pairs},
        {"max_steps", c.max_steps},
        {"patience", c.patience},
        {"eval_every", c.eval_every},
        {"dev_fraction", c.dev_fraction}}},
      {"stretch",
       {{"factor_min", cfg.stretch.factor_min},
        {"factor_max", cfg.stretch.factor_max},
        {"min_len_s", cfg.stretch.min_len_s},
        {"max_len_s", cfg.stretch.max_len_s},
        {"grid_s", cfg.stretch.grid_s},
        {"pin_first_factor", cfg.stretch.pin_first_factor}}},
      {"mining",
       {{"n_neighbors", cfg.mining.n_neighbors},
        {"target_pair_fraction", cfg.mining.target_pair_fraction},
        {"count_all_indexed", cfg.mining.count_all_indexed}}},
      {"eval",
       {{"max_ngrams", cfg.eval.max_ngrams},
        {"max_ngram_s", cfg.eval.max_ngram_s},
        {"sweep_points", cfg.eval.sweep_points},
        {"topline_pairs", cfg.eval.topline_pairs},
        {"run_topline", cfg.eval.run_topline},
        {"run_maxpool", cfg.eval.run_maxpool}}},
  };
}

RunConfig load_run_config(const fs::path& path, RunConfig base) {
  RunConfig cfg = std::move(base);
  update_config(cfg, read_json(path));
  // Relative paths in a config file are taken relative to the file.
  const fs::path dir = path.parent_path();
  for (fs::path* p : {&cfg.manifest, &cfg.features_dir, &cfg.run_dir})
    if (!p->empty() && p->is_relative()) *p = dir / *p;
  return cfg;
}

FeatureReport compute_features(const RunConfig& cfg, const CorpusManifest& manifest) {
  FeatureReport report;
  const fs::path dir = cfg.resolved_features_dir();
  if (cfg.feature_source == FeatureSource::imported) {
    for (const auto& e : manifest.files) {
      if (fs::exists(feature_path(cfg, e.id)))
        ++report.skipped;
      else
        report.errors.push_back(e.id + ": imported feature file missing (" + feature_path(cfg, e.id).string() + ")");
    }
    return report;
  }
  fs::create_directories(dir);
  std::vector<int> status(manifest.files.size(), 0);  // 0 computed, 1 skipped, 2 failed
  std::vector<std::string> errors(manifest.files.size());
  parallel_for(manifest.files.size(), cfg.jobs, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto& entry = manifest.files[i];
      const fs::path out = feature_path(cfg, entry.id);
      try {
        if (fs::exists(out) && fs::last_write_time(out) > fs::last_write_time(entry.audio)) {
          status[i] = 1;
          continue;
        }
        auto f = compute_mfcc(read_audio(entry), cfg.mfcc, entry.id);
        normalize_mean_variance(f);
        write_features(f, out);
      } catch (const std::exception& ex) {
        status[i] = 2;
        errors[i] = entry.id + ": " + ex.what();
      }
    }
  });
  for (std::size_t i = 0; i < status.size(); ++i) {
    if (status[i] == 0) ++report.computed;
    if (status[i] == 1) ++report.skipped;
    if (status[i] == 2) report.errors.push_back(errors[i]);
  }
  return report;
}

FeatureStore load_feature_store(const RunConfig& cfg, const CorpusManifest& manifest) {
  FeatureStore store;
  for (const auto& e : manifest.files) {
    const fs::path p = feature_path(cfg, e.id);
    if (!fs::exists(p)) throw DataError(e.id + ": feature file missing (" + p.string() + ")");
    auto f = read_features(p);
    f.source = {e.id, 0.0, static_cast<double>(f.num_frames()) / f.frame_rate};
    store.put(e.id, std::move(f));
  }
  return store;
}

std::vector<VASegment> corpus_segments(const RunConfig& cfg, const CorpusManifest& manifest) {
  std::vector<VASegment> out;
  for (const auto& e : manifest.files) {
    std::vector<VASegment> segs = e.vad ? load_vad(*e.vad) : energy_vad(read_audio(e), e.id, cfg.vad);
    for (auto& s : segs)
      if (s.file_id == e.id) out.push_back(std::move(s));
  }
  return out;
}

std::vector<PositivePair> build_stretch_pairs(const RunConfig& cfg, const CorpusManifest& manifest,
                                              const std::vector<VASegment>& segments, FeatureStore& store) {
  struct Job {
    std::string prefix;
    StretchSample sample;
  };
  std::vector<Job> jobs(segments.size());
  const bool waveform = cfg.feature_source == FeatureSource::mfcc;

  parallel_for(segments.size(), cfg.jobs, [&](std::size_t b, std::size_t e) {
    std::string cached_id;
    Waveform audio;
    NormStats stats;
    for (std::size_t i = b; i < e; ++i) {
      const auto& seg = segments[i];
      Rng rng(derive_seed(cfg.seed, "stretch/" + seg.file_id, i));
      StretchVariantBuilder build;
      if (waveform) {
        if (seg.file_id != cached_id) {
          audio = read_audio(manifest.entry(seg.file_id));
          stats = compute_norm_stats(compute_mfcc(audio, cfg.mfcc, seg.file_id));
          cached_id = seg.file_id;
        }
        const auto sr = audio.sample_rate;
        const auto n = static_cast<Eigen::Index>(audio.samples.size());
        const Eigen::Index s0 = std::clamp<Eigen::Index>(seconds_to_sample(seg.start_s, sr), 0, n);
        const Eigen::Index s1 = std::clamp<Eigen::Index>(seconds_to_sample(seg.end_s, sr), s0, n);
        Waveform piece;
        piece.sample_rate = sr;
        piece.samples.assign(audio.samples.begin() + s0, audio.samples.begin() + s1);
        build = [&, piece](double factor) {
          const Waveform stretched = time_stretch_waveform(piece, factor);
          if (mfcc_frame_count(stretched.samples.size(), sr, cfg.mfcc) < 1) {
            FeatureSequence empty;
            empty.frame_rate = 1000.0 / cfg.mfcc.hop_ms;
            empty.data.resize(0, cfg.mfcc.n_coeffs);
            return empty;
          }
          auto f = compute_mfcc(stretched, cfg.mfcc, seg.file_id);
          apply_norm(f, stats);
          return f;
        };
      } else {
        const auto& whole = store.get(seg.file_id);
        const auto [fs0, fs1] =
            interval_frames({seg.file_id, seg.start_s, seg.end_s}, whole.frame_rate, whole.num_frames(), 1);
        const FeatureSequence piece = slice_frames(whole, fs0, fs1);
        build = [piece](double factor) { return time_stretch_features(piece, factor); };
      }
      jobs[i].prefix = "stretch/" + seg.file_id + "/" + std::to_string(i);
      jobs[i].sample = sample_stretch_pairs(build, jobs[i].prefix, cfg.stretch, cfg.stretch_pairs_per_segment, rng);
    }
  });

  std::vector<PositivePair> pairs;
  for (auto& j : jobs) {
    if (j.sample.pairs.empty()) continue;
    store.put(j.prefix + "/v1", std::move(j.sample.first));
    store.put(j.prefix + "/v2", std::move(j.sample.second));
    for (auto& p : j.sample.pairs) pairs.push_back(std::move(p));
  }
  if (pairs.empty()) throw DataError("no VA segment long enough for stretch pairs");
  return pairs;
}

std::vector<PairRecord> to_records(const std::vector<MinedPair>& pairs, Provenance provenance) {
  std::vector<PairRecord> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p.query, p.neighbor, provenance, p.distance});
  return out;
}

std::vector<MinedPair> to_mined(const std::vector<PairRecord>& records) {
  std::vector<MinedPair> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!r.distance) throw DataError("pair " + r.a.file_id + " / " + r.b.file_id + " has no distance");
    out.push_back({r.a, r.b, *r.distance});
  }
  return out;
}

MiningResult mine_with_model(const EncoderModel& model, const std::vector<SpeechInterval>& candidates,
                             const FeatureStore& store, const MiningConfig& cfg, int jobs) {
  const Eigen::MatrixXf emb = embed_intervals(model, candidates, store, jobs);
  return mine_pairs(build_index(emb, candidates), cfg, jobs);
}

std::vector<NgramToken> eval_ngrams(const RunConfig& cfg, const PhonemeAlignment& alignment) {
  Rng rng(derive_seed(cfg.seed, "eval-ngrams"));
  auto ngrams = sample_eval_ngrams(alignment, cfg.eval.max_ngram_s, rng, cfg.eval.max_ngrams);
  if (ngrams.empty()) throw DataError("no phoneme n-gram with a repeated transcription");
  return ngrams;
}

MapReport evaluate_map(const EncoderModel* model, const std::vector<NgramToken>& ngrams, const FeatureStore& store,
                       int jobs) {
  std::vector<SpeechInterval> intervals;
  intervals.reserve(ngrams.size());
  for (const auto& n : ngrams) intervals.push_back(n.interval);
  const Eigen::MatrixXf emb =
      model ? embed_intervals(*model, intervals, store, jobs) : maxpool_intervals(intervals, store, jobs);
  std::vector<RetrievalItem> items(ngrams.size());
  for (std::size_t i = 0; i < ngrams.size(); ++i)
    items[i] = {emb.row(static_cast<Eigen::Index>(i)).transpose(), ngrams[i].transcription, ngrams[i].interval};
  return map_score(items, jobs);
}

json map_report_json(const MapReport& r) {
  json classes = json::object();
  for (const auto& [t, n] : r.per_transcription_class_count) classes[t] = n;
  return {{"n_queries", r.n_queries}, {"map", r.map}, {"per_transcription_class_count", classes}};
}

void write_nedcov_csv(const std::vector<NedCovPoint>& points, const fs::path& path) {
  auto out = text::open_out(path.string());
  out << "threshold,ned,cov,n_pairs\n";
  for (const auto& p : points)
    out << text::format_double(p.threshold) << ',' << text::format_double(p.ned) << ','
        << text::format_double(p.cov) << ',' << p.n_pairs << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

json stats_json(const IterationStats& s) {
  return {{"iteration", s.iteration},
          {"train_pairs", s.train_pairs},
          {"train_steps", s.train_steps},
          {"final_dev_loss", s.final_dev_loss ? json(*s.final_dev_loss) : json(nullptr)},
          {"n_candidates", s.n_candidates},
          {"n_pairs", s.n_pairs},
          {"threshold", s.threshold},
          {"threshold_degenerate", s.threshold_degenerate},
          {"map", s.map},
          {"map_queries", s.map_queries}};
}

IterationStats stats_from_json(const json& j) {
  IterationStats s;
  s.iteration = j.at("iteration");
  s.train_pairs = j.at("train_pairs");
  s.train_steps = j.at("train_steps");
  if (!j.at("final_dev_loss").is_null()) s.final_dev_loss = j.at("final_dev_loss").get<double>();
  s.n_candidates = j.at("n_candidates");
  s.n_pairs = j.at("n_pairs");
  s.threshold = j.at("threshold");
  s.threshold_degenerate = j.at("threshold_degenerate");
  s.map = j.at("map");
  s.map_queries = j.at("map_queries");
  return s;
}

TrainResult train_topline(const RunConfig& cfg, const PhonemeAlignment& alignment, const FeatureStore& store) {
  Rng rng(derive_seed(cfg.seed, "topline-pairs"));
  const auto records = sample_topline_pairs(alignment, rng, cfg.eval.topline_pairs, cfg.eval.max_ngram_s);
  EncoderConfig ecfg = cfg.encoder;
  ecfg.seed = derive_seed(cfg.seed, "train-topline");
  const auto pairs = pairs_to_spans(records, store, ecfg.conv_kernel);
  return train(pairs, store, ecfg);
}

namespace {

void log_line(const std::string& msg) { std::cerr << "[sse] " << msg << std::endl; }

struct Mined {
  std::vector<MinedPair> pairs;
  MiningResult result;
};

}  // namespace

PipelineResult run_pipeline(const RunConfig& cfg) {
  cfg.validate();
  const CorpusManifest manifest = load_manifest(cfg.manifest);
  fs::create_directories(cfg.run_dir);

  const FeatureReport fr = compute_features(cfg, manifest);
  if (!fr.errors.empty()) throw DataError("feature extraction failed: " + fr.errors.front());
  log_line("features: " + std::to_string(fr.computed) + " computed, " + std::to_string(fr.skipped) + " up to date");

  FeatureStore store = load_feature_store(cfg, manifest);
  const PhonemeAlignment alignment = load_corpus_alignment(manifest);
  const auto segments = corpus_segments(cfg, manifest);
  const auto candidates = enumerate_candidates(segments, store.frame_rate(), cfg.stretch);
  const auto ngrams = eval_ngrams(cfg, alignment);
  log_line(std::to_string(segments.size()) + " VA segments, " + std::to_string(candidates.size()) + " candidates, " +
           std::to_string(ngrams.size()) + " eval n-grams");

  PipelineResult result;
  std::vector<PositivePair> train_pairs;
  std::vector<PairRecord> mined_records;

  for (int k = 0; k <= cfg.n_iters; ++k) {
    const fs::path dir = cfg.run_dir / ("iter_" + std::to_string(k));
    const fs::path stats_path = dir / "stats.json";
    IterationStats stats;
    std::optional<EncoderModel> model;

    if (fs::exists(stats_path) && fs::exists(dir / "model.ssem") && fs::exists(dir / "pairs.csv")) {
      // The stats file is written last, so its presence marks a complete iteration.
      stats = stats_from_json(read_json(stats_path));
      mined_records = read_pairs_csv(dir / "pairs.csv");
      log_line("iteration " + std::to_string(k) + ": reusing completed artifacts");
    } else {
      fs::create_directories(dir);
      if (k == 0) {
        if (train_pairs.empty()) train_pairs = build_stretch_pairs(cfg, manifest, segments, store);
      } else {
        train_pairs = pairs_to_spans(mined_records, store, cfg.encoder.conv_kernel);
      }
      EncoderConfig ecfg = cfg.encoder;
      ecfg.seed = derive_seed(cfg.seed, "train", static_cast<std::uint64_t>(k));
      log_line("iteration " + std::to_string(k) + ": training on " + std::to_string(train_pairs.size()) + " pairs");
      TrainResult tr = train(train_pairs, store, ecfg);
      save_model(tr.model, dir / "model.ssem");
      write_train_log(tr.log, dir / "train_log.csv");

      const MapReport map = evaluate_map(&tr.model, ngrams, store, cfg.jobs);
      write_json(map_report_json(map), dir / "map.json");

      const MiningResult mr = mine_with_model(tr.model, candidates, store, cfg.mining, cfg.jobs);
      if (mr.calibration.degenerate) log_line("warning: threshold calibration degenerate at iteration " + std::to_string(k));
      mined_records = to_records(mr.pairs, Provenance::mined);
      write_pairs_csv(mined_records, dir / "pairs.csv");
      if (!mr.pairs.empty())
        write_nedcov_csv(nedcov_sweep(mr.pairs, alignment, cfg.eval.sweep_points), dir / "nedcov.csv");

      stats.iteration = k;
      stats.train_pairs = train_pairs.size();
      stats.train_steps = tr.steps;
      stats.final_dev_loss = tr.best_dev_loss;
      stats.n_candidates = candidates.size();
      stats.n_pairs = mr.pairs.size();
      stats.threshold = mr.calibration.threshold;
      stats.threshold_degenerate = mr.calibration.degenerate;
      stats.map = map.map;
      stats.map_queries = map.n_queries;
      write_json(stats_json(stats), stats_path);
    }
    log_line("iteration " + std::to_string(k) + ": MAP " + text::format_fixed(stats.map, 4) + ", mined " +
             std::to_string(stats.n_pairs) + " pairs");
    result.iterations.push_back(stats);
    if (mined_records.empty() && k < cfg.n_iters) {
      log_line("no pairs mined; stopping after iteration " + std::to_string(k));
      result.stopped_early = true;
      break;
    }
  }

  if (cfg.eval.run_maxpool) {
    const fs::path p = cfg.run_dir / "maxpool" / "map.json";
    if (fs::exists(p)) {
      result.maxpool_map = read_json(p).at("map").get<double>();
    } else {
      fs::create_directories(p.parent_path());
      const MapReport r = evaluate_map(nullptr, ngrams, store, cfg.jobs);
      write_json(map_report_json(r), p);
      result.maxpool_map = r.map;
    }
    log_line("max-pooling baseline MAP " + text::format_fixed(*result.maxpool_map, 4));
  }
  if (cfg.eval.run_topline) {
    const fs::path dir = cfg.run_dir / "topline";
    if (fs::exists(dir / "map.json") && fs::exists(dir / "model.ssem")) {
      result.topline_map = read_json(dir / "map.json").at("map").get<double>();
    } else {
      fs::create_directories(dir);
      log_line("training topline model");
      TrainResult tr = train_topline(cfg, alignment, store);
      save_model(tr.model, dir / "model.ssem");
      write_train_log(tr.log, dir / "train_log.csv");
      const MiningResult mr = mine_with_model(tr.model, candidates, store, cfg.mining, cfg.jobs);
      write_pairs_csv(to_records(mr.pairs, Provenance::mined), dir / "pairs.csv");
      if (!mr.pairs.empty())
        write_nedcov_csv(nedcov_sweep(mr.pairs, alignment, cfg.eval.sweep_points), dir / "nedcov.csv");
      const MapReport r = evaluate_map(&tr.model, ngrams, store, cfg.jobs);
      write_json(map_report_json(r), dir / "map.json");
      result.topline_map = r.map;
    }
    log_line("topline MAP " + text::format_fixed(*result.topline_map, 4));
  }

  json iters = json::array();
  for (const auto& s : result.iterations) iters.push_back(stats_json(s));
  result.summary = {{"seed", cfg.seed},
                    {"n_iters", cfg.n_iters},
                    {"stopped_early", result.stopped_early},
                    {"n_eval_ngrams", ngrams.size()},
                    {"iterations", iters},
                    {"maxpool_map", result.maxpool_map ? json(*result.maxpool_map) : json(nullptr)},
                    {"topline_map", result.topline_map ? json(*result.topline_map) : json(nullptr)}};
  write_json(result.summary, cfg.run_dir / "summary.json");
  return result;
}

}  // namespace sse
