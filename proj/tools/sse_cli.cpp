#include <iostream>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sse/error.hpp"
#include "sse/parallel.hpp"
#include "sse/pipeline.hpp"

namespace {

using namespace sse;

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string run_dir;
  std::string manifest;
};

RunConfig resolve_config(const GlobalOptions& g) {
  RunConfig base;
  base.jobs = default_jobs();
  RunConfig cfg = g.config.empty() ? base : load_run_config(g.config, base);
  if (g.seed) cfg.seed = *g.seed;
  if (g.jobs) cfg.jobs = *g.jobs;
  if (!g.run_dir.empty()) cfg.run_dir = g.run_dir;
  if (!g.manifest.empty()) cfg.manifest = g.manifest;
  return cfg;
}

void write_text(const std::string& text, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << text << '\n';
}

int cmd_synth(const GlobalOptions& g, SyntheticConfig sc, const std::string& out_dir) {
  if (g.seed) sc.seed = *g.seed;
  const auto manifest = generate_synthetic_corpus(sc, out_dir);
  std::cout << "wrote " << manifest.files.size() << " files to " << out_dir << '\n';
  return 0;
}

int cmd_features(const GlobalOptions& g) {
  const RunConfig cfg = resolve_config(g);
  if (cfg.manifest.empty()) throw UsageError("features: a manifest is required (--manifest or config)");
  const auto manifest = load_manifest(cfg.manifest);
  const auto report = compute_features(cfg, manifest);
  std::cout << "computed " << report.computed << ", up to date " << report.skipped << ", failed "
            << report.errors.size() << '\n';
  for (const auto& e : report.errors) std::cerr << "error: " << e << '\n';
  return report.errors.empty() ? 0 : 2;
}

int cmd_pipeline(const GlobalOptions& g, std::optional<int> iters) {
  RunConfig cfg = resolve_config(g);
  if (iters) cfg.n_iters = *iters;
  const auto result = run_pipeline(cfg);
  std::cout << result.summary.dump(2) << '\n';
  return 0;
}

struct Loaded {
  RunConfig cfg;
  CorpusManifest manifest;
  FeatureStore store;
};

Loaded load_run_inputs(const GlobalOptions& g) {
  Loaded l;
  l.cfg = resolve_config(g);
  l.cfg.validate();
  l.manifest = load_manifest(l.cfg.manifest);
  const auto fr = compute_features(l.cfg, l.manifest);
  if (!fr.errors.empty()) throw DataError("feature extraction failed: " + fr.errors.front());
  l.store = load_feature_store(l.cfg, l.manifest);
  return l;
}

int cmd_eval_map(const GlobalOptions& g, const std::string& checkpoint, const std::string& baseline, bool topline,
                 const std::string& out) {
  const int modes = static_cast<int>(!checkpoint.empty()) + static_cast<int>(!baseline.empty()) + static_cast<int>(topline);
  if (modes != 1) throw UsageError("eval-map: give exactly one of --checkpoint, --baseline maxpool, --topline");
  if (!baseline.empty() && baseline != "maxpool") throw UsageError("eval-map: unknown baseline '" + baseline + "'");
  auto l = load_run_inputs(g);
  const auto alignment = load_corpus_alignment(l.manifest);
  const auto ngrams = eval_ngrams(l.cfg, alignment);
  MapReport report;
  if (!checkpoint.empty()) {
    const auto model = load_model(checkpoint);
    report = evaluate_map(&model, ngrams, l.store, l.cfg.jobs);
  } else if (topline) {
    const auto tr = train_topline(l.cfg, alignment, l.store);
    report = evaluate_map(&tr.model, ngrams, l.store, l.cfg.jobs);
  } else {
    report = evaluate_map(nullptr, ngrams, l.store, l.cfg.jobs);
  }
  const std::string text = map_report_json(report).dump(2);
  if (!out.empty()) write_text(text, out);
  std::cout << text << '\n';
  return 0;
}

int cmd_eval_nedcov(const GlobalOptions& g, const std::string& pairs_csv, std::optional<std::size_t> points,
                    const std::string& out) {
  RunConfig cfg = resolve_config(g);
  if (points) cfg.eval.sweep_points = *points;
  if (cfg.manifest.empty()) throw UsageError("eval-nedcov: a manifest is required (--manifest or config)");
  const auto records = read_pairs_csv(pairs_csv);
  if (records.empty()) throw DataError(pairs_csv + ": no pairs");
  auto pairs = to_mined(records);
  std::stable_sort(pairs.begin(), pairs.end(), [](const MinedPair& a, const MinedPair& b) { return a.distance < b.distance; });
  const auto alignment = load_corpus_alignment(load_manifest(cfg.manifest));
  const auto sweep = nedcov_sweep(pairs, alignment, cfg.eval.sweep_points);
  if (!out.empty()) {
    write_nedcov_csv(sweep, out);
  } else {
    std::cout << "threshold,ned,cov,n_pairs\n";
    for (const auto& p : sweep) std::cout << p.threshold << ',' << p.ned << ',' << p.cov << ',' << p.n_pairs << '\n';
  }
  return 0;
}

int cmd_mine(const GlobalOptions& g, const std::string& checkpoint, const std::string& out) {
  auto l = load_run_inputs(g);
  const auto model = load_model(checkpoint);
  const auto candidates =
      enumerate_candidates(corpus_segments(l.cfg, l.manifest), l.store.frame_rate(), l.cfg.stretch);
  const auto result = mine_with_model(model, candidates, l.store, l.cfg.mining, l.cfg.jobs);
  write_pairs_csv(to_records(result.pairs, Provenance::mined), out);
  std::cout << candidates.size() << " candidates, " << result.pairs.size() << " pairs, threshold "
            << result.calibration.threshold << (result.calibration.degenerate ? " (degenerate)" : "") << '\n';
  return 0;
}

int cmd_train(const GlobalOptions& g, const std::string& pairs_csv, bool stretch, const std::string& out,
              const std::string& log) {
  if (pairs_csv.empty() == !stretch) throw UsageError("train: give exactly one of --pairs or --stretch");
  auto l = load_run_inputs(g);
  std::vector<PositivePair> pairs;
  if (stretch) {
    pairs = build_stretch_pairs(l.cfg, l.manifest, corpus_segments(l.cfg, l.manifest), l.store);
  } else {
    pairs = pairs_to_spans(read_pairs_csv(pairs_csv), l.store, l.cfg.encoder.conv_kernel);
  }
  EncoderConfig ecfg = l.cfg.encoder;
  ecfg.seed = derive_seed(l.cfg.seed, "train");
  const auto result = train(pairs, l.store, ecfg);
  save_model(result.model, out);
  if (!log.empty()) write_train_log(result.log, log);
  std::cout << "trained " << result.steps << " steps on " << result.train_pairs << " pairs";
  if (result.best_dev_loss) std::cout << ", best dev loss " << *result.best_dev_loss << " at step " << result.best_step;
  std::cout << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised speech sequence embeddings"};
  app.require_subcommand(1);
  // Global flags may also follow the subcommand.
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "JSON run configuration");
  app.add_option("--seed", g.seed, "Global seed (overrides config)");
  app.add_option("--jobs", g.jobs, "Worker threads (default: available cores)")->check(CLI::PositiveNumber);
  app.add_option("--run-dir", g.run_dir, "Run directory (overrides config)");
  app.add_option("--manifest", g.manifest, "Corpus manifest (overrides config)");

  SyntheticConfig sc;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with alignments");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--n-files", sc.n_files);
  synth->add_option("--inventory", sc.phone_inventory_size);
  synth->add_option("--duration", sc.file_duration_s, "Seconds per file");
  synth->add_option("--speed-jitter", sc.speed_jitter, "Per-file tempo range");
  synth->add_option("--spectral-jitter", sc.spectral_jitter, "Per-file frequency-scale range");

  auto* features = app.add_subcommand("features", "Compute or verify frame-level features");

  std::optional<int> iters;
  auto* pipeline = app.add_subcommand("pipeline", "Stretch pretraining followed by mine-and-retrain iterations");
  pipeline->add_option("--iters", iters, "Number of mining iterations");

  std::string checkpoint, baseline, map_out;
  bool topline = false;
  auto* eval_map = app.add_subcommand("eval-map", "Phoneme n-gram MAP of a model or baseline");
  eval_map->add_option("--checkpoint", checkpoint);
  eval_map->add_option("--baseline", baseline, "maxpool");
  eval_map->add_flag("--topline", topline, "Train on transcription-matched pairs first");
  eval_map->add_option("--out", map_out, "Write the report JSON here");

  std::string nedcov_pairs, nedcov_out;
  std::optional<std::size_t> points;
  auto* eval_nedcov = app.add_subcommand("eval-nedcov", "NED/COV threshold sweep of mined pairs");
  eval_nedcov->add_option("--pairs", nedcov_pairs)->required();
  eval_nedcov->add_option("--points", points);
  eval_nedcov->add_option("--out", nedcov_out);

  std::string mine_ckpt, mine_out;
  auto* mine = app.add_subcommand("mine", "Mine positive pairs with a trained model");
  mine->add_option("--checkpoint", mine_ckpt)->required();
  mine->add_option("--out", mine_out)->required();

  std::string train_pairs, train_out, train_log;
  bool train_stretch = false;
  auto* trn = app.add_subcommand("train", "Train an encoder on a pair list");
  trn->add_option("--pairs", train_pairs);
  trn->add_flag("--stretch", train_stretch, "Train on stretch pairs");
  trn->add_option("--out", train_out)->required();
  trn->add_option("--log", train_log);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(g, sc, synth_out);
    if (*features) return cmd_features(g);
    if (*pipeline) return cmd_pipeline(g, iters);
    if (*eval_map) return cmd_eval_map(g, checkpoint, baseline, topline, map_out);
    if (*eval_nedcov) return cmd_eval_nedcov(g, nedcov_pairs, points, nedcov_out);
    if (*mine) return cmd_mine(g, mine_ckpt, mine_out);
    if (*trn) return cmd_train(g, train_pairs, train_stretch, train_out, train_log);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
