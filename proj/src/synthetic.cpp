#include <algorithm>
#include <cmath>
#include <numbers>

#include "sse/corpus.hpp"
#include "sse/error.hpp"
#include "sse/rng.hpp"

namespace sse {

std::string synthetic_phone_label(int index) {
  if (index < 26) return std::string(1, static_cast<char>('a' + index));
  return "p" + std::to_string(index);
}

namespace {

// Three formant-like partials per phone, fixed per label independent of the
// corpus seed.
struct PhonePattern {
  double freq[3];
  double amp[3];
};

std::vector<PhonePattern> make_patterns(int inventory) {
  std::vector<PhonePattern> out(inventory);
  for (int k = 0; k < inventory; ++k) {
    Rng rng(derive_seed(0x5EED5EEDULL, "phone-pattern", static_cast<std::uint64_t>(k)));
    auto& p = out[k];
    // Spread the first partial evenly so low bands stay distinct across labels.
    const double f1_step = 700.0 / inventory;
    p.freq[0] = 250.0 + f1_step * (k + rng.uniform(0.2, 0.8));
    p.freq[1] = rng.uniform(1000.0, 2400.0);
    p.freq[2] = rng.uniform(2600.0, 3800.0);
    p.amp[0] = rng.uniform(0.5, 1.0);
    p.amp[1] = rng.uniform(0.3, 0.8);
    p.amp[2] = rng.uniform(0.1, 0.4);
  }
  return out;
}

struct PlannedPhone {
  int label;
  std::int64_t start;  // samples
  std::int64_t end;
};

struct PlannedFile {
  double speed;
  double spectral;
  std::int64_t n_samples;
  std::vector<PlannedPhone> phones;                          // speech only
  std::vector<std::pair<std::int64_t, std::int64_t>> words;  // sample spans
};

std::vector<PlannedFile> plan_corpus(const SyntheticConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "synthetic-corpus"));
  std::vector<std::vector<int>> lexicon(cfg.lexicon_size);
  for (auto& word : lexicon) {
    const auto len = rng.uniform_int(cfg.min_word_phones, cfg.max_word_phones);
    for (std::int64_t i = 0; i < len; ++i)
      word.push_back(static_cast<int>(rng.uniform_int(0, cfg.phone_inventory_size - 1)));
  }

  const double sr = cfg.sample_rate;
  std::vector<PlannedFile> files(cfg.n_files);
  for (auto& f : files) {
    f.speed = rng.uniform(1.0 - cfg.speed_jitter, 1.0 + cfg.speed_jitter);
    f.spectral = rng.uniform(1.0 - cfg.spectral_jitter, 1.0 + cfg.spectral_jitter);
    const auto edge = static_cast<std::int64_t>(std::lround(cfg.edge_silence_ms * sr / 1000.0));
    const auto limit = static_cast<std::int64_t>(std::lround(cfg.file_duration_s * sr)) - edge;
    std::int64_t cursor = edge;
    while (true) {
      const auto& word = lexicon[rng.uniform_int(0, cfg.lexicon_size - 1)];
      std::vector<PlannedPhone> phones;
      std::int64_t t = cursor;
      for (int label : word) {
        const double ms = rng.uniform(cfg.min_phone_ms, cfg.max_phone_ms) / f.speed;
        const auto len = std::max<std::int64_t>(1, std::lround(ms * sr / 1000.0));
        phones.push_back({label, t, t + len});
        t += len;
      }
      const double gap_ms = rng.uniform(cfg.min_gap_ms, cfg.max_gap_ms);
      if (t > limit && !f.words.empty()) break;
      f.words.emplace_back(cursor, t);
      f.phones.insert(f.phones.end(), phones.begin(), phones.end());
      cursor = t + std::lround(gap_ms * sr / 1000.0);
      if (cursor >= limit) break;
    }
    f.n_samples = f.words.back().second + edge;
  }
  return files;
}

int count_bigram(const std::vector<PlannedFile>& files, int a, int b) {
  int n = 0;
  for (const auto& f : files)
    for (std::size_t i = 0; i + 1 < f.phones.size(); ++i)
      if (f.phones[i].label == a && f.phones[i + 1].label == b &&
          f.phones[i].end == f.phones[i + 1].start)
        ++n;
  return n;
}

Waveform render(const PlannedFile& f, const std::vector<PhonePattern>& patterns,
                const SyntheticConfig& cfg, Rng& rng) {
  Waveform w;
  w.sample_rate = cfg.sample_rate;
  w.samples.assign(static_cast<std::size_t>(f.n_samples), 0.0f);
  const double sr = cfg.sample_rate;
  const double two_pi = 2.0 * std::numbers::pi;
  const auto ramp = std::lround(0.008 * sr);
  for (const auto& p : f.phones) {
    const auto& pat = patterns[p.label];
    const double phase0 = rng.uniform(0.0, two_pi);
    const std::int64_t len = p.end - p.start;
    for (std::int64_t i = 0; i < len; ++i) {
      const double t = static_cast<double>(i) / sr;
      double env = 1.0;
      if (i < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * i / ramp);
      if (len - 1 - i < ramp) env = std::min(env, 0.5 - 0.5 * std::cos(std::numbers::pi * (len - 1 - i) / ramp));
      double x = 0.0;
      for (int k = 0; k < 3; ++k)
        x += pat.amp[k] * std::sin(two_pi * pat.freq[k] * f.spectral * t + phase0 * (k + 1));
      w.samples[static_cast<std::size_t>(p.start + i)] += static_cast<float>(0.25 * env * x);
    }
  }
  for (auto& s : w.samples) s = std::clamp(s + static_cast<float>(cfg.noise_amplitude * rng.normal()), -1.0f, 1.0f);
  return w;
}

}  // namespace

CorpusManifest generate_synthetic_corpus(const SyntheticConfig& cfg, const fs::path& out_dir) {
  if (cfg.phone_inventory_size < 4) throw UsageError("synthetic corpus: phone inventory must be >= 4");
  if (cfg.n_files < 1) throw UsageError("synthetic corpus: need at least one file");
  if (cfg.lexicon_size < 1 || cfg.min_word_phones < 1 || cfg.max_word_phones < cfg.min_word_phones)
    throw UsageError("synthetic corpus: invalid lexicon parameters");
  if (!(cfg.min_phone_ms > 0) || cfg.max_phone_ms < cfg.min_phone_ms || cfg.speed_jitter < 0 ||
      cfg.speed_jitter >= 1 || cfg.spectral_jitter < 0 || cfg.spectral_jitter >= 1)
    throw UsageError("synthetic corpus: invalid duration parameters");

  // Re-plan with derived seeds until the bigram of the first two labels is
  // non-unique.
  std::vector<PlannedFile> plan;
  for (std::uint64_t attempt = 0;; ++attempt) {
    if (attempt >= 1000) throw DataError("synthetic corpus: could not satisfy bigram requirement");
    const std::uint64_t seed = attempt == 0 ? cfg.seed : derive_seed(cfg.seed, "retry", attempt);
    plan = plan_corpus(cfg, seed);
    if (count_bigram(plan, 0, 1) >= 2) break;
  }

  std::error_code ec;
  for (const char* sub : {"audio", "alignments", "vad"}) {
    fs::create_directories(out_dir / sub, ec);
    if (ec) throw DataError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }

  const auto patterns = make_patterns(cfg.phone_inventory_size);
  const double sr = cfg.sample_rate;
  CorpusManifest manifest;
  manifest.sample_rate = cfg.sample_rate;
  for (int i = 0; i < cfg.n_files; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%03d", i);
    const std::string id = name;
    const auto& f = plan[static_cast<std::size_t>(i)];
    Rng rng(derive_seed(cfg.seed, "render", static_cast<std::uint64_t>(i)));
    const Waveform w = render(f, patterns, cfg, rng);

    PhonemeAlignment align;
    auto& phones = align.files[id];
    std::int64_t cursor = 0;
    for (const auto& p : f.phones) {
      if (p.start > cursor) phones.push_back({"SIL", cursor / sr, p.start / sr, true});
      phones.push_back({synthetic_phone_label(p.label), p.start / sr, p.end / sr, false});
      cursor = p.end;
    }
    if (f.n_samples > cursor) phones.push_back({"SIL", cursor / sr, f.n_samples / sr, true});

    std::vector<VASegment> vad;
    for (const auto& [s, e] : f.words) vad.push_back({id, s / sr, e / sr});

    ManifestEntry e;
    e.id = id;
    e.audio = out_dir / "audio" / (id + ".wav");
    e.alignment = out_dir / "alignments" / (id + ".tsv");
    e.vad = out_dir / "vad" / (id + ".tsv");
    write_wav(w, e.audio);
    write_alignment(align, *e.alignment);
    write_vad(vad, *e.vad);
    manifest.files.push_back(std::move(e));
  }
  write_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace sse
