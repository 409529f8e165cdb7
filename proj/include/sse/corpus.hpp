#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace sse {

namespace fs = std::filesystem;

/// Mono PCM signal, samples in [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate = 0;

  double duration() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

/// A contiguous voice-activity region of one file.
struct VASegment {
  std::string file_id;
  double start_s = 0.0;
  double end_s = 0.0;

  bool operator==(const VASegment&) const = default;
};

struct Phone {
  std::string label;
  double start_s = 0.0;
  double end_s = 0.0;
  bool silence = false;

  bool operator==(const Phone&) const = default;
};

std::set<std::string> default_silence_labels();

/// Time-stamped phone labels, keyed by file id. Phones of a file are sorted
/// and never overlap.
struct PhonemeAlignment {
  std::map<std::string, std::vector<Phone>> files;

  const std::vector<Phone>& phones(const std::string& file_id) const;
  bool contains(const std::string& file_id) const { return files.count(file_id) > 0; }
  bool operator==(const PhonemeAlignment&) const = default;
};

struct ManifestEntry {
  std::string id;
  fs::path audio;
  std::optional<fs::path> alignment;
  std::optional<fs::path> vad;
};

struct CorpusManifest {
  int sample_rate = 0;
  std::vector<ManifestEntry> files;

  const ManifestEntry& entry(const std::string& id) const;
};

// Manifest JSON. Relative paths are resolved against the manifest directory.
CorpusManifest load_manifest(const fs::path& path);
void write_manifest(const CorpusManifest& manifest, const fs::path& path);

// WAV I/O: 16-bit PCM or 32-bit float; multi-channel input keeps channel 0.
Waveform read_wav(const fs::path& path);
Waveform read_audio(const ManifestEntry& entry);
void write_wav(const Waveform& w, const fs::path& path);

struct VadConfig {
  double frame_ms = 25.0;
  double hop_ms = 10.0;
  double energy_quantile = 0.4;
  double min_speech_ms = 120.0;
  double min_gap_ms = 100.0;
};

/// Quantile-thresholded log-energy voice activity detection. A frame is speech
/// iff its log-energy strictly exceeds the `energy_quantile` quantile of the
/// waveform's frame log-energies. Gaps shorter than `min_gap_ms` are closed,
/// then segments shorter than `min_speech_ms` are dropped.
std::vector<VASegment> energy_vad(const Waveform& w, const std::string& file_id,
                                  const VadConfig& cfg = {});

// Alignment TSV: file_id, start_s, end_s, phone.
PhonemeAlignment load_alignment(const fs::path& path,
                                const std::set<std::string>& silence_labels =
                                    default_silence_labels());
void write_alignment(const PhonemeAlignment& alignment, const fs::path& path);

/// Alignment of every manifest entry that has one, merged.
PhonemeAlignment load_corpus_alignment(const CorpusManifest& manifest,
                                       const std::set<std::string>& silence_labels =
                                           default_silence_labels());

// VAD TSV: file_id, start_s, end_s.
std::vector<VASegment> load_vad(const fs::path& path);
void write_vad(const std::vector<VASegment>& segments, const fs::path& path);

struct SyntheticConfig {
  int n_files = 50;
  int phone_inventory_size = 8;
  std::uint64_t seed = 1234;
  int sample_rate = 16000;
  double file_duration_s = 10.0;
  int lexicon_size = 40;
  int min_word_phones = 2;
  int max_word_phones = 6;
  double min_phone_ms = 60.0;
  double max_phone_ms = 150.0;
  double min_gap_ms = 100.0;
  double max_gap_ms = 200.0;
  double edge_silence_ms = 150.0;
  double noise_amplitude = 0.003;
  // Per-utterance tempo factor range (phone durations scale by 1/speed).
  double speed_jitter = 0.1;
  // Per-utterance scale range of every partial's frequency.
  double spectral_jitter = 0.0;
};

/// Labels used for the synthetic phone inventory: "a", "b", ... then "p<k>".
std::string synthetic_phone_label(int index);

/// Writes `<out_dir>/audio/*.wav`, `<out_dir>/alignments/*.tsv`,
/// `<out_dir>/vad/*.tsv` and `<out_dir>/manifest.json`. The output is a pure
/// function of `cfg`; the bigram made of the first two inventory labels is
/// guaranteed to occur at least twice.
CorpusManifest generate_synthetic_corpus(const SyntheticConfig& cfg, const fs::path& out_dir);

}  // namespace sse
