#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include <cstdint>
#include <cstring>
#include <map>

#include "sse/corpus.hpp"
#include "sse/error.hpp"
#include "sse/rng.hpp"
#include "test_support.hpp"

using namespace sse;
using sse::tu::TempDir;
using ::testing::HasSubstr;

namespace {

template <typename T>
void put(std::string& s, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  s.append(b, sizeof(T));
}

// Minimal RIFF writer for encodings the library never writes itself.
std::string wav_bytes(std::uint16_t format, std::uint16_t channels, std::uint16_t bits, int rate,
                      const std::string& data) {
  std::string s = "RIFF";
  put<std::uint32_t>(s, static_cast<std::uint32_t>(36 + data.size()));
  s += "WAVEfmt ";
  put<std::uint32_t>(s, 16);
  put<std::uint16_t>(s, format);
  put<std::uint16_t>(s, channels);
  put<std::uint32_t>(s, static_cast<std::uint32_t>(rate));
  put<std::uint32_t>(s, static_cast<std::uint32_t>(rate * channels * bits / 8));
  put<std::uint16_t>(s, static_cast<std::uint16_t>(channels * bits / 8));
  put<std::uint16_t>(s, bits);
  s += "data";
  put<std::uint32_t>(s, static_cast<std::uint32_t>(data.size()));
  return s + data;
}

class SyntheticCorpus : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir();
    manifest_ = new CorpusManifest(generate_synthetic_corpus({}, dir_->path()));
  }
  static void TearDownTestSuite() {
    delete manifest_;
    delete dir_;
  }
  static TempDir* dir_;
  static CorpusManifest* manifest_;
};
TempDir* SyntheticCorpus::dir_ = nullptr;
CorpusManifest* SyntheticCorpus::manifest_ = nullptr;

}  // namespace

TEST(Manifest, LoadsEntriesRelativeToManifestDir) {
  TempDir dir;
  write_wav(tu::silence(0.1), dir / "a.wav");
  write_wav(tu::silence(0.1), dir / "b.wav");
  tu::write_text(dir / "m.json",
                      R"({"sample_rate": 16000, "files": [{"id": "a", "audio": "a.wav"}, {"id": "b", "audio": "b.wav"}]})");
  const auto m = load_manifest(dir / "m.json");
  ASSERT_EQ(m.files.size(), 2u);
  EXPECT_EQ(m.files[1].id, "b");
  EXPECT_EQ(m.files[1].audio, dir / "b.wav");
  EXPECT_FALSE(m.files[0].alignment.has_value());
}

TEST(Manifest, DuplicateIdIsNamed) {
  TempDir dir;
  write_wav(tu::silence(0.1), dir / "a.wav");
  tu::write_text(dir / "m.json",
                      R"({"sample_rate": 16000, "files": [{"id": "a", "audio": "a.wav"}, {"id": "a", "audio": "a.wav"}]})");
  try {
    load_manifest(dir / "m.json");
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_THAT(e.what(), HasSubstr("'a'"));
  }
}

TEST(Manifest, MissingAudioNamesEntry) {
  TempDir dir;
  tu::write_text(dir / "m.json", R"({"sample_rate": 16000, "files": [{"id": "ghost", "audio": "nope.wav"}]})");
  try {
    load_manifest(dir / "m.json");
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_THAT(e.what(), HasSubstr("ghost"));
  }
}

TEST(Manifest, RoundTrip) {
  TempDir dir;
  write_wav(tu::silence(0.1), dir / "a.wav");
  write_vad({{"a", 0.0, 0.05}}, dir / "a.vad");
  CorpusManifest m;
  m.sample_rate = 16000;
  m.files.push_back({"a", dir / "a.wav", std::nullopt, dir / "a.vad"});
  write_manifest(m, dir / "m.json");
  const auto back = load_manifest(dir / "m.json");
  ASSERT_EQ(back.files.size(), 1u);
  EXPECT_EQ(back.files[0].audio, m.files[0].audio);
  EXPECT_EQ(back.files[0].vad, m.files[0].vad);
}

TEST(Wav, SilenceReadsAsZeros) {
  TempDir dir;
  write_wav(tu::silence(1.0), dir / "s.wav");
  const auto w = read_wav(dir / "s.wav");
  EXPECT_EQ(w.sample_rate, 16000);
  ASSERT_EQ(w.samples.size(), 16000u);
  for (float s : w.samples) ASSERT_EQ(s, 0.0f);
}

TEST(Wav, Pcm16Scaling) {
  TempDir dir;
  std::string data;
  put<std::int16_t>(data, 16384);
  put<std::int16_t>(data, -32768);
  tu::write_text(dir / "x.wav", wav_bytes(1, 1, 16, 8000, data));
  const auto w = read_wav(dir / "x.wav");
  ASSERT_EQ(w.samples.size(), 2u);
  EXPECT_NEAR(w.samples[0], 0.5f, 1e-4);
  EXPECT_NEAR(w.samples[1], -1.0f, 1e-4);
  EXPECT_EQ(w.sample_rate, 8000);
}

TEST(Wav, StereoKeepsFirstChannel) {
  TempDir dir;
  std::string data;
  for (int i = 0; i < 5; ++i) {
    put<std::int16_t>(data, static_cast<std::int16_t>(1000 * i));
    put<std::int16_t>(data, -7);
  }
  tu::write_text(dir / "st.wav", wav_bytes(1, 2, 16, 16000, data));
  const auto w = read_wav(dir / "st.wav");
  ASSERT_EQ(w.samples.size(), 5u);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(w.samples[i], 1000.0f * i / 32768.0f, 1e-6);
}

TEST(Wav, Float32) {
  TempDir dir;
  std::string data;
  put<float>(data, 0.25f);
  put<float>(data, -0.75f);
  tu::write_text(dir / "f.wav", wav_bytes(3, 1, 32, 16000, data));
  const auto w = read_wav(dir / "f.wav");
  ASSERT_EQ(w.samples.size(), 2u);
  EXPECT_EQ(w.samples[0], 0.25f);
  EXPECT_EQ(w.samples[1], -0.75f);
}

TEST(Wav, TruncatedAndUnsupportedRejected) {
  TempDir dir;
  std::string data(400, '\0');
  auto bytes = wav_bytes(1, 1, 16, 16000, data);
  tu::write_text(dir / "t.wav", bytes.substr(0, bytes.size() - 100));
  EXPECT_THROW(read_wav(dir / "t.wav"), DataError);
  tu::write_text(dir / "u.wav", wav_bytes(1, 1, 8, 16000, data));
  EXPECT_THROW(read_wav(dir / "u.wav"), DataError);
}

TEST(Wav, WriteReadWithinQuantization) {
  TempDir dir;
  const auto w = tu::tone(440.0, 0.2);
  write_wav(w, dir / "t.wav");
  const auto back = read_wav(dir / "t.wav");
  ASSERT_EQ(back.samples.size(), w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) ASSERT_NEAR(back.samples[i], w.samples[i], 1.0 / 32767.0);
}

TEST(EnergyVad, SilenceGivesNothing) {
  EXPECT_TRUE(energy_vad(tu::silence(2.0), "z").empty());
  EXPECT_THROW(energy_vad(Waveform{{}, 16000}, "z"), DataError);
}

TEST(EnergyVad, TonePaddedBySilence) {
  const auto w = tu::concat({tu::silence(1.0), tu::tone(500.0, 1.0), tu::silence(1.0)});
  const auto segs = energy_vad(w, "t");
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_NEAR(segs[0].start_s, 1.0, 0.010);
  EXPECT_NEAR(segs[0].end_s, 2.0, 0.010);
  EXPECT_EQ(segs[0].file_id, "t");
}

TEST(EnergyVad, ShortGapIsClosed) {
  const auto w = tu::concat({tu::silence(1.0), tu::tone(500.0, 0.5), tu::silence(0.05),
                                  tu::tone(500.0, 0.5), tu::silence(1.5)});
  const auto segs = energy_vad(w, "t");
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_NEAR(segs[0].start_s, 1.0, 0.010);
  EXPECT_NEAR(segs[0].end_s, 2.05, 0.010);
}

TEST(EnergyVad, LongGapSplitsAndShortBurstDropped) {
  const auto w = tu::concat({tu::silence(1.0), tu::tone(500.0, 0.5), tu::silence(0.5),
                                  tu::tone(500.0, 0.5), tu::silence(1.0), tu::tone(500.0, 0.05),
                                  tu::silence(1.0)});
  const auto segs = energy_vad(w, "t");
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_LT(segs[0].end_s, segs[1].start_s);
}

TEST(EnergyVad, GainInvariant) {
  Rng rng(5);
  Waveform w = tu::silence(3.0);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const double env = (i / 4000) % 3 == 0 ? 0.02 : 0.4 * (1 + (i / 4000) % 2);
    w.samples[i] = static_cast<float>(env * rng.normal() * 0.3);
  }
  Waveform louder = w;
  for (auto& s : louder.samples) s *= 2.5f;
  const auto a = energy_vad(w, "g");
  ASSERT_FALSE(a.empty());
  EXPECT_EQ(a, energy_vad(louder, "g"));
}

TEST(EnergyVad, SegmentsSortedDisjointWithinFile) {
  Rng rng(9);
  Waveform w = tu::silence(5.0);
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = static_cast<float>(((i / 2400) % 2 ? 0.5 : 0.01) * rng.normal() * 0.2);
  const auto segs = energy_vad(w, "r");
  ASSERT_FALSE(segs.empty());
  for (std::size_t i = 0; i < segs.size(); ++i) {
    EXPECT_LT(segs[i].start_s, segs[i].end_s);
    EXPECT_GE(segs[i].start_s, 0.0);
    EXPECT_LE(segs[i].end_s, w.duration());
    if (i) EXPECT_LT(segs[i - 1].end_s, segs[i].start_s);
  }
}

TEST(Alignment, LoadsTwoPhones) {
  TempDir dir;
  tu::write_text(dir / "a.tsv", "f\t0.0\t0.1\ta\nf\t0.1\t0.2\tb\n");
  const auto al = load_alignment(dir / "a.tsv");
  ASSERT_EQ(al.phones("f").size(), 2u);
  EXPECT_EQ(al.phones("f")[1].label, "b");
  EXPECT_DOUBLE_EQ(al.phones("f")[1].start_s, 0.1);
}

TEST(Alignment, UnsortedRowsReportLine) {
  TempDir dir;
  tu::write_text(dir / "a.tsv", "f\t0.1\t0.2\tb\nf\t0.0\t0.1\ta\n");
  try {
    load_alignment(dir / "a.tsv");
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_THAT(e.what(), HasSubstr(":2:"));
  }
}

TEST(Alignment, OverlapRejected) {
  TempDir dir;
  tu::write_text(dir / "a.tsv", "f\t0.0\t0.15\ta\nf\t0.1\t0.2\tb\n");
  EXPECT_THROW(load_alignment(dir / "a.tsv"), DataError);
}

TEST(Alignment, SilenceLabelsConfigurable) {
  TempDir dir;
  tu::write_text(dir / "a.tsv", "f\t0\t0.1\tSIL\nf\t0.1\t0.2\tpau\n");
  const auto def = load_alignment(dir / "a.tsv");
  EXPECT_TRUE(def.phones("f")[0].silence);
  EXPECT_FALSE(def.phones("f")[1].silence);
  const auto custom = load_alignment(dir / "a.tsv", {"pau"});
  EXPECT_FALSE(custom.phones("f")[0].silence);
  EXPECT_TRUE(custom.phones("f")[1].silence);
}

TEST(Alignment, RandomRoundTrip) {
  TempDir dir;
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    PhonemeAlignment al;
    for (int f = 0; f < 3; ++f) {
      auto& phones = al.files["f" + std::to_string(f)];
      double t = rng.uniform(0, 0.5);
      for (int i = 0; i < 30; ++i) {
        const double d = rng.uniform(0.001, 0.2);
        const std::string label = rng.uniform() < 0.1 ? "SIL" : synthetic_phone_label(static_cast<int>(rng.uniform_int(0, 30)));
        phones.push_back({label, t, t + d, label == "SIL"});
        t += d + (rng.uniform() < 0.3 ? rng.uniform(0, 0.1) : 0.0);
      }
    }
    write_alignment(al, dir / "r.tsv");
    ASSERT_EQ(load_alignment(dir / "r.tsv"), al);
  }
}

TEST_F(SyntheticCorpus, FiftyFilesWithAlignments) {
  const auto m = load_manifest(dir_->path() / "manifest.json");
  ASSERT_EQ(m.files.size(), 50u);
  for (const auto& e : m.files) {
    EXPECT_TRUE(e.alignment.has_value());
    EXPECT_TRUE(e.vad.has_value());
  }
}

TEST_F(SyntheticCorpus, TokenCountAndRepeatedBigram) {
  const auto al = load_corpus_alignment(*manifest_);
  std::size_t tokens = 0, ab = 0;
  for (const auto& [id, phones] : al.files) {
    for (std::size_t i = 0; i < phones.size(); ++i) {
      if (phones[i].silence) continue;
      ++tokens;
      if (i + 1 < phones.size() && phones[i].label == "a" && phones[i + 1].label == "b" &&
          phones[i].end_s == phones[i + 1].start_s)
        ++ab;
    }
  }
  // Roughly 0.57 s per four-phone word plus gap over 9.7 s of speech per file.
  EXPECT_GE(tokens, 2500u);
  EXPECT_LE(tokens, 4500u);
  EXPECT_GE(ab, 2u);
}

TEST_F(SyntheticCorpus, PhoneDurationsAndSilenceGaps) {
  const auto al = load_corpus_alignment(*manifest_);
  SyntheticConfig cfg;
  const double lo = cfg.min_phone_ms / 1000.0 / (1 + cfg.speed_jitter) - 1e-4;
  const double hi = cfg.max_phone_ms / 1000.0 / (1 - cfg.speed_jitter) + 1e-4;
  for (const auto& [id, phones] : al.files) {
    EXPECT_TRUE(phones.front().silence);
    EXPECT_TRUE(phones.back().silence);
    for (const auto& p : phones) {
      if (p.silence) continue;
      EXPECT_GE(p.end_s - p.start_s, lo);
      EXPECT_LE(p.end_s - p.start_s, hi);
    }
  }
}

TEST_F(SyntheticCorpus, VadFilesMatchWordSpans) {
  const auto al = load_corpus_alignment(*manifest_);
  for (const auto& e : manifest_->files) {
    const auto segs = load_vad(*e.vad);
    ASSERT_FALSE(segs.empty());
    const auto& phones = al.phones(e.id);
    for (const auto& s : segs) {
      // Every segment is silence-free: no silence phone overlaps its interior.
      for (const auto& p : phones)
        if (p.silence) EXPECT_FALSE(std::min(p.end_s, s.end_s) - std::max(p.start_s, s.start_s) > 1e-9);
    }
  }
}

TEST(Synthetic, SameSeedByteIdentical) {
  TempDir a, b;
  SyntheticConfig cfg;
  cfg.n_files = 4;
  cfg.file_duration_s = 3.0;
  generate_synthetic_corpus(cfg, a.path() / "out");
  generate_synthetic_corpus(cfg, b.path() / "out");
  std::size_t compared = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path() / "out")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a.path());
    ASSERT_EQ(tu::read_bytes(entry.path()), tu::read_bytes(b.path() / rel)) << rel;
    ++compared;
  }
  EXPECT_EQ(compared, 4u * 3 + 1);
}

TEST(Synthetic, DifferentSeedDiffers) {
  TempDir a;
  SyntheticConfig cfg;
  cfg.n_files = 2;
  cfg.file_duration_s = 3.0;
  generate_synthetic_corpus(cfg, a / "x");
  cfg.seed = 99;
  generate_synthetic_corpus(cfg, a / "y");
  EXPECT_NE(tu::read_bytes(a / "x/alignments/synth_000.tsv"), tu::read_bytes(a / "y/alignments/synth_000.tsv"));
}

TEST(Synthetic, RejectsBadArguments) {
  TempDir a;
  SyntheticConfig cfg;
  cfg.phone_inventory_size = 3;
  EXPECT_THROW(generate_synthetic_corpus(cfg, a / "x"), UsageError);
  cfg = {};
  cfg.n_files = 0;
  EXPECT_THROW(generate_synthetic_corpus(cfg, a / "x"), UsageError);
}
