#include "sse/features.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>

#include "sse/error.hpp"
#include "text_util.hpp"

namespace sse {

void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw UsageError("fft size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

namespace {

struct Framing {
  std::size_t frame;
  std::size_t hop;
};

Framing framing(int sample_rate, const MfccConfig& cfg) {
  const auto frame = static_cast<std::size_t>(std::lround(cfg.frame_ms * sample_rate / 1000.0));
  const auto hop = static_cast<std::size_t>(std::lround(cfg.hop_ms * sample_rate / 1000.0));
  if (frame == 0 || hop == 0) throw UsageError("mfcc: frame and hop must span at least one sample");
  return {frame, hop};
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// n_mels x (fft/2+1) triangular filters spanning 0..Nyquist.
std::vector<std::vector<double>> mel_filterbank(int n_mels, std::size_t fft_size, int sample_rate) {
  const std::size_t bins = fft_size / 2 + 1;
  const double max_mel = hz_to_mel(sample_rate / 2.0);
  std::vector<double> centers(n_mels + 2);
  for (int m = 0; m < n_mels + 2; ++m) centers[m] = mel_to_hz(max_mel * m / (n_mels + 1));
  std::vector<std::vector<double>> fb(n_mels, std::vector<double>(bins, 0.0));
  for (int m = 0; m < n_mels; ++m) {
    const double lo = centers[m], mid = centers[m + 1], hi = centers[m + 2];
    for (std::size_t b = 0; b < bins; ++b) {
      const double hz = static_cast<double>(b) * sample_rate / static_cast<double>(fft_size);
      if (hz > lo && hz < hi) fb[m][b] = hz <= mid ? (hz - lo) / (mid - lo) : (hi - hz) / (hi - mid);
    }
  }
  return fb;
}

}  // namespace

Eigen::Index mfcc_frame_count(std::size_t n_samples, int sample_rate, const MfccConfig& cfg) {
  const auto [frame, hop] = framing(sample_rate, cfg);
  if (n_samples < frame) return 0;
  return static_cast<Eigen::Index>((n_samples - frame) / hop + 1);
}

FeatureSequence compute_mfcc(const Waveform& w, const MfccConfig& cfg, const std::string& file_id) {
  if (cfg.n_coeffs < 1 || cfg.n_coeffs > cfg.n_mels) throw UsageError("mfcc: need 1 <= n_coeffs <= n_mels");
  if (w.sample_rate <= 0) throw UsageError("mfcc: invalid sample rate");
  const auto [frame, hop] = framing(w.sample_rate, cfg);
  const Eigen::Index n_frames = mfcc_frame_count(w.samples.size(), w.sample_rate, cfg);
  if (n_frames < 1) throw DataError("mfcc: waveform shorter than one frame");

  const std::size_t fft_size = std::bit_ceil(frame);
  const auto fb = mel_filterbank(cfg.n_mels, fft_size, w.sample_rate);
  std::vector<double> window(frame);
  for (std::size_t i = 0; i < frame; ++i)
    window[i] = frame > 1 ? 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / (frame - 1)) : 1.0;

  std::vector<double> emph(w.samples.size());
  for (std::size_t i = 0; i < emph.size(); ++i)
    emph[i] = w.samples[i] - (i > 0 ? cfg.preemphasis * w.samples[i - 1] : 0.0);

  const int M = cfg.n_mels;
  // Orthonormal DCT-II basis, only the kept rows.
  std::vector<double> dct(static_cast<std::size_t>(cfg.n_coeffs) * M);
  for (int k = 0; k < cfg.n_coeffs; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / M) : std::sqrt(2.0 / M);
    for (int m = 0; m < M; ++m)
      dct[k * M + m] = scale * std::cos(std::numbers::pi * k * (m + 0.5) / M);
  }

  FeatureSequence out;
  out.data.resize(n_frames, cfg.n_coeffs);
  out.frame_rate = 1000.0 / cfg.hop_ms;
  out.source = {file_id, 0.0, static_cast<double>(n_frames) / out.frame_rate};

  std::vector<std::complex<double>> buf(fft_size);
  std::vector<double> logmel(M);
  const std::size_t bins = fft_size / 2 + 1;
  for (Eigen::Index t = 0; t < n_frames; ++t) {
    const std::size_t off = static_cast<std::size_t>(t) * hop;
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    for (std::size_t i = 0; i < frame; ++i) buf[i] = emph[off + i] * window[i];
    fft_inplace(buf);
    for (int m = 0; m < M; ++m) {
      double e = 0.0;
      for (std::size_t b = 0; b < bins; ++b)
        if (fb[m][b] != 0.0) e += fb[m][b] * std::norm(buf[b]);
      logmel[m] = std::log(std::max(e, cfg.log_floor));
    }
    for (int k = 0; k < cfg.n_coeffs; ++k) {
      double c = 0.0;
      for (int m = 0; m < M; ++m) c += dct[k * M + m] * logmel[m];
      out.data(t, k) = static_cast<float>(c);
    }
  }
  return out;
}

NormStats compute_norm_stats(const FeatureSequence& f) {
  NormStats s;
  const Eigen::Index T = f.num_frames();
  const Eigen::MatrixXd d = f.data.cast<double>();
  const Eigen::RowVectorXd mean = d.colwise().mean();
  Eigen::RowVectorXd var = (d.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(std::max<Eigen::Index>(T, 1));
  s.mean = mean.cast<float>();
  s.stddev = var.array().sqrt().max(1e-5).matrix().cast<float>();
  return s;
}

void apply_norm(FeatureSequence& f, const NormStats& stats) {
  if (stats.mean.size() != f.dim()) throw DataError("normalization stats dimension mismatch");
  f.data = ((f.data.rowwise() - stats.mean).array().rowwise() / stats.stddev.array()).matrix();
}

namespace {

constexpr char kMagic[4] = {'S', 'S', 'E', 'F'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get(std::istream& in, T& v) {
  return static_cast<bool>(in.read(reinterpret_cast<char*>(&v), sizeof(T)));
}

}  // namespace

void write_features(const FeatureSequence& f, const std::filesystem::path& path) {
  auto out = text::open_out(path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(f.dim()));
  put<float>(out, static_cast<float>(f.frame_rate));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(f.num_frames()));
  out.write(reinterpret_cast<const char*>(f.data.data()),
            static_cast<std::streamsize>(f.data.size() * sizeof(float)));
  if (!out) throw DataError("write failed: " + path.string());
}

FeatureSequence read_features(const std::filesystem::path& path) {
  auto in = text::open_in(path.string());
  const std::string where = path.string() + ": ";
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw DataError(where + "bad magic, not an SSEF file");
  std::uint32_t version = 0, dim = 0;
  float rate = 0;
  std::uint64_t frames = 0;
  if (!get(in, version) || !get(in, dim) || !get(in, rate) || !get(in, frames))
    throw DataError(where + "truncated header");
  if (version != kVersion) throw DataError(where + "unsupported version " + std::to_string(version));
  if (dim == 0 || frames == 0) throw DataError(where + "empty feature matrix");
  if (!(rate > 0) || !std::isfinite(rate)) throw DataError(where + "invalid frame rate");

  FeatureSequence f;
  f.frame_rate = rate;
  f.data.resize(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(dim));
  const auto bytes = static_cast<std::streamsize>(frames * dim * sizeof(float));
  in.read(reinterpret_cast<char*>(f.data.data()), bytes);
  if (in.gcount() != bytes) {
    throw DataError(where + "truncated body: header declares " + std::to_string(frames) + " frames, file holds " +
                    std::to_string(in.gcount() / static_cast<std::streamsize>(dim * sizeof(float))));
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw DataError(where + "body larger than header dimensions " + std::to_string(frames) + "x" + std::to_string(dim));
  if (!f.data.allFinite()) throw DataError(where + "non-finite feature value");
  f.source = {path.stem().string(), 0.0, static_cast<double>(frames) / rate};
  return f;
}

FeatureSequence slice_frames(const FeatureSequence& f, Eigen::Index s, Eigen::Index e) {
  if (s < 0 || e > f.num_frames() || s >= e)
    throw DataError("slice_frames: [" + std::to_string(s) + ", " + std::to_string(e) + ") outside 0.." +
                    std::to_string(f.num_frames()));
  FeatureSequence out;
  out.data = f.data.middleRows(s, e - s);
  out.frame_rate = f.frame_rate;
  out.source = {f.source.file_id, f.source.start_s + static_cast<double>(s) / f.frame_rate,
                f.source.start_s + static_cast<double>(e) / f.frame_rate};
  return out;
}

}  // namespace sse
