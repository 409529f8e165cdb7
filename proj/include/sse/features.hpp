#pragma once

#include <complex>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "sse/corpus.hpp"
#include "sse/interval.hpp"

namespace sse {

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// T x D frame-level features at `frame_rate` frames per second. Row t is
/// anchored at time source.start_s + t / frame_rate.
struct FeatureSequence {
  FeatureMatrix data;
  double frame_rate = 100.0;
  SpeechInterval source;

  Eigen::Index num_frames() const { return data.rows(); }
  Eigen::Index dim() const { return data.cols(); }
};

struct MfccConfig {
  int n_coeffs = 40;
  int n_mels = 40;
  double frame_ms = 25.0;
  double hop_ms = 10.0;
  double preemphasis = 0.97;
  double log_floor = 1e-10;
};

/// In-place iterative radix-2 FFT; size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& data);

/// Frames are [t*hop, t*hop + frame) samples with no padding; a trailing
/// partial frame is dropped, so T = floor((N - frame) / hop) + 1.
Eigen::Index mfcc_frame_count(std::size_t n_samples, int sample_rate, const MfccConfig& cfg);

/// Pre-emphasis, Hann window, power spectrum, mel filterbank over 0..Nyquist,
/// floored log, orthonormal DCT-II; the first n_coeffs are kept.
FeatureSequence compute_mfcc(const Waveform& w, const MfccConfig& cfg = {},
                             const std::string& file_id = {});

/// Per-dimension mean and standard deviation of a sequence.
struct NormStats {
  Eigen::RowVectorXf mean;
  Eigen::RowVectorXf stddev;
};

NormStats compute_norm_stats(const FeatureSequence& f);
void apply_norm(FeatureSequence& f, const NormStats& stats);
inline void normalize_mean_variance(FeatureSequence& f) { apply_norm(f, compute_norm_stats(f)); }

// Binary interchange format, little-endian: "SSEF", u32 version, u32 dim,
// f32 frame_rate, u64 num_frames, then num_frames * dim f32 row-major.
void write_features(const FeatureSequence& f, const std::filesystem::path& path);
FeatureSequence read_features(const std::filesystem::path& path);

/// Rows [s, e); the source interval is narrowed to the matching time span.
FeatureSequence slice_frames(const FeatureSequence& f, Eigen::Index s, Eigen::Index e);

}  // namespace sse
