#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "sse/error.hpp"
#include "sse/sampling.hpp"

namespace sse {

namespace {

// 20 ms windows with 50% overlap; offsets searched within +-5 ms.
constexpr double kWindowS = 0.020;
constexpr double kToleranceS = 0.005;

}  // namespace

Waveform time_stretch_waveform(const Waveform& w, double factor) {
  if (!(factor >= 0.1 && factor <= 10.0)) throw UsageError("time_stretch_waveform: factor must be in [0.1, 10]");
  if (w.sample_rate <= 0) throw UsageError("time_stretch_waveform: invalid sample rate");
  const auto win = static_cast<std::ptrdiff_t>(std::max<long>(4, 2 * std::lround(kWindowS * w.sample_rate / 2)));
  const std::ptrdiff_t n_in = static_cast<std::ptrdiff_t>(w.samples.size());
  if (n_in < win) throw DataError("time_stretch_waveform: waveform shorter than one window");

  const std::ptrdiff_t syn_hop = win / 2;
  const double ana_hop = static_cast<double>(syn_hop) / factor;
  const auto tol = static_cast<std::ptrdiff_t>(std::lround(kToleranceS * w.sample_rate));
  const auto n_out = static_cast<std::ptrdiff_t>(std::lround(static_cast<double>(n_in) * factor));

  // Periodic Hann sums to one at 50% overlap.
  std::vector<double> window(static_cast<std::size_t>(win));
  for (std::ptrdiff_t i = 0; i < win; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(win));

  auto sample = [&](std::ptrdiff_t i) -> double { return i >= 0 && i < n_in ? w.samples[i] : 0.0; };

  std::vector<double> acc(static_cast<std::size_t>(n_out + win), 0.0);
  std::vector<double> norm(acc.size(), 0.0);
  std::ptrdiff_t prev = 0;
  const std::ptrdiff_t max_pos = n_in - win;
  for (std::ptrdiff_t k = 0; k * syn_hop < n_out; ++k) {
    std::ptrdiff_t pos = 0;
    if (k > 0) {
      const auto nominal = static_cast<std::ptrdiff_t>(std::lround(static_cast<double>(k) * ana_hop));
      // Continuation of the previously copied window, i.e. what would follow
      // in the input had no stretching taken place.
      const std::ptrdiff_t natural = prev + syn_hop;
      const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(nominal - tol, 0, max_pos);
      const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(nominal + tol, 0, max_pos);
      double best = -std::numeric_limits<double>::infinity();
      pos = lo;
      for (std::ptrdiff_t cand = lo; cand <= hi; ++cand) {
        double c = 0.0;
        for (std::ptrdiff_t i = 0; i < syn_hop; ++i) c += sample(natural + i) * sample(cand + i);
        if (c > best) {
          best = c;
          pos = cand;
        }
      }
    }
    const std::ptrdiff_t out_off = k * syn_hop;
    for (std::ptrdiff_t i = 0; i < win; ++i) {
      acc[out_off + i] += window[i] * sample(pos + i);
      norm[out_off + i] += window[i];
    }
    prev = pos;
  }

  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.resize(static_cast<std::size_t>(n_out));
  for (std::ptrdiff_t i = 0; i < n_out; ++i)
    out.samples[i] = static_cast<float>(norm[i] > 1e-3 ? acc[i] / norm[i] : acc[i]);
  return out;
}

}  // namespace sse
