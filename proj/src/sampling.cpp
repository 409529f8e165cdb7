#include "sse/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "sse/error.hpp"

namespace sse {

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::stretch: return "stretch";
    case Provenance::mined: return "mined";
    case Provenance::topline: return "topline";
  }
  return "unknown";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "stretch") return Provenance::stretch;
  if (s == "mined") return Provenance::mined;
  if (s == "topline") return Provenance::topline;
  throw DataError("unknown pair provenance '" + s + "'");
}

void StretchConfig::validate() const {
  if (!(factor_min > 0) || factor_max < factor_min) throw UsageError("stretch config: need 0 < factor_min <= factor_max");
  if (!(min_len_s > 0) || max_len_s < min_len_s) throw UsageError("stretch config: need 0 < min_len_s <= max_len_s");
  if (!(grid_s > 0)) throw UsageError("stretch config: grid must be positive");
}

Eigen::Index grid_frames(double frame_rate, double grid_s) {
  return std::max<Eigen::Index>(1, std::lround(grid_s * frame_rate));
}

FeatureSequence time_stretch_features(const FeatureSequence& f, double factor) {
  if (!(factor > 0)) throw UsageError("time_stretch_features: factor must be positive");
  const Eigen::Index T = f.num_frames();
  const auto out_len = static_cast<Eigen::Index>(std::lround(static_cast<double>(T) * factor));
  if (out_len < 1) throw DataError("time_stretch_features: stretched sequence would be empty");
  FeatureSequence out;
  out.frame_rate = f.frame_rate;
  out.source = f.source;
  out.data.resize(out_len, f.dim());
  for (Eigen::Index t = 0; t < out_len; ++t) {
    const double pos = std::min(static_cast<double>(t) / factor, static_cast<double>(T - 1));
    const auto lo = static_cast<Eigen::Index>(std::floor(pos));
    const Eigen::Index hi = std::min(lo + 1, T - 1);
    const auto frac = static_cast<float>(pos - static_cast<double>(lo));
    out.data.row(t) = (1.0f - frac) * f.data.row(lo) + frac * f.data.row(hi);
  }
  return out;
}

std::pair<Eigen::Index, Eigen::Index> map_span(Eigen::Index s, Eigen::Index e, Eigen::Index d1, Eigen::Index d2) {
  if (d1 <= 0 || d2 <= 0 || s < 0 || e <= s || e > d1) throw UsageError("map_span: invalid span or lengths");
  const Eigen::Index lo = (s * d2) / d1;
  const Eigen::Index hi = (e * d2 + d1 - 1) / d1;
  return {lo, std::min(hi, d2)};
}

std::vector<std::pair<FrameSpan, FrameSpan>> sample_stretch_spans(Eigen::Index d1, Eigen::Index d2,
                                                                  double frame_rate,
                                                                  const StretchConfig& cfg,
                                                                  std::size_t count, Rng& rng) {
  cfg.validate();
  const Eigen::Index g = grid_frames(frame_rate, cfg.grid_s);
  const Eigen::Index min_len = std::max<Eigen::Index>(1, std::lround(cfg.min_len_s * frame_rate));
  const Eigen::Index max_len = std::max(min_len, static_cast<Eigen::Index>(std::lround(cfg.max_len_s * frame_rate)));
  // Span lengths are grid multiples k*g with min_len <= k*g <= max_len.
  const Eigen::Index k_min = (min_len + g - 1) / g;
  const Eigen::Index k_max = max_len / g;
  std::vector<std::pair<FrameSpan, FrameSpan>> out;
  if (k_max < k_min || d1 < k_min * g || d2 < 1) return out;

  std::vector<Eigen::Index> starts;
  for (Eigen::Index s = 0; s + k_min * g <= d1; s += g) starts.push_back(s);
  rng.shuffle(starts);
  if (starts.size() > count) starts.resize(count);
  std::sort(starts.begin(), starts.end());

  for (Eigen::Index s : starts) {
    const Eigen::Index k_hi = std::min(k_max, (d1 - s) / g);
    const Eigen::Index k = rng.uniform_int(k_min, k_hi);
    const Eigen::Index e = s + k * g;
    const auto [s2, e2] = map_span(s, e, d1, d2);
    out.push_back({FrameSpan{"", s, e}, FrameSpan{"", s2, e2}});
  }
  return out;
}

StretchSample sample_stretch_pairs(const StretchVariantBuilder& build, const std::string& ref_prefix,
                                   const StretchConfig& cfg, std::size_t count, Rng& rng) {
  cfg.validate();
  StretchSample out;
  out.factor_first = cfg.pin_first_factor ? 1.0 : rng.uniform(cfg.factor_min, cfg.factor_max);
  out.factor_second = rng.uniform(cfg.factor_min, cfg.factor_max);
  out.first = build(out.factor_first);
  out.second = build(out.factor_second);
  const auto spans = sample_stretch_spans(out.first.num_frames(), out.second.num_frames(), out.first.frame_rate,
                                          cfg, count, rng);
  for (const auto& [a, b] : spans) {
    PositivePair p;
    p.a = {ref_prefix + "/v1", a.s, a.e};
    p.b = {ref_prefix + "/v2", b.s, b.e};
    p.provenance = Provenance::stretch;
    out.pairs.push_back(std::move(p));
  }
  return out;
}

std::vector<SpeechInterval> enumerate_candidates(const std::vector<VASegment>& segments, double frame_rate,
                                                 const StretchConfig& cfg) {
  cfg.validate();
  const Eigen::Index g = grid_frames(frame_rate, cfg.grid_s);
  const double step = static_cast<double>(g) / frame_rate;
  const auto k_max = std::max<Eigen::Index>(1, std::lround(cfg.max_len_s * frame_rate) / g);
  const auto k_min = std::clamp<Eigen::Index>((std::lround(cfg.min_len_s * frame_rate) + g - 1) / g, 1, k_max);
  std::vector<SpeechInterval> out;
  for (const auto& seg : segments) {
    const auto units = static_cast<Eigen::Index>(std::floor((seg.end_s - seg.start_s) / step + 1e-9));
    for (Eigen::Index i = 0; i < units; ++i) {
      const double start = seg.start_s + static_cast<double>(i) * step;
      for (Eigen::Index k = k_min; k <= std::min(k_max, units - i); ++k)
        out.push_back({seg.file_id, start, seg.start_s + static_cast<double>(i + k) * step});
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<NgramToken> enumerate_ngrams(const PhonemeAlignment& alignment, double max_dur) {
  std::vector<NgramToken> out;
  for (const auto& [id, phones] : alignment.files) {
    for (std::size_t i = 0; i < phones.size(); ++i) {
      if (phones[i].silence) continue;
      NgramToken tok;
      tok.interval = {id, phones[i].start_s, phones[i].end_s};
      for (std::size_t j = i; j < phones.size(); ++j) {
        if (phones[j].silence) break;
        // Runs must be contiguous in time.
        if (j > i && phones[j].start_s != phones[j - 1].end_s) break;
        if (phones[j].end_s - phones[i].start_s > max_dur + 1e-12) break;
        tok.interval.end_s = phones[j].end_s;
        tok.transcription.push_back(phones[j].label);
        out.push_back(tok);
      }
    }
  }
  return out;
}

namespace {

std::vector<NgramToken> drop_unique(std::vector<NgramToken> tokens) {
  std::map<std::vector<std::string>, std::size_t> counts;
  for (const auto& t : tokens) ++counts[t.transcription];
  std::erase_if(tokens, [&](const NgramToken& t) { return counts[t.transcription] < 2; });
  return tokens;
}

bool token_less(const NgramToken& a, const NgramToken& b) { return a.interval < b.interval; }

}  // namespace

std::vector<NgramToken> sample_eval_ngrams(const PhonemeAlignment& alignment, double max_dur, Rng& rng,
                                           std::size_t max_count) {
  auto all = enumerate_ngrams(alignment, max_dur);
  if (all.size() > max_count) {
    rng.shuffle(all);
    all.resize(max_count);
  }
  std::sort(all.begin(), all.end(), token_less);
  return drop_unique(std::move(all));
}

std::vector<PairRecord> sample_topline_pairs(const PhonemeAlignment& alignment, Rng& rng, std::size_t count,
                                             double max_dur) {
  auto tokens = drop_unique(enumerate_ngrams(alignment, max_dur));
  if (tokens.empty()) throw DataError("topline: no transcription occurs more than once");
  std::map<std::vector<std::string>, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < tokens.size(); ++i) classes[tokens[i].transcription].push_back(i);

  std::vector<PairRecord> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(tokens.size()) - 1));
    const auto& members = classes[tokens[i].transcription];
    std::size_t j;
    do {
      j = members[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(members.size()) - 1))];
    } while (j == i);
    out.push_back({tokens[i].interval, tokens[j].interval, Provenance::topline, std::nullopt});
  }
  return out;
}

std::pair<Eigen::Index, Eigen::Index> interval_frames(const SpeechInterval& interval, double frame_rate,
                                                      Eigen::Index n_frames, Eigen::Index min_frames) {
  // Feature framing drops up to a frame and a half at the end of a file.
  constexpr Eigen::Index kEndSlack = 3;
  Eigen::Index s = std::lround(interval.start_s * frame_rate);
  Eigen::Index e = std::lround(interval.end_s * frame_rate);
  if (interval.start_s < 0 || interval.end_s <= interval.start_s || s >= n_frames || e > n_frames + kEndSlack)
    throw DataError("interval " + interval.file_id + " [" + std::to_string(interval.start_s) + ", " +
                    std::to_string(interval.end_s) + "] outside feature range of " + std::to_string(n_frames) +
                    " frames");
  if (n_frames < min_frames)
    throw DataError("sequence '" + interval.file_id + "' shorter than " + std::to_string(min_frames) + " frames");
  e = std::min(e, n_frames);
  if (e <= s) e = s + 1;
  if (e - s < min_frames) {
    const Eigen::Index need = min_frames - (e - s);
    s -= need / 2;
    e += need - need / 2;
    if (s < 0) {
      e -= s;
      s = 0;
    }
    if (e > n_frames) {
      s -= e - n_frames;
      e = n_frames;
    }
  }
  return {s, e};
}

std::string join_transcription(const std::vector<std::string>& phones) {
  std::string out;
  for (std::size_t i = 0; i < phones.size(); ++i) {
    if (i) out += '+';
    out += phones[i];
  }
  return out;
}

}  // namespace sse
