#include "sse/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sse/error.hpp"
#include "text_util.hpp"

namespace sse {

using nlohmann::json;

std::set<std::string> default_silence_labels() { return {"SIL", "sil", "sp", ""}; }

const std::vector<Phone>& PhonemeAlignment::phones(const std::string& file_id) const {
  auto it = files.find(file_id);
  if (it == files.end()) throw DataError("no alignment for file '" + file_id + "'");
  return it->second;
}

const ManifestEntry& CorpusManifest::entry(const std::string& id) const {
  for (const auto& e : files)
    if (e.id == id) return e;
  throw DataError("file '" + id + "' not in manifest");
}

CorpusManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path q(p);
    return q.is_absolute() ? q : base / q;
  };

  CorpusManifest m;
  try {
    m.sample_rate = doc.at("sample_rate").get<int>();
    if (m.sample_rate <= 0) throw DataError("manifest sample_rate must be positive");
    std::set<std::string> seen;
    for (const auto& f : doc.at("files")) {
      ManifestEntry e;
      e.id = f.at("id").get<std::string>();
      if (!seen.insert(e.id).second) throw DataError("duplicate file id '" + e.id + "' in manifest");
      e.audio = resolve(f.at("audio").get<std::string>());
      if (f.contains("alignment") && !f["alignment"].is_null())
        e.alignment = resolve(f["alignment"].get<std::string>());
      if (f.contains("vad") && !f["vad"].is_null()) e.vad = resolve(f["vad"].get<std::string>());
      if (!fs::exists(e.audio)) throw DataError("file '" + e.id + "': missing audio " + e.audio.string());
      if (e.alignment && !fs::exists(*e.alignment))
        throw DataError("file '" + e.id + "': missing alignment " + e.alignment->string());
      if (e.vad && !fs::exists(*e.vad))
        throw DataError("file '" + e.id + "': missing vad " + e.vad->string());
      m.files.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
  return m;
}

void write_manifest(const CorpusManifest& manifest, const fs::path& path) {
  const fs::path base = path.parent_path();
  auto rel = [&](const fs::path& p) { return p.lexically_proximate(base).generic_string(); };
  json doc;
  doc["sample_rate"] = manifest.sample_rate;
  doc["files"] = json::array();
  for (const auto& e : manifest.files) {
    json f;
    f["id"] = e.id;
    f["audio"] = rel(e.audio);
    if (e.alignment) f["alignment"] = rel(*e.alignment);
    if (e.vad) f["vad"] = rel(*e.vad);
    doc["files"].push_back(std::move(f));
  }
  auto out = text::open_out(path.string());
  out << doc.dump(2) << "\n";
}

Waveform read_audio(const ManifestEntry& entry) {
  try {
    return read_wav(entry.audio);
  } catch (const DataError& e) {
    throw DataError("file '" + entry.id + "': " + e.what());
  }
}

std::vector<VASegment> energy_vad(const Waveform& w, const std::string& file_id,
                                  const VadConfig& cfg) {
  if (w.samples.empty()) throw DataError("energy_vad: empty waveform");
  if (!(cfg.hop_ms > 0) || cfg.frame_ms < cfg.hop_ms)
    throw UsageError("energy_vad: requires frame_ms >= hop_ms > 0");
  if (cfg.energy_quantile < 0 || cfg.energy_quantile > 1)
    throw UsageError("energy_vad: quantile must be in [0,1]");

  const double sr = w.sample_rate;
  const auto frame = std::max<std::size_t>(1, std::lround(cfg.frame_ms * sr / 1000.0));
  const auto hop = std::max<std::size_t>(1, std::lround(cfg.hop_ms * sr / 1000.0));
  const std::size_t n = w.samples.size();
  const std::size_t n_frames = n >= frame ? (n - frame) / hop + 1 : 1;
  const std::size_t len = std::min(frame, n);

  std::vector<double> log_energy(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      const double x = w.samples[i * hop + k];
      acc += x * x;
    }
    log_energy[i] = std::log(acc / static_cast<double>(len) + 1e-30);
  }

  std::vector<double> sorted = log_energy;
  std::sort(sorted.begin(), sorted.end());
  const auto qi = static_cast<std::size_t>(std::floor(cfg.energy_quantile * (n_frames - 1)));
  const double threshold = sorted[qi];

  // Runs of speech frames as [first, last] frame indices.
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t i = 0; i < n_frames; ++i) {
    if (log_energy[i] <= threshold) continue;
    if (!runs.empty() && runs.back().second + 1 == i)
      runs.back().second = i;
    else
      runs.emplace_back(i, i);
  }

  const double hop_s = static_cast<double>(hop) / sr;
  std::vector<std::pair<std::size_t, std::size_t>> closed;
  for (const auto& r : runs) {
    if (!closed.empty()) {
      const std::size_t gap_frames = r.first - closed.back().second - 1;
      if (gap_frames * hop_s * 1000.0 < cfg.min_gap_ms) {
        closed.back().second = r.second;
        continue;
      }
    }
    closed.push_back(r);
  }

  const double frame_s = static_cast<double>(len) / sr;
  const double dur = w.duration();
  std::vector<VASegment> out;
  for (const auto& [first, last] : closed) {
    const std::size_t count = last - first + 1;
    if (count * hop_s * 1000.0 < cfg.min_speech_ms) continue;
    double start = first * hop_s + frame_s / 2;
    double end = last * hop_s + frame_s / 2;
    if (end <= start) end = start + hop_s;
    start = std::clamp(start, 0.0, dur);
    end = std::clamp(end, 0.0, dur);
    if (end > start) out.push_back({file_id, start, end});
  }
  return out;
}

namespace {

void validate_phones(const std::string& file_id, std::vector<Phone>& phones,
                     const std::vector<std::size_t>& line_numbers, const fs::path& path) {
  for (std::size_t i = 0; i < phones.size(); ++i) {
    if (!(phones[i].end_s > phones[i].start_s) || phones[i].start_s < 0)
      throw DataError(path.string() + ":" + std::to_string(line_numbers[i]) +
                      ": phone must satisfy 0 <= start < end");
    if (i == 0) continue;
    if (phones[i].start_s < phones[i - 1].start_s)
      throw DataError(path.string() + ":" + std::to_string(line_numbers[i]) +
                      ": rows of file '" + file_id + "' not sorted by start time");
    if (phones[i].start_s < phones[i - 1].end_s)
      throw DataError(path.string() + ":" + std::to_string(line_numbers[i]) +
                      ": phone overlaps previous phone of file '" + file_id + "'");
  }
}

}  // namespace

PhonemeAlignment load_alignment(const fs::path& path, const std::set<std::string>& silence_labels) {
  auto in = text::open_in(path.string());
  PhonemeAlignment a;
  std::map<std::string, std::vector<std::size_t>> lines;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = text::strip_cr(line);
    if (line.empty()) continue;
    auto cols = text::split(line, '\t');
    if (cols.size() != 4)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 4 tab-separated columns");
    Phone p;
    if (!text::parse_double(cols[1], p.start_s) || !text::parse_double(cols[2], p.end_s))
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad time value");
    p.label = std::string(cols[3]);
    p.silence = silence_labels.count(p.label) > 0;
    const std::string id(cols[0]);
    a.files[id].push_back(std::move(p));
    lines[id].push_back(lineno);
  }
  for (auto& [id, phones] : a.files) validate_phones(id, phones, lines[id], path);
  return a;
}

void write_alignment(const PhonemeAlignment& alignment, const fs::path& path) {
  auto out = text::open_out(path.string());
  for (const auto& [id, phones] : alignment.files)
    for (const auto& p : phones)
      out << id << '\t' << text::format_double(p.start_s) << '\t' << text::format_double(p.end_s)
          << '\t' << p.label << '\n';
}

PhonemeAlignment load_corpus_alignment(const CorpusManifest& manifest,
                                       const std::set<std::string>& silence_labels) {
  PhonemeAlignment merged;
  for (const auto& e : manifest.files) {
    if (!e.alignment) continue;
    auto a = load_alignment(*e.alignment, silence_labels);
    for (auto& [id, phones] : a.files) {
      if (merged.files.count(id)) throw DataError("alignment for '" + id + "' given twice");
      merged.files[id] = std::move(phones);
    }
  }
  return merged;
}

std::vector<VASegment> load_vad(const fs::path& path) {
  auto in = text::open_in(path.string());
  std::vector<VASegment> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = text::strip_cr(line);
    if (line.empty()) continue;
    auto cols = text::split(line, '\t');
    VASegment s;
    if (cols.size() != 3 || !text::parse_double(cols[1], s.start_s) ||
        !text::parse_double(cols[2], s.end_s))
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected file_id, start, end");
    s.file_id = std::string(cols[0]);
    if (!(s.start_s >= 0 && s.end_s > s.start_s))
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": segment must satisfy 0 <= start < end");
    if (!out.empty() && out.back().file_id == s.file_id && s.start_s < out.back().end_s)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": segments unsorted or overlapping");
    out.push_back(std::move(s));
  }
  return out;
}

void write_vad(const std::vector<VASegment>& segments, const fs::path& path) {
  auto out = text::open_out(path.string());
  for (const auto& s : segments)
    out << s.file_id << '\t' << text::format_double(s.start_s) << '\t'
        << text::format_double(s.end_s) << '\n';
}

}  // namespace sse
