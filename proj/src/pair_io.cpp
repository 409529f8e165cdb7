#include <fstream>

#include "sse/error.hpp"
#include "sse/sampling.hpp"
#include "text_util.hpp"

namespace sse {

namespace {

constexpr const char* kPairHeader = "file_a,start_a,end_a,file_b,start_b,end_b,provenance,distance";
constexpr const char* kNgramHeader = "file,start,end,transcription";

double parse_field(std::string_view s, const std::filesystem::path& path, std::size_t lineno) {
  double v;
  if (!text::parse_double(s, v))
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + std::string(s) + "'");
  return v;
}

}  // namespace

void write_pairs_csv(const std::vector<PairRecord>& pairs, const std::filesystem::path& path) {
  auto out = text::open_out(path.string());
  out << kPairHeader << '\n';
  for (const auto& p : pairs) {
    out << p.a.file_id << ',' << text::format_fixed(p.a.start_s, 6) << ',' << text::format_fixed(p.a.end_s, 6) << ','
        << p.b.file_id << ',' << text::format_fixed(p.b.start_s, 6) << ',' << text::format_fixed(p.b.end_s, 6) << ','
        << to_string(p.provenance) << ',';
    if (p.distance) out << text::format_double(*p.distance);
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<PairRecord> read_pairs_csv(const std::filesystem::path& path) {
  auto in = text::open_in(path.string());
  std::vector<PairRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = text::strip_cr(line);
    if (line.empty() || (lineno == 1 && line.rfind("file_a,", 0) == 0)) continue;
    auto cols = text::split(line, ',');
    if (cols.size() != 7 && cols.size() != 8)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 7 or 8 columns");
    PairRecord p;
    p.a = {std::string(cols[0]), parse_field(cols[1], path, lineno), parse_field(cols[2], path, lineno)};
    p.b = {std::string(cols[3]), parse_field(cols[4], path, lineno), parse_field(cols[5], path, lineno)};
    p.provenance = provenance_from_string(std::string(cols[6]));
    if (cols.size() == 8 && !cols[7].empty()) p.distance = parse_field(cols[7], path, lineno);
    out.push_back(std::move(p));
  }
  return out;
}

void write_ngrams_csv(const std::vector<NgramToken>& ngrams, const std::filesystem::path& path) {
  auto out = text::open_out(path.string());
  out << kNgramHeader << '\n';
  for (const auto& t : ngrams)
    out << t.interval.file_id << ',' << text::format_fixed(t.interval.start_s, 6) << ','
        << text::format_fixed(t.interval.end_s, 6) << ',' << join_transcription(t.transcription) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<NgramToken> read_ngrams_csv(const std::filesystem::path& path) {
  auto in = text::open_in(path.string());
  std::vector<NgramToken> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = text::strip_cr(line);
    if (line.empty() || (lineno == 1 && line == kNgramHeader)) continue;
    auto cols = text::split(line, ',');
    if (cols.size() != 4) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 4 columns");
    NgramToken t;
    t.interval = {std::string(cols[0]), parse_field(cols[1], path, lineno), parse_field(cols[2], path, lineno)};
    for (auto ph : text::split(cols[3], '+')) t.transcription.emplace_back(ph);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace sse
