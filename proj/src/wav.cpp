#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sse/corpus.hpp"
#include "sse/error.hpp"
#include "text_util.hpp"

namespace sse {

namespace {

std::uint32_t le32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

void put32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}
void put16(std::ofstream& out, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

}  // namespace

Waveform read_wav(const fs::path& path) {
  auto in = text::open_in(path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw DataError(where + "not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t size = le32(hdr + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size()) throw DataError(where + "truncated fmt chunk");
      format = le16(bytes.data() + body);
      channels = le16(bytes.data() + body + 2);
      rate = le32(bytes.data() + body + 4);
      bits = le16(bytes.data() + body + 14);
      if (format == kFormatExtensible) {
        if (size < 26) throw DataError(where + "truncated extensible fmt chunk");
        format = le16(bytes.data() + body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      if (!have_fmt) throw DataError(where + "data chunk before fmt chunk");
      if (channels == 0 || rate == 0) throw DataError(where + "invalid channel count or sample rate");
      if (body + size > bytes.size()) throw DataError(where + "truncated data chunk");
      const std::size_t width = bits / 8;
      if (!((format == kFormatPcm && bits == 16) || (format == kFormatFloat && bits == 32)))
        throw DataError(where + "unsupported encoding (format " + std::to_string(format) + ", " +
                        std::to_string(bits) + " bits); need 16-bit PCM or 32-bit float");
      const std::size_t frame_bytes = width * channels;
      const std::size_t n = size / frame_bytes;
      if (n == 0) throw DataError(where + "no samples");
      Waveform w;
      w.sample_rate = static_cast<int>(rate);
      w.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* s = bytes.data() + body + i * frame_bytes;
        if (format == kFormatPcm) {
          w.samples[i] = static_cast<float>(static_cast<std::int16_t>(le16(s))) / 32768.0f;
        } else {
          const std::uint32_t u = le32(s);
          float f;
          std::memcpy(&f, &u, 4);
          if (!std::isfinite(f)) throw DataError(where + "non-finite sample");
          w.samples[i] = std::clamp(f, -1.0f, 1.0f);
        }
      }
      return w;
    }
    pos = body + size + (size & 1);
  }
  throw DataError(where + "no data chunk");
}

void write_wav(const Waveform& w, const fs::path& path) {
  if (w.sample_rate <= 0) throw UsageError("write_wav: sample rate must be positive");
  auto out = text::open_out(path.string());
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  out.write("RIFF", 4);
  put32(out, 36 + 2 * n);
  out.write("WAVEfmt ", 8);
  put32(out, 16);
  put16(out, kFormatPcm);
  put16(out, 1);
  put32(out, static_cast<std::uint32_t>(w.sample_rate));
  put32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put16(out, 2);
  put16(out, 16);
  out.write("data", 4);
  put32(out, 2 * n);
  for (float x : w.samples) {
    const float c = std::clamp(x, -1.0f, 1.0f);
    const long v = std::lround(c * 32767.0f);
    put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
  }
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace sse
