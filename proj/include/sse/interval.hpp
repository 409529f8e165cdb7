#pragma once

#include <compare>
#include <string>

namespace sse {

/// A (file, start, end) locator in seconds.
struct SpeechInterval {
  std::string file_id;
  double start_s = 0.0;
  double end_s = 0.0;

  double duration() const { return end_s - start_s; }

  auto operator<=>(const SpeechInterval&) const = default;
  bool operator==(const SpeechInterval&) const = default;
};

}  // namespace sse
