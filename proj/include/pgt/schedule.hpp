#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pgt/array.hpp"
#include "pgt/rng.hpp"

namespace pgt {

/// Half-open frame interval [begin, end).
struct FrameRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - begin; }
  bool operator==(const FrameRange&) const = default;
};

/// (T', P) plan: P ranges of T' frames, adjacent ranges sharing one frame.
struct ProgressiveSchedule {
  static constexpr std::size_t overlap = 1;

  std::size_t step_length = 0;
  std::size_t steps = 0;
  std::vector<FrameRange> ranges;

  std::size_t total_frames() const { return ranges.empty() ? 0 : ranges.back().end; }
};

/// T = (T' - 1) * P + 1.
std::size_t progressive_total(std::size_t step_length, std::size_t steps);

/// Schedule covering exactly `total` frames; throws ScheduleError (naming
/// the expected total) unless total == (T' - 1) * P + 1.
ProgressiveSchedule make_schedule(std::size_t total, std::size_t step_length, std::size_t steps);

enum class DprMode { off, a, b };

std::string dpr_name(DprMode mode);
DprMode parse_dpr(const std::string& text);

/// Dynamic progressive regularization: T' jitters around base_length,
/// P follows from base_total.
struct DprConfig {
  DprMode mode = DprMode::off;
  std::size_t base_length = 8;
  std::size_t base_total = 36;

  /// Candidate step lengths: A = {0.75, 1, 1.25} x T'_b, B = {0.5, 0.75, 1} x T'_b,
  /// rounded to nearest (ties up). Throws ConfigError if any is below 2.
  std::vector<std::size_t> choices() const;
};

struct DprDraw {
  std::size_t step_length = 0;
  std::size_t steps = 0;
  ProgressiveSchedule schedule;
};

/// Deterministic part of a draw: P = round[(T_b - 1) / (T' - 1)].
DprDraw dpr_plan(const DprConfig& config, std::size_t step_length);

/// Uniform draw of T' from the mode's choice set.
DprDraw dpr_sample(const DprConfig& config, Rng& rng);

/// Crops (uniformly random start) or cyclically extends a sequence to
/// exactly `total` frames.
template <typename T>
Array<T> fit_sequence(const Array<T>& sequence, std::size_t total, Rng& rng) {
  const std::size_t n = sequence.frames();
  if (n == 0) throw ScheduleError("cannot fit an empty sequence");
  if (n == total) return sequence;
  if (n > total) {
    std::uniform_int_distribution<std::size_t> start(0, n - total);
    const std::size_t s = start(rng);
    return sequence.slice_frames(s, s + total);
  }
  Shape shape = sequence.shape();
  shape[0] = total;
  Array<T> out(shape);
  const std::size_t fs = sequence.frame_size();
  for (std::size_t t = 0; t < total; ++t) {
    auto src = sequence.frame(t % n);
    std::copy(src.begin(), src.end(), out.data() + t * fs);
  }
  return out;
}

}  // namespace pgt
