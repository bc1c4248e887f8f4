#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pgt/array.hpp"

namespace pgt {

/// How the class label depends on the (early, late) marker ids.
///   late:   class = late                       (K classes)
///   pair:   class = early * K + late           (K * K classes)
///   modsum: class = (early + late) mod K       (K classes)
enum class TaskRule { late, pair, modsum };

std::string rule_name(TaskRule rule);
TaskRule parse_rule(const std::string& text);

/// Long-range toy task: a marker id is shown in an early and a late frame
/// window (one-hot channel pattern plus Gaussian noise everywhere).
struct SyntheticTaskSpec {
  std::size_t frames = 36;
  std::size_t channels = 8;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t markers = 3;
  TaskRule rule = TaskRule::pair;
  double noise = 0.1;
  std::size_t window = 4;
  std::size_t early_start = 9;
  std::size_t late_start = 23;
  /// Clip length of the baseline; no clip of this length may touch both windows.
  std::size_t clip_length = 8;
  std::size_t train_size = 512;
  std::size_t val_size = 256;

  std::size_t num_classes() const;
  Shape sequence_shape() const;
  /// Throws SpecError on overlapping or insufficiently separated windows.
  void validate() const;
};

template <typename T>
struct Dataset {
  std::vector<Array<T>> sequences;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
};

template <typename T>
struct SyntheticData {
  Dataset<T> train;
  Dataset<T> val;
};

/// Deterministic per seed; labels balanced (counts differ by at most one).
template <typename T>
SyntheticData<T> gen_synthetic_dataset(const SyntheticTaskSpec& spec, std::uint64_t seed);

/// Binary container: "PGTD", version, shape, count, then per sample the
/// label (u32) and float64 frames, little-endian.
template <typename T>
void write_dataset(const std::string& path, const Dataset<T>& data);
template <typename T>
Dataset<T> read_dataset(const std::string& path);

}  // namespace pgt
