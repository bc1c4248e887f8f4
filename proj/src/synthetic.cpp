#include "pgt/synthetic.hpp"

#include <algorithm>
#include <fstream>

#include "pgt/binary_io.hpp"
#include "pgt/rng.hpp"

namespace pgt {

std::string rule_name(TaskRule rule) {
  switch (rule) {
    case TaskRule::late:
      return "late";
    case TaskRule::pair:
      return "pair";
    case TaskRule::modsum:
      return "modsum";
  }
  return "pair";
}

TaskRule parse_rule(const std::string& text) {
  if (text == "late") return TaskRule::late;
  if (text == "pair") return TaskRule::pair;
  if (text == "modsum") return TaskRule::modsum;
  throw ConfigError("task.rule", "expected late, pair or modsum, got '" + text + "'");
}

std::size_t SyntheticTaskSpec::num_classes() const {
  return rule == TaskRule::pair ? markers * markers : markers;
}

Shape SyntheticTaskSpec::sequence_shape() const {
  if (height * width == 1) return Shape{frames, channels};
  return Shape{frames, channels, height, width};
}

void SyntheticTaskSpec::validate() const {
  if (markers < 2) throw SpecError("need at least two marker ids");
  if (channels < markers) throw SpecError("need at least as many channels as marker ids");
  if (window == 0) throw SpecError("marker window must be non-empty");
  if (noise < 0.0) throw SpecError("noise level must be non-negative");
  if (height == 0 || width == 0) throw SpecError("spatial extents must be positive");
  if (early_start + window > frames || late_start + window > frames) {
    throw SpecError("marker windows must lie inside the sequence");
  }
  if (late_start < early_start + window) throw SpecError("early and late marker windows overlap or are misordered");
  const std::size_t early_last = early_start + window - 1;
  if (late_start - early_last < clip_length) {
    throw SpecError("marker windows are closer than the clip length " + std::to_string(clip_length) +
                    "; a single clip could see both");
  }
  if (train_size == 0 || val_size == 0) throw SpecError("dataset sizes must be positive");
}

namespace {

template <typename T>
Dataset<T> make_split(const SyntheticTaskSpec& spec, std::size_t count, Rng& rng) {
  const std::size_t classes = spec.num_classes();
  const std::size_t k = spec.markers;
  std::vector<std::size_t> labels(count);
  for (std::size_t i = 0; i < count; ++i) labels[i] = i % classes;
  std::shuffle(labels.begin(), labels.end(), rng);

  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> marker(0, k - 1);
  const std::size_t spatial = spec.height * spec.width;
  const std::size_t frame = spec.channels * spatial;

  Dataset<T> out;
  for (std::size_t label : labels) {
    std::size_t early = 0, late = 0;
    switch (spec.rule) {
      case TaskRule::pair:
        early = label / k;
        late = label % k;
        break;
      case TaskRule::late:
        early = marker(rng);
        late = label;
        break;
      case TaskRule::modsum:
        early = marker(rng);
        late = (label + k - early) % k;
        break;
    }
    std::vector<double> data(spec.frames * frame);
    for (double& v : data) v = spec.noise * noise(rng);
    auto stamp = [&](std::size_t start, std::size_t id) {
      for (std::size_t t = start; t < start + spec.window; ++t)
        for (std::size_t s = 0; s < spatial; ++s) data[t * frame + id * spatial + s] += 1.0;
    };
    stamp(spec.early_start, early);
    stamp(spec.late_start, late);
    out.sequences.push_back(Array<T>(spec.sequence_shape(), std::vector<T>(data.begin(), data.end())));
    out.labels.push_back(label);
  }
  return out;
}

constexpr char kMagic[4] = {'P', 'G', 'T', 'D'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

template <typename T>
SyntheticData<T> gen_synthetic_dataset(const SyntheticTaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng train_rng = make_rng(seed, 0);
  Rng val_rng = make_rng(seed, 1);
  return {make_split<T>(spec, spec.train_size, train_rng), make_split<T>(spec, spec.val_size, val_rng)};
}

template <typename T>
void write_dataset(const std::string& path, const Dataset<T>& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os.write(kMagic, 4);
  io::put<std::uint32_t>(os, kVersion);
  const Shape shape = data.size() ? data.sequences[0].shape() : Shape{};
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) io::put<std::uint64_t>(os, d);
  io::put<std::uint64_t>(os, data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(data.labels[i]));
    for (T v : data.sequences[i].values()) io::put<double>(os, static_cast<double>(v));
  }
  if (!os) throw FormatError("failed writing " + path);
}

template <typename T>
Dataset<T> read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) throw FormatError(path + " is not a dataset file");
  if (io::get<std::uint32_t>(is) != kVersion) throw FormatError("unsupported dataset version in " + path);
  Shape shape(io::get<std::uint32_t>(is));
  for (auto& d : shape) d = io::get<std::uint64_t>(is);
  const auto count = io::get<std::uint64_t>(is);
  Dataset<T> out;
  const std::size_t n = shape_elements(shape);
  for (std::uint64_t i = 0; i < count; ++i) {
    out.labels.push_back(io::get<std::uint32_t>(is));
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(io::get<double>(is));
    out.sequences.emplace_back(shape, std::move(v));
  }
  return out;
}

template SyntheticData<float> gen_synthetic_dataset(const SyntheticTaskSpec&, std::uint64_t);
template SyntheticData<double> gen_synthetic_dataset(const SyntheticTaskSpec&, std::uint64_t);
template void write_dataset(const std::string&, const Dataset<float>&);
template void write_dataset(const std::string&, const Dataset<double>&);
template Dataset<float> read_dataset(const std::string&);
template Dataset<double> read_dataset(const std::string&);

}  // namespace pgt
