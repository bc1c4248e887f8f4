#include "pgt/checkpoint.hpp"

#include <fstream>
#include <vector>

#include "pgt/binary_io.hpp"

namespace pgt {

namespace {

constexpr char kMagic[4] = {'P', 'G', 'T', 'C'};
constexpr std::uint32_t kVersion = 1;
const std::string kMomentumPrefix = "momentum/";

CheckpointHeader read_header(std::istream& is, const std::string& path) {
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) throw FormatError(path + " is not a checkpoint");
  CheckpointHeader h;
  h.version = io::get<std::uint32_t>(is);
  if (h.version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(h.version));
  const auto dtype = io::get<std::uint32_t>(is);
  if (dtype > 1) throw FormatError("unknown dtype tag in " + path);
  h.dtype = dtype == 0 ? DType::f32 : DType::f64;
  h.digest = io::get<std::uint64_t>(is);
  h.epochs_completed = io::get<std::uint64_t>(is);
  h.optimizer_steps = io::get<std::uint64_t>(is);
  h.blobs = io::get<std::uint32_t>(is);
  return h;
}

template <typename T>
void write_blob(std::ostream& os, const std::string& name, const Array<T>& a) {
  io::put_string(os, name);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.rank()));
  for (auto d : a.shape()) io::put<std::uint64_t>(os, d);
  for (T v : a.values()) io::put<T>(os, v);
}

template <typename T>
std::pair<std::string, Array<T>> read_blob(std::istream& is) {
  std::string name = io::get_string(is);
  Shape shape(io::get<std::uint32_t>(is));
  for (auto& d : shape) d = io::get<std::uint64_t>(is);
  std::vector<T> data(shape_elements(shape));
  for (auto& v : data) v = io::get<T>(is);
  return {std::move(name), Array<T>(std::move(shape), std::move(data))};
}

}  // namespace

CheckpointHeader read_checkpoint_header(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path);
  return read_header(is, path);
}

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model, const SgdOptimizer<T>* optimizer,
                     std::uint64_t epochs_completed) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write checkpoint " + path);
  const auto& params = model.parameters();
  os.write(kMagic, 4);
  io::put<std::uint32_t>(os, kVersion);
  io::put<std::uint32_t>(os, dtype_of<T>() == DType::f32 ? 0u : 1u);
  io::put<std::uint64_t>(os, model.spec().digest());
  io::put<std::uint64_t>(os, epochs_completed);
  io::put<std::uint64_t>(os, optimizer ? optimizer->steps() : 0);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size() * (optimizer ? 2 : 1)));
  for (const auto& p : params) write_blob(os, p.name, p.value);
  if (optimizer) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      write_blob(os, kMomentumPrefix + params[i].name, optimizer->velocity()[i]);
    }
  }
  if (!os) throw FormatError("failed writing checkpoint " + path);
}

template <typename T>
CheckpointHeader load_checkpoint(const std::string& path, Model<T>& model, SgdOptimizer<T>* optimizer) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path);
  const CheckpointHeader h = read_header(is, path);
  if (h.dtype != dtype_of<T>()) {
    throw FormatError("checkpoint dtype " + std::string(dtype_name(h.dtype)) + " does not match " +
                      dtype_name(dtype_of<T>()));
  }
  if (h.digest != model.spec().digest()) throw FormatError("checkpoint was written for a different model spec");
  auto& params = model.parameters();
  if (h.blobs != params.size() && h.blobs != 2 * params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(h.blobs) + " blobs, model has " +
                      std::to_string(params.size()) + " parameters");
  }
  std::vector<Array<T>> values;
  for (auto& p : params) {
    auto [name, value] = read_blob<T>(is);
    if (name != p.name || value.shape() != p.value.shape()) {
      throw FormatError("checkpoint blob '" + name + "' does not match parameter '" + p.name + "'");
    }
    values.push_back(std::move(value));
  }
  std::vector<Array<T>> velocity;
  if (h.blobs == 2 * params.size()) {
    for (auto& p : params) {
      auto [name, value] = read_blob<T>(is);
      if (name != kMomentumPrefix + p.name || value.shape() != p.value.shape()) {
        throw FormatError("checkpoint blob '" + name + "' is not the momentum of '" + p.name + "'");
      }
      velocity.push_back(std::move(value));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = std::move(values[i]);
  if (optimizer && !velocity.empty()) {
    optimizer->velocity() = std::move(velocity);
    optimizer->set_steps(h.optimizer_steps);
  }
  return h;
}

template void save_checkpoint(const std::string&, const Model<float>&, const SgdOptimizer<float>*, std::uint64_t);
template void save_checkpoint(const std::string&, const Model<double>&, const SgdOptimizer<double>*, std::uint64_t);
template CheckpointHeader load_checkpoint(const std::string&, Model<float>&, SgdOptimizer<float>*);
template CheckpointHeader load_checkpoint(const std::string&, Model<double>&, SgdOptimizer<double>*);

}  // namespace pgt
