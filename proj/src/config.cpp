#include "pgt/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "pgt/text.hpp"

namespace pgt {

namespace {

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) { return static_cast<std::size_t>(to_uint(key, v)); }

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
  return out;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Member>
Field size_field(const std::string& key, Member member) {
  return {[member](const RunConfig& c) { return std::to_string(member(c)); },
          [key, member](RunConfig& c, const std::string& v) { member(c) = to_size(key, v); }};
}

template <typename Member>
Field double_field(const std::string& key, Member member) {
  return {[member](const RunConfig& c) { return format_double(member(c)); },
          [key, member](RunConfig& c, const std::string& v) { member(c) = to_double(key, v); }};
}

template <typename Member>
Field string_field(Member member) {
  return {[member](const RunConfig& c) { return member(c); },
          [member](RunConfig& c, const std::string& v) { member(c) = v; }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    f["seed"] = {[](const RunConfig& c) { return std::to_string(c.seed); },
                 [](RunConfig& c, const std::string& v) { c.seed = to_uint("seed", v); }};
    f["dtype"] = {[](const RunConfig& c) { return std::string(dtype_name(c.dtype)); },
                  [](RunConfig& c, const std::string& v) {
                    if (v == "f32") c.dtype = DType::f32;
                    else if (v == "f64") c.dtype = DType::f64;
                    else throw ConfigError("dtype", "expected f32 or f64, got '" + v + "'");
                  }};

    f["model.layers"] = string_field([](auto& c) -> auto& { return c.layers; });
    f["model.pmco_alpha"] = double_field("model.pmco_alpha", [](auto& c) -> auto& { return c.pmco_alpha; });

    f["schedule.regime"] = {[](const RunConfig& c) { return regime_name(c.schedule.regime); },
                            [](RunConfig& c, const std::string& v) { c.schedule.regime = parse_regime(v); }};
    f["schedule.T_prime"] =
        size_field("schedule.T_prime", [](auto& c) -> auto& { return c.schedule.step_length; });
    f["schedule.P"] = size_field("schedule.P", [](auto& c) -> auto& { return c.schedule.steps; });
    f["schedule.dpr"] = {[](const RunConfig& c) { return dpr_name(c.schedule.dpr); },
                         [](RunConfig& c, const std::string& v) {
                           try {
                             c.schedule.dpr = parse_dpr(v);
                           } catch (const Error& e) {
                             throw ConfigError("schedule.dpr", e.what());
                           }
                         }};

    f["train.lr"] = double_field("train.lr", [](auto& c) -> auto& { return c.train.lr; });
    f["train.momentum"] = double_field("train.momentum", [](auto& c) -> auto& { return c.train.momentum; });
    f["train.weight_decay"] =
        double_field("train.weight_decay", [](auto& c) -> auto& { return c.train.weight_decay; });
    f["train.epochs"] = size_field("train.epochs", [](auto& c) -> auto& { return c.train.epochs; });
    f["train.warmup_epochs"] =
        size_field("train.warmup_epochs", [](auto& c) -> auto& { return c.train.warmup_epochs; });
    f["train.batch_size"] =
        size_field("train.batch_size", [](auto& c) -> auto& { return c.train.batch_size; });
    f["train.grad_clip"] = double_field("train.grad_clip", [](auto& c) -> auto& { return c.train.grad_clip; });
    f["train.lr_schedule"] = {
        [](const RunConfig& c) { return std::string(c.train.lr_schedule == LrSchedule::cosine ? "cosine" : "constant"); },
        [](RunConfig& c, const std::string& v) {
          if (v == "cosine") c.train.lr_schedule = LrSchedule::cosine;
          else if (v == "constant") c.train.lr_schedule = LrSchedule::constant;
          else throw ConfigError("train.lr_schedule", "expected cosine or constant, got '" + v + "'");
        }};
    f["train.loss_aggregation"] = {
        [](const RunConfig& c) {
          return std::string(c.train.loss_aggregation == LossAggregation::per_step_mean ? "mean" : "sum");
        },
        [](RunConfig& c, const std::string& v) {
          if (v == "mean") c.train.loss_aggregation = LossAggregation::per_step_mean;
          else if (v == "sum") c.train.loss_aggregation = LossAggregation::per_step_sum;
          else throw ConfigError("train.loss_aggregation", "expected mean or sum, got '" + v + "'");
        }};

    f["task.frames"] = size_field("task.frames", [](auto& c) -> auto& { return c.task.frames; });
    f["task.channels"] = size_field("task.channels", [](auto& c) -> auto& { return c.task.channels; });
    f["task.height"] = size_field("task.height", [](auto& c) -> auto& { return c.task.height; });
    f["task.width"] = size_field("task.width", [](auto& c) -> auto& { return c.task.width; });
    f["task.markers"] = size_field("task.markers", [](auto& c) -> auto& { return c.task.markers; });
    f["task.window"] = size_field("task.window", [](auto& c) -> auto& { return c.task.window; });
    f["task.early_start"] =
        size_field("task.early_start", [](auto& c) -> auto& { return c.task.early_start; });
    f["task.late_start"] = size_field("task.late_start", [](auto& c) -> auto& { return c.task.late_start; });
    f["task.train_size"] = size_field("task.train_size", [](auto& c) -> auto& { return c.task.train_size; });
    f["task.val_size"] = size_field("task.val_size", [](auto& c) -> auto& { return c.task.val_size; });
    f["task.noise"] = double_field("task.noise", [](auto& c) -> auto& { return c.task.noise; });
    f["task.rule"] = {[](const RunConfig& c) { return rule_name(c.task.rule); },
                      [](RunConfig& c, const std::string& v) { c.task.rule = parse_rule(v); }};

    f["eval.views"] = size_field("eval.views", [](auto& c) -> auto& { return c.eval.views; });
    f["eval.target_frame"] =
        size_field("eval.target_frame", [](auto& c) -> auto& { return c.eval.target_frame; });
    f["eval.theta"] = double_field("eval.theta", [](auto& c) -> auto& { return c.eval.theta; });
    f["eval.aggregation"] = {[](const RunConfig& c) { return aggregation_name(c.eval.aggregation); },
                             [](RunConfig& c, const std::string& v) { c.eval.aggregation = parse_aggregation(v); }};

    f["io.checkpoint"] = string_field([](auto& c) -> auto& { return c.io.checkpoint; });
    f["io.metrics"] = string_field([](auto& c) -> auto& { return c.io.metrics; });
    f["io.data"] = string_field([](auto& c) -> auto& { return c.io.data; });
    return f;
  }();
  return table;
}

}  // namespace

ModelSpec RunConfig::model_spec() const {
  ModelSpec m;
  m.in_channels = task.channels;
  m.height = task.height;
  m.width = task.width;
  m.num_classes = task.num_classes();
  m.pmco_alpha = pmco_alpha;
  try {
    m.layers = ModelSpec::parse_layers(layers, pmco_alpha);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("model.layers", e.what());
  }
  return m;
}

SyntheticTaskSpec RunConfig::task_spec() const {
  SyntheticTaskSpec t = task;
  t.clip_length = schedule.step_length;
  return t;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

void RunConfig::validate() const {
  const ModelSpec m = model_spec();
  m.validate();
  schedule.validate();
  train_config().validate();
  try {
    task_spec().validate();
  } catch (const SpecError& e) {
    throw ConfigError("task", e.what());
  }
  if (schedule.regime == TrainingRegime::progressive) {
    for (const auto& l : m.layers) {
      if (l.type == LayerType::temporal_conv && !l.variant.is_markov()) {
        throw ConfigError("model.layers", "progressive training needs Markov temporal operators, found '" +
                                              l.to_string() + "'");
      }
    }
  }
  if (schedule.step_length > task.frames) {
    throw ConfigError("schedule.T_prime", "step length exceeds the task's " + std::to_string(task.frames) + " frames");
  }
  if (eval.views == 0) throw ConfigError("eval.views", "need at least one view");
  if (!(eval.theta > 0.0 && eval.theta < 1.0)) throw ConfigError("eval.theta", "must lie in (0, 1)");
  if (io.checkpoint.empty()) throw ConfigError("io.checkpoint", "path must not be empty");
  if (io.metrics.empty()) throw ConfigError("io.metrics", "path must not be empty");
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& table = fields();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError(key, "unknown configuration key");
  it->second.set(*this, value);
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(trim(assignment), "override must have the form key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(*this) + "\n";
  return out;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream is(text);
  std::string line;
  std::vector<std::string> seen;
  std::size_t number = 0;
  while (std::getline(is, line)) {
    ++number;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(body, "line " + std::to_string(number) + " is not a key = value pair");
    }
    const std::string key = trim(body.substr(0, eq));
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) throw ConfigError(key, "key given twice");
    seen.push_back(key);
    c.set(key, trim(body.substr(eq + 1)));
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("--config", "cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

void RunConfig::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw ConfigError("--config", "cannot write " + path);
  os << serialize();
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [key, field] : fields()) out.push_back(key);
  return out;
}

}  // namespace pgt
