#include "pgt/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "pgt/checkpoint.hpp"
#include "pgt/config.hpp"
#include "pgt/eval.hpp"
#include "pgt/text.hpp"
#include "pgt/verify.hpp"

namespace pgt {

namespace {

namespace fs = std::filesystem;

struct Common {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> dtype;
  std::vector<std::string> overrides;
};

RunConfig load_config(const std::string& path, const Common& common) {
  RunConfig c = path.empty() ? RunConfig{} : RunConfig::load(path);
  for (const auto& o : common.overrides) c.apply_override(o);
  if (common.seed) c.seed = *common.seed;
  if (common.dtype) c.set("dtype", *common.dtype);
  c.validate();
  return c;
}

void require_writable(const std::string& path, const std::string& key) {
  const fs::path parent = fs::absolute(path).parent_path();
  if (!fs::is_directory(parent)) throw ConfigError(key, "directory " + parent.string() + " does not exist");
}

std::string train_path(const std::string& prefix) { return prefix + ".train.pgtd"; }
std::string val_path(const std::string& prefix) { return prefix + ".val.pgtd"; }

template <typename T>
SyntheticData<T> load_data(const RunConfig& c) {
  if (c.io.data.empty()) return gen_synthetic_dataset<T>(c.task_spec(), c.seed);
  return {read_dataset<T>(train_path(c.io.data)), read_dataset<T>(val_path(c.io.data))};
}

template <typename T>
int train(const RunConfig& c, bool fresh, std::optional<std::size_t> stop_after, std::ostream& out) {
  require_writable(c.io.checkpoint, "io.checkpoint");
  require_writable(c.io.metrics, "io.metrics");
  const auto data = load_data<T>(c);
  Model<T> model(c.model_spec(), c.seed);
  Trainer<T> trainer(model, c.train_config(), c.schedule, c.eval);

  if (!fresh && fs::exists(c.io.checkpoint)) {
    const auto header = load_checkpoint(c.io.checkpoint, model, &trainer.optimizer());
    trainer.set_epoch(header.epochs_completed);
    out << "resuming from " << c.io.checkpoint << " after epoch " << header.epochs_completed << "\n";
  } else {
    fs::remove(c.io.metrics);
  }
  MetricsWriter metrics(c.io.metrics, c.schedule.max_steps());
  std::size_t ran = 0;
  while (trainer.epoch() < c.train.epochs && (!stop_after || ran < *stop_after)) {
    const EpochMetrics m = trainer.run_epoch(data.train, data.val);
    metrics.write(m);
    save_checkpoint(c.io.checkpoint, model, &trainer.optimizer(), trainer.epoch());
    out << "epoch " << m.epoch << " lr " << format_double(m.lr) << " train_loss " << format_double(m.train_loss)
        << " train_acc " << format_double(m.train_accuracy) << " val_loss " << format_double(m.val_loss)
        << " val_acc " << format_double(m.val_accuracy) << "\n";
    ++ran;
  }
  if (ran == 0) save_checkpoint(c.io.checkpoint, model, &trainer.optimizer(), trainer.epoch());
  return exit_ok;
}

template <typename T>
Model<T> load_model(const RunConfig& c, const std::string& checkpoint) {
  if (!fs::exists(checkpoint)) throw FormatError("checkpoint " + checkpoint + " not found");
  Model<T> model(c.model_spec(), c.seed);
  load_checkpoint<T>(checkpoint, model, nullptr);
  return model;
}

InferenceMode parse_mode(const std::string& name, const RunConfig& c) {
  if (name == "orig") return InferenceMode::orig_long();
  if (name == "pg") {
    return InferenceMode::pg_long(make_schedule(c.schedule.base_total(), c.schedule.step_length, c.schedule.steps),
                                  c.eval.aggregation);
  }
  if (name == "multiview") return InferenceMode::multi_view(c.eval.views, c.schedule.step_length, c.eval.aggregation);
  throw ConfigError("--mode", "expected orig, pg or multiview, got '" + name + "'");
}

template <typename T>
int evaluate_cmd(const RunConfig& c, const std::string& checkpoint, const std::string& mode_name, std::ostream& out) {
  Model<T> model = load_model<T>(c, checkpoint.empty() ? c.io.checkpoint : checkpoint);
  const InferenceMode mode = parse_mode(mode_name, c);
  Dataset<T> val = load_data<T>(c).val;
  if (mode.kind == InferenceMode::Kind::pg_long) {
    Rng rng = make_rng(c.seed, 0xfeed);
    for (auto& s : val.sequences) s = fit_sequence(s, mode.schedule.total_frames(), rng);
  }
  const EvalResult r = evaluate(model, val, mode);
  out << "mode " << mode_name << " loss " << format_double(r.loss) << " accuracy " << format_double(r.accuracy) << "\n";
  return exit_ok;
}

template <typename T>
int erf_cmd(const std::vector<RunConfig>& configs, const std::vector<std::string>& checkpoints,
            const std::string& out_dir, std::size_t sequences, std::ostream& out) {
  if (!fs::is_directory(out_dir)) throw ConfigError("--out-dir", "directory " + out_dir + " does not exist");
  std::vector<std::size_t> widths;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const RunConfig& c = configs[i];
    const std::string ckpt = i < checkpoints.size() ? checkpoints[i] : c.io.checkpoint;
    Model<T> model = load_model<T>(c, ckpt);
    const Dataset<T> val = load_data<T>(c).val;
    const std::size_t n = std::min(sequences, val.size());
    const auto profile = compute_erf<T>(model, std::span<const Array<T>>(val.sequences.data(), n),
                                        c.eval.target_frame, c.eval.theta);
    std::string name = fs::path(ckpt).stem().string();
    if (std::find(names.begin(), names.end(), name) != names.end()) name += "_" + std::to_string(i + 1);
    const fs::path csv = fs::path(out_dir) / (name + ".erf.csv");
    std::ofstream os(csv);
    if (!os) throw FormatError("cannot write " + csv.string());
    os << "frame_index,magnitude\n";
    for (std::size_t t = 0; t < profile.magnitudes.size(); ++t) os << t << ',' << format_double(profile.magnitudes[t]) << '\n';
    out << "wrote " << csv.string() << " (erf_width " << profile.erf_width << ")\n";
    widths.push_back(profile.erf_width);
    names.push_back(name);
  }
  const double ratio = widths[1] == 0 ? 0.0 : static_cast<double>(widths[0]) / static_cast<double>(widths[1]);
  out << "erf_width " << names[0] << "=" << widths[0] << " " << names[1] << "=" << widths[1]
      << " ratio=" << format_double(ratio) << "\n";
  return exit_ok;
}

template <typename T>
int membench_cmd(const RunConfig& c, const std::vector<std::size_t>& steps, const std::string& path, std::ostream& out) {
  const ModelSpec spec = c.model_spec();
  for (const auto& l : spec.layers) {
    if (l.type == LayerType::temporal_conv && !l.variant.is_markov()) {
      throw ConfigError("model.layers", "membench measures progressive training and needs Markov operators");
    }
  }
  require_writable(path, "--out");
  const Model<T> model(spec, c.seed);
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path);
  os << "config,peak_elements\n";
  const std::size_t len = c.schedule.step_length;
  for (std::size_t p : steps) {
    const std::size_t total = progressive_total(len, p);
    const auto report = peak_activation_memory(model, total, make_schedule(total, len, p));
    const std::string label = "T'=" + std::to_string(len) + " P=" + std::to_string(p) + " T=" + std::to_string(total);
    os << label << ',' << report.peak_activations << '\n';
    out << label << " peak_elements " << report.peak_activations << "\n";
  }
  return exit_ok;
}

template <typename T>
int gendata_cmd(const RunConfig& c, const std::string& prefix, std::ostream& out) {
  require_writable(train_path(prefix), "--out");
  const auto data = gen_synthetic_dataset<T>(c.task_spec(), c.seed);
  write_dataset(train_path(prefix), data.train);
  write_dataset(val_path(prefix), data.val);
  out << "wrote " << train_path(prefix) << " (" << data.train.size() << ") and " << val_path(prefix) << " ("
      << data.val.size() << ")\n";
  return exit_ok;
}

int verify_cmd(const RunConfig& c, bool break_truncation, std::ostream& out) {
  std::optional<TruncationOverride> fault;
  if (break_truncation) fault.emplace(false);
  VerifyOptions options{c.seed, c.dtype};
  std::vector<std::string> failed;
  for (const auto& r : run_verify_suite(options)) {
    out << r.id << ' ' << r.name << ' ' << (r.pass ? "PASS" : "FAIL") << "  " << r.detail << "\n";
    if (!r.pass) failed.push_back(r.id);
  }
  if (failed.empty()) {
    out << "all invariants hold (" << dtype_name(c.dtype) << ")\n";
    return exit_ok;
  }
  out << "violated:";
  for (const auto& id : failed) out << ' ' << id;
  out << "\n";
  return exit_verify_failed;
}

template <typename F>
int dispatch(DType dtype, F&& f) {
  return dtype == DType::f64 ? f(double{}) : f(float{});
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Progressive training for temporal convolution networks", "pgt"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&common](CLI::App* cmd) {
    cmd->add_option("--seed", common.seed, "Override the config seed");
    cmd->add_option("--dtype", common.dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    cmd->add_option("--set", common.overrides, "Override a config key (key=value)");
  };

  std::string config_path;
  auto* train = app.add_subcommand("train", "Train a model; resumes from io.checkpoint when it exists");
  train->add_option("--config", config_path, "Run config")->required();
  bool fresh = false;
  std::optional<std::size_t> stop_after;
  train->add_flag("--fresh", fresh, "Ignore an existing checkpoint");
  train->add_option("--stop-after", stop_after, "Run at most this many epochs in this invocation");
  add_common(train);

  auto* verify = app.add_subcommand("verify", "Run the invariant suite on small random models");
  verify->add_option("--config", config_path, "Run config (seed and dtype)");
  bool break_truncation = false;
  verify->add_flag("--break-truncation", break_truncation, "Fault injection: let gradients pass stop_gradient");
  add_common(verify);

  std::vector<std::string> erf_configs, erf_checkpoints;
  std::string out_dir = ".";
  std::size_t erf_sequences = 32;
  auto* erf = app.add_subcommand("erf", "ERF profiles of two trained models");
  erf->add_option("--config", erf_configs, "Config of each model (exactly two)")->required()->expected(2);
  erf->add_option("--checkpoint", erf_checkpoints, "Checkpoints overriding io.checkpoint, in config order");
  erf->add_option("--out-dir", out_dir, "Directory for the profile CSVs");
  erf->add_option("--sequences", erf_sequences, "Validation sequences averaged per profile");
  add_common(erf);

  std::vector<std::size_t> sweep = {1, 2, 4, 8};
  std::string out_path;
  auto* membench = app.add_subcommand("membench", "Peak activation elements of progressive training over P");
  membench->add_option("--config", config_path, "Run config")->required();
  membench->add_option("--P", sweep, "Step counts to sweep")->delimiter(',');
  membench->add_option("--out", out_path, "CSV output")->required();
  add_common(membench);

  auto* gendata = app.add_subcommand("gendata", "Write the synthetic task to <out>.train.pgtd / <out>.val.pgtd");
  gendata->add_option("--config", config_path, "Run config");
  gendata->add_option("--out", out_path, "Output prefix")->required();
  add_common(gendata);

  std::string checkpoint, mode = "pg";
  auto* eval = app.add_subcommand("eval", "Validation accuracy of a checkpoint");
  eval->add_option("--config", config_path, "Run config")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (default io.checkpoint)");
  eval->add_option("--mode", mode, "orig, pg or multiview");
  add_common(eval);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_ok : exit_usage;
  }

  try {
    if (*train) {
      const RunConfig c = load_config(config_path, common);
      return dispatch(c.dtype, [&](auto tag) { return pgt::train<decltype(tag)>(c, fresh, stop_after, out); });
    }
    if (*verify) return verify_cmd(load_config(config_path, common), break_truncation, out);
    if (*erf) {
      std::vector<RunConfig> configs;
      for (const auto& p : erf_configs) configs.push_back(load_config(p, common));
      return dispatch(configs[0].dtype, [&](auto tag) {
        return erf_cmd<decltype(tag)>(configs, erf_checkpoints, out_dir, erf_sequences, out);
      });
    }
    if (*membench) {
      const RunConfig c = load_config(config_path, common);
      return dispatch(c.dtype, [&](auto tag) { return membench_cmd<decltype(tag)>(c, sweep, out_path, out); });
    }
    if (*gendata) {
      const RunConfig c = load_config(config_path, common);
      return dispatch(c.dtype, [&](auto tag) { return gendata_cmd<decltype(tag)>(c, out_path, out); });
    }
    if (*eval) {
      const RunConfig c = load_config(config_path, common);
      return dispatch(c.dtype, [&](auto tag) { return evaluate_cmd<decltype(tag)>(c, checkpoint, mode, out); });
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_usage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return exit_numeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_usage;
  }
  return exit_usage;
}

}  // namespace pgt
