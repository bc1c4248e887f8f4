#include "pgt/verify.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "pgt/eval.hpp"
#include "pgt/ops.hpp"
#include "pgt/schedule.hpp"
#include "pgt/text.hpp"
#include "pgt/train.hpp"

namespace pgt {

namespace {

template <typename... Args>
std::string cat(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

template <typename T>
void randomize_parameters(Model<T>& model, Rng& rng, double scale) {
  for (auto& p : model.parameters()) p.value = random_array<T>(p.value.shape(), rng, scale);
}

template <typename T>
std::vector<Array<T>> gradients(const Model<T>& model) {
  std::vector<Array<T>> out;
  for (const auto& p : model.parameters()) out.push_back(p.grad);
  return out;
}

template <typename T>
bool all_zero(const Array<T>& a) {
  return std::all_of(a.values().begin(), a.values().end(), [](T v) { return v == T{0}; });
}

struct Geometry {
  std::size_t step_length;
  std::size_t steps;
};

Geometry random_geometry(Rng& rng, std::size_t min_steps, std::size_t max_steps) {
  static constexpr std::size_t lengths[] = {2, 4, 8};
  return {lengths[pick(rng, 0, 2)], pick(rng, min_steps, max_steps)};
}

}  // namespace

double equivalence_tolerance(DType dtype) { return dtype == DType::f64 ? 1e-10 : 1e-5; }

ModelSpec random_model_spec(Rng& rng, std::size_t max_temporal, std::size_t max_channels) {
  static const char* variants[] = {"mco", "cmco-avg", "cmco-max", "pmco"};
  ModelSpec spec;
  spec.in_channels = pick(rng, 1, std::min<std::size_t>(4, max_channels));
  spec.num_classes = pick(rng, 2, 4);
  spec.pmco_alpha = std::uniform_real_distribution<double>(0.1, 0.9)(rng);
  const bool spatial = pick(rng, 0, 3) == 0;
  if (spatial) spec.height = spec.width = 2;
  const std::size_t temporal = pick(rng, 1, max_temporal);
  for (std::size_t i = 0; i < temporal; ++i) {
    const std::size_t channels = pick(rng, 1, max_channels);
    if (pick(rng, 0, 3) == 0) {
      spec.layers.push_back({LayerType::pointwise_conv, pick(rng, 1, max_channels), {}});
    } else if (spatial && pick(rng, 0, 2) == 0) {
      spec.layers.push_back({LayerType::spatial_conv, pick(rng, 1, max_channels), {}});
    }
    spec.layers.push_back({LayerType::temporal_conv, channels,
                           OperatorVariant::parse(variants[pick(rng, 0, 3)], spec.pmco_alpha)});
    if (pick(rng, 0, 2) != 0) spec.layers.push_back({LayerType::relu, 0, {}});
  }
  spec.validate();
  return spec;
}

template <typename T>
Array<T> random_array(const Shape& shape, Rng& rng, double scale) {
  std::normal_distribution<double> dist(0.0, scale);
  Array<T> a(shape);
  for (auto& v : a.values()) v = static_cast<T>(dist(rng));
  return a;
}

template <typename T>
CheckResult check_forward_equivalence(std::uint64_t seed, std::size_t trials, double tol) {
  CheckResult r{"V1", "forward-equivalence", true, 0, {}};
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Rng rng = make_rng(seed, 1, trial);
    const ModelSpec spec = random_model_spec(rng);
    const Geometry geo = random_geometry(rng, 1, 5);
    Model<T> model(spec, seed + trial);
    randomize_parameters(model, rng, 0.5);
    const auto schedule = make_schedule(progressive_total(geo.step_length, geo.steps), geo.step_length, geo.steps);
    const auto x = random_array<T>(spec.sequence_shape(schedule.total_frames()), rng);
    const auto rep = forward_equivalence_check(model, x, schedule, tol);
    if (rep.max_abs_diff > r.value) {
      r.value = rep.max_abs_diff;
      r.detail = cat("worst trial ", trial, " (T'=", geo.step_length, ", P=", geo.steps, ", layers ",
                     ModelSpec::format_layers(spec.layers), ")");
    }
  }
  r.pass = r.value <= tol;
  r.detail = cat("max |step - layout| = ", r.value, " over ", trials, " models, tol ", tol,
                 r.detail.empty() ? "" : "; ", r.detail);
  return r;
}

template <typename T>
CheckResult check_truncation(std::uint64_t seed, std::size_t trials) {
  CheckResult r{"V2", "truncation", true, 0, {}};
  std::size_t leaks = 0, carried_leaks = 0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Rng rng = make_rng(seed, 2, trial);
    const ModelSpec spec = random_model_spec(rng);
    const Geometry geo = random_geometry(rng, 2, 5);
    Model<T> base(spec, seed + trial);
    randomize_parameters(base, rng, 0.5);
    std::vector<Model<T>> copies(geo.steps, base);
    std::vector<Model<T>*> models;
    for (auto& m : copies) models.push_back(&m);

    const std::size_t total = progressive_total(geo.step_length, geo.steps);
    const auto schedule = make_schedule(total, geo.step_length, geo.steps);
    const auto x = random_array<T>(spec.sequence_shape(total), rng);
    Graph<T> g;
    std::vector<Var<T>> inputs;
    for (const auto& range : schedule.ranges) inputs.push_back(g.constant(x.slice_frames(range.begin, range.end)));
    const auto layout = layout_forward<T>(g, models, inputs);

    for (std::size_t p = 0; p < geo.steps; ++p) {
      const std::size_t label = pick(rng, 0, spec.num_classes - 1);
      g.backward(ops::softmax_cross_entropy(g, layout.logits[p], label), false);
      for (std::size_t q = 0; q < geo.steps; ++q) {
        if (q == p) continue;
        for (const auto& param : copies[q].parameters()) {
          if (!all_zero(param.grad)) {
            ++leaks;
            r.value = std::max(r.value, static_cast<double>(max_abs_diff(param.grad, Array<T>(param.grad.shape()))));
          }
        }
      }
      for (const auto& segment : layout.carried) {
        for (const auto& carried : segment) {
          if (carried.node() && carried.requires_grad() && !all_zero(carried.grad())) ++carried_leaks;
        }
      }
    }
  }
  r.pass = leaks == 0 && carried_leaks == 0;
  r.detail = cat(leaks, " parameter copies and ", carried_leaks, " carried f_past received gradient from another step's loss over ",
                 trials, " configurations");
  return r;
}

CheckResult check_gradient_oracle(std::uint64_t seed, std::size_t trials, double eps, double tol) {
  CheckResult r{"V3", "gradient-oracle", true, 0, {}};
  std::size_t checked = 0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Rng rng = make_rng(seed, 3, trial);
    ModelSpec spec = random_model_spec(rng, 2, 4);
    Model<double> model(spec, seed + trial);
    while (model.parameter_elements() > 500) {
      spec = random_model_spec(rng, 2, 4);
      model = Model<double>(spec, seed + trial);
    }
    randomize_parameters(model, rng, 0.5);
    const Geometry geo = random_geometry(rng, 2, 3);
    const std::size_t total = progressive_total(geo.step_length, geo.steps);
    const auto schedule = make_schedule(total, geo.step_length, geo.steps);
    const auto x = random_array<double>(spec.sequence_shape(total), rng);
    const std::size_t label = pick(rng, 0, spec.num_classes - 1);

    std::vector<MarkovState<double>> states;
    MarkovState<double> state = model.initial_state();
    for (const auto& range : schedule.ranges) {
      states.push_back(state);
      Graph<double> g;
      state = model.forward_step(g, g.constant(x.slice_frames(range.begin, range.end)), state).next;
    }
    auto truncated_loss = [&]() {
      double loss = 0;
      for (std::size_t p = 0; p < schedule.steps; ++p) {
        Graph<double> g;
        auto fwd = model.forward_step(g, g.constant(x.slice_frames(schedule.ranges[p].begin, schedule.ranges[p].end)),
                                      states[p]);
        loss += ops::softmax_cross_entropy(g, fwd.logits, label).value()[0];
      }
      return loss / static_cast<double>(schedule.steps);
    };

    model.zero_grad();
    progressive_accumulate(model, x, label, schedule, LossAggregation::per_step_mean);
    const auto analytic = gradients(model);
    double worst = 0, scale = 1e-8;
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
      Array<double>& value = model.parameters()[i].value;
      for (std::size_t j = 0; j < value.size(); ++j) {
        const double keep = value[j];
        value[j] = keep + eps;
        const double up = truncated_loss();
        value[j] = keep - eps;
        const double down = truncated_loss();
        value[j] = keep;
        const double fd = (up - down) / (2 * eps);
        worst = std::max(worst, std::abs(fd - analytic[i][j]));
        scale = std::max({scale, std::abs(fd), std::abs(analytic[i][j])});
        ++checked;
      }
    }
    r.value = std::max(r.value, worst / scale);
  }
  r.pass = r.value <= tol;
  r.detail = cat("max relative error ", r.value, " over ", checked, " parameters (eps ", eps, ", tol ", tol, ")");
  return r;
}

template <typename T>
CheckResult check_stop_gradient(std::uint64_t seed) {
  CheckResult r{"V4", "stop-gradient", true, 0, {}};
  Rng rng = make_rng(seed, 4);
  Graph<T> g;
  Var<T> x = g.variable(random_array<T>({4, 3}, rng));
  Var<T> w = g.variable(random_array<T>({4, 3}, rng));
  Var<T> stopped = g.stop_gradient(x);
  g.backward(ops::sum(g, ops::mul(g, stopped, w)), false);
  const bool same_value = stopped.value() == x.value();
  const bool blocked = all_zero(x.grad());
  const bool flows = w.grad() == x.value();
  r.value = static_cast<double>(max_abs_diff(x.grad(), Array<T>(x.grad().shape())));
  r.pass = same_value && blocked && flows;
  r.detail = cat("value passthrough ", same_value ? "ok" : "BROKEN", ", gradient into input ", r.value,
                 ", sibling gradient ", flows ? "ok" : "BROKEN");
  return r;
}

template <typename T>
CheckResult check_accumulation(std::uint64_t seed) {
  CheckResult r{"V5", "accumulation-linearity", true, 0, {}};
  Rng rng = make_rng(seed, 5);
  const ModelSpec spec = random_model_spec(rng);
  Model<T> model(spec, seed);
  randomize_parameters(model, rng, 0.5);
  const auto schedule = make_schedule(15, 8, 2);
  const auto a = random_array<T>(spec.sequence_shape(15), rng);
  const auto b = random_array<T>(spec.sequence_shape(15), rng);
  const T wa = T(0.25), wb = T(0.75);

  model.zero_grad();
  progressive_accumulate(model, a, 0, schedule, LossAggregation::per_step_mean, wa);
  progressive_accumulate(model, b, 1, schedule, LossAggregation::per_step_mean, wb);
  const auto joint = gradients(model);
  model.zero_grad();
  progressive_accumulate(model, a, 0, schedule, LossAggregation::per_step_mean);
  const auto ga = gradients(model);
  model.zero_grad();
  progressive_accumulate(model, b, 1, schedule, LossAggregation::per_step_mean);
  const auto gb = gradients(model);

  double scale = 1e-12;
  for (std::size_t i = 0; i < joint.size(); ++i) {
    for (std::size_t j = 0; j < joint[i].size(); ++j) {
      const double expect = static_cast<double>(wa * ga[i][j] + wb * gb[i][j]);
      r.value = std::max(r.value, std::abs(static_cast<double>(joint[i][j]) - expect));
      scale = std::max(scale, std::abs(expect));
    }
  }
  r.value /= scale;
  const double tol = dtype_of<T>() == DType::f64 ? 1e-12 : 1e-5;
  r.pass = r.value <= tol;
  r.detail = cat("relative deviation from weighted sum ", r.value, " (tol ", tol, ")");
  return r;
}

template <typename T>
CheckResult check_degenerate(std::uint64_t seed, std::size_t trials) {
  CheckResult r{"V6", "degenerate-P1", true, 0, {}};
  std::size_t mismatches = 0;
  TrainConfig cfg;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Rng rng = make_rng(seed, 6, trial);
    const ModelSpec spec = random_model_spec(rng);
    const std::size_t len = random_geometry(rng, 1, 1).step_length;
    Model<T> progressive(spec, seed + trial);
    randomize_parameters(progressive, rng, 0.5);
    Model<T> integrated = progressive;
    const auto clip = random_array<T>(spec.sequence_shape(len), rng);
    const std::size_t label = pick(rng, 0, spec.num_classes - 1);
    const auto schedule = make_schedule(len, len, 1);

    SgdOptimizer<T> opt_p(progressive), opt_i(integrated);
    const auto rp = progressive_train_step(progressive, clip, label, schedule, opt_p, cfg, 0.1);
    const auto ri = integrated_train_step(integrated, clip, label, opt_i, cfg, 0.1);
    bool same = rp.loss == ri.loss;
    for (std::size_t i = 0; i < progressive.parameters().size(); ++i) {
      same = same && progressive.parameters()[i].grad == integrated.parameters()[i].grad &&
             progressive.parameters()[i].value == integrated.parameters()[i].value;
    }
    const auto pg = infer(progressive, clip, InferenceMode::pg_long(schedule));
    const auto orig = infer(progressive, clip, InferenceMode::orig_long());
    same = same && pg == orig;
    r.value = std::max(r.value, static_cast<double>(max_abs_diff(pg, orig)));
    if (!same) ++mismatches;
  }
  r.pass = mismatches == 0;
  r.detail = cat(mismatches, " of ", trials, " clips differ between P=1 progressive and integrated training or between PgLong and OrigLong");
  return r;
}

CheckResult check_dpr(std::uint64_t seed, std::size_t draws) {
  CheckResult r{"V7", "dpr-distribution", true, 0, {}};
  std::string detail;
  for (DprMode mode : {DprMode::a, DprMode::b}) {
    const DprConfig cfg{mode, 8, 36};
    const auto choices = cfg.choices();
    Rng rng = make_rng(seed, 7, static_cast<std::uint64_t>(mode));
    std::map<std::size_t, std::size_t> counts;
    std::size_t bad = 0;
    for (std::size_t i = 0; i < draws; ++i) {
      const DprDraw d = dpr_sample(cfg, rng);
      ++counts[d.step_length];
      const std::size_t expect_p =
          static_cast<std::size_t>(std::floor(static_cast<double>(cfg.base_total - 1) / static_cast<double>(d.step_length - 1) + 0.5));
      const long total = static_cast<long>(d.schedule.total_frames());
      if (d.steps != expect_p || d.schedule.steps != d.steps ||
          std::labs(total - static_cast<long>(cfg.base_total)) > static_cast<long>(d.step_length - 1)) {
        ++bad;
      }
    }
    const double p = 1.0 / static_cast<double>(choices.size());
    const double sigma = std::sqrt(static_cast<double>(draws) * p * (1 - p));
    double worst = 0;
    for (std::size_t c : choices) worst = std::max(worst, std::abs(static_cast<double>(counts[c]) - draws * p) / sigma);
    std::size_t outside = 0;
    for (const auto& [len, n] : counts) {
      if (std::find(choices.begin(), choices.end(), len) == choices.end()) outside += n;
    }
    r.value = std::max(r.value, worst);
    r.pass = r.pass && worst <= 3.0 && bad == 0 && outside == 0;
    detail += cat(detail.empty() ? "" : "; ", "mode ", dpr_name(mode), ": max deviation ", worst, " sigma, ", bad,
                  " draws violate the length rule, ", outside, " outside the choice set");
  }
  r.detail = detail;
  return r;
}

template <typename T>
CheckResult check_memory(std::uint64_t seed) {
  CheckResult r{"V8", "memory-scaling", true, 0, {}};
  ModelSpec spec;
  spec.in_channels = 4;
  spec.num_classes = 3;
  spec.layers = ModelSpec::parse_layers("tconv:8:pmco,relu,tconv:8:pmco,relu", spec.pmco_alpha);
  const Model<T> model(spec, seed);
  std::size_t lo = static_cast<std::size_t>(-1), hi = 0;
  for (std::size_t steps : {2, 4, 8}) {
    const std::size_t total = progressive_total(8, steps);
    const auto peak = peak_activation_memory(model, total, make_schedule(total, 8, steps)).peak_activations;
    lo = std::min(lo, peak);
    hi = std::max(hi, peak);
  }
  const double spread = static_cast<double>(hi - lo) / static_cast<double>(lo);
  const double ratio = static_cast<double>(peak_activation_memory(model, 64, std::nullopt).peak_activations) /
                       static_cast<double>(peak_activation_memory(model, 16, std::nullopt).peak_activations);
  r.value = spread;
  r.pass = spread <= 0.10 && std::abs(ratio - 4.0) <= 0.4;
  r.detail = cat("progressive spread over P in {2,4,8}: ", spread, " (<= 0.1); integrated T=64/T=16 ratio ", ratio,
                 " (4 +- 0.4)");
  return r;
}

namespace {

template <typename T>
std::vector<CheckResult> suite(const VerifyOptions& o) {
  return {check_forward_equivalence<T>(o.seed, 50, equivalence_tolerance(o.dtype)),
          check_truncation<T>(o.seed, 20),
          check_gradient_oracle(o.seed, 5),
          check_stop_gradient<T>(o.seed),
          check_accumulation<T>(o.seed),
          check_degenerate<T>(o.seed, 10),
          check_dpr(o.seed),
          check_memory<T>(o.seed)};
}

}  // namespace

std::vector<CheckResult> run_verify_suite(const VerifyOptions& options) {
  return options.dtype == DType::f64 ? suite<double>(options) : suite<float>(options);
}

#define PGT_INSTANTIATE_VERIFY(T)                                                  \
  template Array<T> random_array(const Shape&, Rng&, double);                      \
  template CheckResult check_forward_equivalence<T>(std::uint64_t, std::size_t, double); \
  template CheckResult check_truncation<T>(std::uint64_t, std::size_t);            \
  template CheckResult check_stop_gradient<T>(std::uint64_t);                      \
  template CheckResult check_accumulation<T>(std::uint64_t);                       \
  template CheckResult check_degenerate<T>(std::uint64_t, std::size_t);            \
  template CheckResult check_memory<T>(std::uint64_t);

PGT_INSTANTIATE_VERIFY(float)
PGT_INSTANTIATE_VERIFY(double)

}  // namespace pgt
