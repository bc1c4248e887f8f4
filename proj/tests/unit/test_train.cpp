#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pgt/checkpoint.hpp"
#include "pgt/eval.hpp"
#include "pgt/finite_difference.hpp"
#include "pgt/ops.hpp"
#include "pgt/trainer.hpp"
#include "pgt/verify.hpp"

using namespace pgt;

namespace {

ModelSpec small_spec(const std::string& layers = "tconv:4:pmco,relu,tconv:3:cmco-max,relu") {
  ModelSpec s;
  s.in_channels = 2;
  s.num_classes = 3;
  s.layers = ModelSpec::parse_layers(layers, s.pmco_alpha);
  return s;
}

std::vector<Array<double>> grads(const Model<double>& m) {
  std::vector<Array<double>> out;
  for (const auto& p : m.parameters()) out.push_back(p.grad);
  return out;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("pgt_train_" + name)).string();
}

}  // namespace

TEST(Sgd, FirstStep) {
  std::vector<Parameter<double>> params{{"p", Array<double>({1}, 0.0)}};
  params[0].grad[0] = 1.0;
  std::vector<Array<double>> v{Array<double>({1})};
  sgd_update<double>(params, v, 0.1, 0.9, 0.0);
  EXPECT_DOUBLE_EQ(params[0].value[0], -0.1);
  EXPECT_DOUBLE_EQ(v[0][0], 1.0);
}

TEST(Sgd, ZeroGradientCoastsOnMomentum) {
  std::vector<Parameter<double>> params{{"p", Array<double>({1}, 1.0)}};
  std::vector<Array<double>> v{Array<double>({1}, 2.0)};
  sgd_update<double>(params, v, 0.1, 0.9, 0.0);
  EXPECT_DOUBLE_EQ(v[0][0], 1.8);
  EXPECT_DOUBLE_EQ(params[0].value[0], 1.0 - 0.18);
}

TEST(Sgd, TwoStepsHandUnrolled) {
  const double lr = 0.05, m = 0.9, wd = 0.01;
  std::vector<Parameter<double>> params{{"p", Array<double>({1}, 0.5)}};
  std::vector<Array<double>> v{Array<double>({1})};
  double p = 0.5, vel = 0.0;
  for (double g : {0.3, -0.7}) {
    params[0].grad[0] = g;
    sgd_update<double>(params, v, lr, m, wd);
    vel = m * vel + (g + wd * p);
    p = p - lr * vel;
  }
  EXPECT_DOUBLE_EQ(params[0].value[0], p);
  EXPECT_DOUBLE_EQ(v[0][0], vel);
}

TEST(LrSchedule, WarmupThenCosine) {
  TrainConfig c;
  c.lr = 0.2;
  c.epochs = 30;
  c.warmup_epochs = 3;
  EXPECT_DOUBLE_EQ(lr_at(0, c), 0.02);
  EXPECT_DOUBLE_EQ(lr_at(3, c), 0.2);
  EXPECT_NEAR(lr_at(30, c), 0.0, 1e-15);
  EXPECT_LT(lr_at(29, c), 0.01 * c.lr);
  for (double e = 0; e + 1 < 30; e += 1) {
    if (e >= 3) EXPECT_GE(lr_at(e, c), lr_at(e + 1, c));
  }
  c.lr_schedule = LrSchedule::constant;
  EXPECT_DOUBLE_EQ(lr_at(20, c), 0.2);
}

TEST(ClipGradNorm, RescalesToMaxNorm) {
  std::vector<Parameter<double>> params{{"a", Array<double>({2})}, {"b", Array<double>({1})}};
  params[0].grad = Array<double>({2}, {3.0, 0.0});
  params[1].grad = Array<double>({1}, {4.0});
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(params[0].grad[0], 0.6);
  EXPECT_DOUBLE_EQ(params[1].grad[0], 0.8);
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 0.0), 1.0);
}

TEST(ProgressiveStep, SingleStepIsIntegratedTraining) {
  Rng rng = make_rng(1);
  Model<double> a(small_spec(), 3);
  Model<double> b = a;
  const auto clip = random_array<double>(a.spec().sequence_shape(8), rng);
  SgdOptimizer<double> oa(a), ob(b);
  TrainConfig cfg;
  const auto ra = progressive_train_step(a, clip, 2, make_schedule(8, 8, 1), oa, cfg, 0.1);
  const auto rb = integrated_train_step(b, clip, 2, ob, cfg, 0.1);
  EXPECT_EQ(ra.loss, rb.loss);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].grad, b.parameters()[i].grad);
    EXPECT_EQ(a.parameters()[i].value, b.parameters()[i].value);
  }
}

TEST(ProgressiveStep, TwoStepsMatchOnePassTruncatedGraph) {
  Rng rng = make_rng(2);
  Model<double> model(small_spec(), 5);
  const auto x = random_array<double>(model.spec().sequence_shape(9), rng);
  const auto schedule = make_schedule(9, 5, 2);
  model.zero_grad();
  progressive_accumulate(model, x, 1, schedule, LossAggregation::per_step_mean);
  const auto accumulated = grads(model);

  model.zero_grad();
  Graph<double> g;
  std::vector<Var<double>> inputs;
  for (const auto& r : schedule.ranges) inputs.push_back(g.constant(x.slice_frames(r.begin, r.end)));
  std::vector<Model<double>*> models(2, &model);
  const auto layout = layout_forward<double>(g, models, inputs);
  auto loss = ops::scale(g, ops::add(g, ops::softmax_cross_entropy(g, layout.logits[0], 1),
                                     ops::softmax_cross_entropy(g, layout.logits[1], 1)),
                         0.5);
  g.backward(loss, false);
  for (std::size_t i = 0; i < accumulated.size(); ++i) {
    EXPECT_LE(relative_error(accumulated[i], model.parameters()[i].grad), 1e-10) << model.parameters()[i].name;
  }
}

TEST(ProgressiveStep, AccumulatedGradientIsSumOfStepGradients) {
  Rng rng = make_rng(3);
  Model<double> model(small_spec(), 7);
  const auto x = random_array<double>(model.spec().sequence_shape(13), rng);
  const auto schedule = make_schedule(13, 4, 4);
  model.zero_grad();
  progressive_accumulate(model, x, 0, schedule, LossAggregation::per_step_sum);
  const auto total = grads(model);

  std::vector<Array<double>> sum;
  for (const auto& p : model.parameters()) sum.emplace_back(p.value.shape());
  MarkovState<double> state = model.initial_state();
  for (const auto& r : schedule.ranges) {
    model.zero_grad();
    Graph<double> g;
    auto fwd = model.forward_step(g, g.constant(x.slice_frames(r.begin, r.end)), state);
    g.backward(ops::softmax_cross_entropy(g, fwd.logits, 0), false);
    for (std::size_t i = 0; i < sum.size(); ++i)
      for (std::size_t k = 0; k < sum[i].size(); ++k) sum[i][k] += model.parameters()[i].grad[k];
    state = fwd.next;
  }
  for (std::size_t i = 0; i < sum.size(); ++i) EXPECT_EQ(total[i], sum[i]);
}

TEST(ProgressiveStep, TruncationIsolatesStepLosses) {
  const auto r = check_truncation<double>(17, 8);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(ProgressiveStep, PeakMemoryIndependentOfStepCount) {
  const Model<double> model(small_spec(), 1);
  const auto one = peak_activation_memory(model, 8, make_schedule(8, 8, 1));
  const auto five = peak_activation_memory(model, 36, make_schedule(36, 8, 5));
  EXPECT_LE(static_cast<double>(five.peak_activations),
            1.10 * static_cast<double>(one.peak_activations) + static_cast<double>(five.markov_state_elements));
  EXPECT_GT(five.markov_state_elements, 0u);
}

TEST(ProgressiveStep, NonFiniteLossNamesTheStep) {
  Model<double> model(small_spec(), 1);
  Array<double> x(model.spec().sequence_shape(15), 0.5);
  x[x.size() - 1] = std::numeric_limits<double>::infinity();
  try {
    progressive_accumulate(model, x, 0, make_schedule(15, 8, 2), LossAggregation::per_step_mean);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
  }
}

TEST(IntegratedStep, DeterministicAndMatchesFiniteDifferences) {
  Rng rng = make_rng(4);
  Model<double> model(small_spec("tconv:3:pmco,relu,pconv:3,relu"), 9);
  for (auto& p : model.parameters()) p.value = random_array<double>(p.value.shape(), rng, 0.5);
  const auto clip = random_array<double>(model.spec().sequence_shape(6), rng);
  model.zero_grad();
  const auto r1 = integrated_accumulate(model, clip, 1);
  const auto g1 = grads(model);
  model.zero_grad();
  const auto r2 = integrated_accumulate(model, clip, 1);
  EXPECT_EQ(r1.loss, r2.loss);
  EXPECT_EQ(g1, grads(model));

  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    Parameter<double>& p = model.parameters()[i];
    const Array<double> keep = p.value;
    auto f = [&](const Array<double>& v) {
      p.value = v;
      Graph<double> g;
      const double loss =
          ops::softmax_cross_entropy(g, model.head(g, model.forward_local(g, g.constant(clip))), 1).value()[0];
      p.value = keep;
      return loss;
    };
    EXPECT_LE(relative_error(g1[i], finite_difference_grad<double>(f, keep, 1e-5)), 1e-5) << p.name;
  }
}

TEST(Trainer, FixedSeedGivesBitIdenticalLossTrajectory) {
  SyntheticTaskSpec task;
  task.train_size = 24;
  task.val_size = 9;
  const auto data = gen_synthetic_dataset<double>(task, 3);
  ModelSpec spec = small_spec();
  spec.in_channels = task.channels;
  spec.num_classes = task.num_classes();
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 8;
  ScheduleConfig sched;
  sched.dpr = DprMode::a;
  auto run = [&] {
    Model<double> m(spec, 3);
    Trainer<double> t(m, cfg, sched, EvalConfig{});
    std::vector<double> losses;
    t.fit(data.train, data.val, [&](const EpochMetrics& e) { losses.push_back(e.train_loss); });
    return losses;
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  EXPECT_EQ(a.size(), 3u);
}

TEST(Trainer, ResumeFromCheckpointMatchesUninterruptedRun) {
  SyntheticTaskSpec task;
  task.train_size = 16;
  task.val_size = 9;
  const auto data = gen_synthetic_dataset<double>(task, 4);
  ModelSpec spec = small_spec();
  spec.in_channels = task.channels;
  spec.num_classes = task.num_classes();
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 4;
  const ScheduleConfig sched;
  const std::string path = temp_path("resume.ckpt");

  Model<double> full(spec, 1);
  Trainer<double> uninterrupted(full, cfg, sched, EvalConfig{});
  std::vector<double> expect;
  uninterrupted.fit(data.train, data.val, [&](const EpochMetrics& e) { expect.push_back(e.train_loss); });

  std::vector<double> got;
  {
    Model<double> m(spec, 1);
    Trainer<double> t(m, cfg, sched, EvalConfig{});
    for (int e = 0; e < 2; ++e) got.push_back(t.run_epoch(data.train, data.val).train_loss);
    save_checkpoint(path, m, &t.optimizer(), t.epoch());
  }
  Model<double> m(spec, 99);
  Trainer<double> t(m, cfg, sched, EvalConfig{});
  t.set_epoch(load_checkpoint(path, m, &t.optimizer()).epochs_completed);
  EXPECT_EQ(t.epoch(), 2u);
  t.fit(data.train, data.val, [&](const EpochMetrics& e) { got.push_back(e.train_loss); });
  ASSERT_EQ(got.size(), expect.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-6);
  std::filesystem::remove(path);
}

TEST(Trainer, ValidationModes) {
  Model<double> m(small_spec(), 1);
  ScheduleConfig pg;
  Trainer<double> a(m, TrainConfig{}, pg, EvalConfig{});
  EXPECT_EQ(a.validation_mode().kind, InferenceMode::Kind::pg_long);
  EXPECT_EQ(a.validation_mode().schedule.total_frames(), 36u);
  ScheduleConfig clip;
  clip.regime = TrainingRegime::clip;
  Trainer<double> b(m, TrainConfig{}, clip, EvalConfig{});
  EXPECT_EQ(b.validation_mode().kind, InferenceMode::Kind::multi_view);
  EXPECT_EQ(b.validation_mode().clip_length, 8u);
}

TEST(Checkpoint, RoundTripAndValidation) {
  Model<double> m(small_spec(), 2);
  SgdOptimizer<double> opt(m);
  opt.velocity()[0][0] = 0.25;
  opt.set_steps(12);
  const std::string path = temp_path("rt.ckpt");
  save_checkpoint(path, m, &opt, 7);

  const auto h = read_checkpoint_header(path);
  EXPECT_EQ(h.version, 1u);
  EXPECT_EQ(h.dtype, DType::f64);
  EXPECT_EQ(h.digest, m.spec().digest());
  EXPECT_EQ(h.epochs_completed, 7u);
  EXPECT_EQ(h.blobs, 2 * m.parameters().size());

  Model<double> other(small_spec(), 99);
  SgdOptimizer<double> other_opt(other);
  load_checkpoint(path, other, &other_opt);
  for (std::size_t i = 0; i < m.parameters().size(); ++i) EXPECT_EQ(other.parameters()[i].value, m.parameters()[i].value);
  EXPECT_EQ(other_opt.velocity()[0][0], 0.25);
  EXPECT_EQ(other_opt.steps(), 12u);

  Model<float> wrong_dtype(small_spec(), 1);
  EXPECT_THROW(load_checkpoint<float>(path, wrong_dtype, nullptr), FormatError);
  Model<double> wrong_spec(small_spec("tconv:5:pmco"), 1);
  EXPECT_THROW(load_checkpoint<double>(path, wrong_spec, nullptr), FormatError);
  EXPECT_THROW(load_checkpoint<double>(temp_path("missing.ckpt"), other, nullptr), FormatError);

  std::ofstream(temp_path("junk.ckpt")) << "not a checkpoint";
  EXPECT_THROW(read_checkpoint_header(temp_path("junk.ckpt")), FormatError);
  std::filesystem::remove(path);
  std::filesystem::remove(temp_path("junk.ckpt"));
}

TEST(Checkpoint, ParametersOnly) {
  Model<float> m(small_spec(), 2);
  const std::string path = temp_path("params.ckpt");
  save_checkpoint<float>(path, m, nullptr, 0);
  EXPECT_EQ(read_checkpoint_header(path).blobs, m.parameters().size());
  Model<float> other(small_spec(), 5);
  load_checkpoint<float>(path, other, nullptr);
  EXPECT_EQ(other.parameters().back().value, m.parameters().back().value);
  std::filesystem::remove(path);
}

TEST(Metrics, HeaderAndAppend) {
  EXPECT_EQ(MetricsWriter::header(0), "epoch,split,loss,accuracy,lr,peak_activations");
  EXPECT_EQ(MetricsWriter::header(2), "epoch,split,loss,accuracy,lr,peak_activations,step_loss_1,step_loss_2");
  const std::string path = temp_path("metrics.csv");
  std::filesystem::remove(path);
  EpochMetrics m;
  m.step_losses = {1.5, 2.5};
  MetricsWriter(path, 2).write(m);
  m.epoch = 1;
  MetricsWriter(path, 2).write(m);
  std::ifstream is(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(is, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[1], "0,train,0,0,0,0,1.5,2.5");
  EXPECT_EQ(lines[2], "0,val,0,0,0,0,,");
  EXPECT_EQ(lines[3].substr(0, 8), "1,train,");
  std::filesystem::remove(path);
}
