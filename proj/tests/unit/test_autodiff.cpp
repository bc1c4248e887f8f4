#include <gtest/gtest.h>

#include <cmath>

#include "pgt/finite_difference.hpp"
#include "pgt/graph.hpp"
#include "pgt/ops.hpp"
#include "pgt/rng.hpp"
#include "pgt/temporal_ops.hpp"
#include "pgt/verify.hpp"

using namespace pgt;

namespace {

using Builder = std::function<Var<double>(Graph<double>&, Var<double>)>;

// Autodiff gradient of f(x) = sum(build(x) * r) for a fixed random r,
// against central differences of the same function.
double op_gradient_error(const Shape& shape, const Builder& build, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const Array<double> x0 = random_array<double>(shape, rng);
  Array<double> r;
  {
    Graph<double> g;
    r = random_array<double>(build(g, g.constant(x0)).shape(), rng);
  }
  auto f = [&](const Array<double>& x) {
    Graph<double> g;
    return ops::sum(g, ops::mul(g, build(g, g.constant(x)), g.constant(r))).value()[0];
  };
  Graph<double> g;
  Var<double> x = g.variable(x0);
  g.backward(ops::sum(g, ops::mul(g, build(g, x), g.constant(r))), false);
  return relative_error(x.grad(), finite_difference_grad<double>(f, x0, 1e-5));
}

}  // namespace

TEST(StopGradient, ForwardIdentityBackwardZero) {
  Graph<double> g;
  Var<double> x = g.variable(Array<double>({2}, {1.0, 2.0}));
  Var<double> s = g.stop_gradient(x);
  EXPECT_EQ(s.value(), x.value());
  g.backward(ops::sum(g, s), false);
  EXPECT_EQ(x.grad(), Array<double>({2}, {0.0, 0.0}));
}

TEST(StopGradient, OnlyTheOpenPathCarriesGradient) {
  Graph<double> g;
  Var<double> x = g.variable(Array<double>({1}, {3.0}));
  g.backward(ops::sum(g, ops::mul(g, g.stop_gradient(x), x)), false);
  EXPECT_EQ(x.grad()[0], 3.0);

  // Oracle: the truncated input treated as the constant 3.
  auto f = [](const Array<double>& v) { return 3.0 * v[0]; };
  const auto fd = finite_difference_grad<double>(f, Array<double>({1}, {3.0}), 1e-5);
  EXPECT_LE(relative_error(x.grad(), fd), 1e-5);
}

TEST(StopGradient, Idempotent) {
  Graph<double> g;
  Var<double> x = g.variable(Array<double>({3}, {1.0, -2.0, 0.5}));
  Var<double> twice = g.stop_gradient(g.stop_gradient(x));
  EXPECT_EQ(twice.value(), x.value());
  g.backward(ops::sum(g, ops::mul(g, twice, x)), false);
  EXPECT_EQ(x.grad(), x.value());
}

TEST(StopGradient, TestHookLetsGradientThrough) {
  TruncationOverride off(false);
  Graph<double> g;
  Var<double> x = g.variable(Array<double>({1}, {3.0}));
  g.backward(ops::sum(g, ops::mul(g, g.stop_gradient(x), x)), false);
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, Bilinear) {
  Graph<double> g;
  Var<double> w = g.variable(Array<double>({1}, {2.0}));
  Var<double> x = g.variable(Array<double>({1}, {5.0}));
  g.backward(ops::sum(g, ops::mul(g, w, x)), false);
  EXPECT_EQ(w.grad()[0], 5.0);
  EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(Backward, AccumulatesIntoParameters) {
  Parameter<double> w("w", Array<double>({1}, {2.0}));
  for (int i = 0; i < 2; ++i) {
    Graph<double> g;
    g.backward(ops::sum(g, ops::mul(g, g.param(w), g.constant(Array<double>({1}, {5.0})))), true);
  }
  EXPECT_EQ(w.grad[0], 10.0);

  Graph<double> g;
  g.backward(ops::sum(g, ops::mul(g, g.param(w), g.constant(Array<double>({1}, {5.0})))), false);
  EXPECT_EQ(w.grad[0], 5.0);
}

TEST(Backward, KIdenticalGraphsGiveKTimesTheGradient) {
  Rng rng = make_rng(3);
  Parameter<double> w("w", random_array<double>({4, 3}, rng));
  Parameter<double> b("b", random_array<double>({3}, rng));
  const Array<double> v = random_array<double>({4}, rng);
  auto run = [&](bool accumulate) {
    Graph<double> g;
    g.backward(ops::softmax_cross_entropy(g, ops::linear(g, g.constant(v), g.param(w), g.param(b)), 1), accumulate);
  };
  run(false);
  const Array<double> single = w.grad;
  w.zero_grad();
  b.zero_grad();
  for (int k = 0; k < 4; ++k) run(true);
  for (std::size_t i = 0; i < single.size(); ++i) EXPECT_EQ(w.grad[i], 4.0 * single[i]);
}

TEST(Backward, SeedScalesGradient) {
  Graph<double> g;
  Var<double> x = g.variable(Array<double>({2}, {1.0, 2.0}));
  g.backward(ops::sum(g, x), false, 0.25);
  EXPECT_EQ(x.grad(), Array<double>({2}, {0.25, 0.25}));
}

TEST(Backward, RejectsNonScalarLoss) {
  Graph<double> g;
  Var<double> x = g.variable(Array<double>({2}, {1.0, 2.0}));
  EXPECT_THROW(g.backward(ops::relu(g, x), false), ShapeError);
}

TEST(Backward, RandomThreeLayerNetMatchesFiniteDifferences) {
  Rng rng = make_rng(11);
  Parameter<double> w1("w1", random_array<double>({3, 3, 4}, rng, 0.5));
  Parameter<double> b1("b1", random_array<double>({4}, rng, 0.5));
  Parameter<double> w2("w2", random_array<double>({4, 5}, rng, 0.5));
  Parameter<double> b2("b2", random_array<double>({5}, rng, 0.5));
  Parameter<double> w3("w3", random_array<double>({5, 3}, rng, 0.5));
  Parameter<double> b3("b3", random_array<double>({3}, rng, 0.5));
  const Array<double> x = random_array<double>({6, 3}, rng);
  auto loss = [&](Graph<double>& g) {
    Var<double> h = ops::relu(g, temporal_conv(g, g.constant(x), g.param(w1), g.param(b1)));
    h = ops::relu(g, ops::pointwise_conv(g, h, g.param(w2), g.param(b2)));
    return ops::softmax_cross_entropy(g, ops::linear(g, ops::mean_pool(g, h), g.param(w3), g.param(b3)), 2);
  };
  {
    Graph<double> g;
    g.backward(loss(g), false);
  }
  for (Parameter<double>* p : {&w1, &b1, &w2, &b2, &w3, &b3}) {
    const Array<double> keep = p->value;
    auto f = [&](const Array<double>& v) {
      p->value = v;
      Graph<double> g;
      const double out = loss(g).value()[0];
      p->value = keep;
      return out;
    };
    EXPECT_LE(relative_error(p->grad, finite_difference_grad<double>(f, keep, 1e-5)), 1e-6) << p->name;
  }
}

TEST(OpGradients, MatchFiniteDifferences) {
  Rng rng = make_rng(5);
  const Array<double> other = random_array<double>({5, 3}, rng);
  const Array<double> w33 = random_array<double>({3, 3, 2, 3}, rng);
  const Array<double> wp = random_array<double>({3, 4}, rng);
  const Array<double> wl = random_array<double>({3, 2}, rng);
  const Array<double> bias = random_array<double>({4}, rng);
  const Array<double> gamma = random_array<double>({3}, rng);
  const Array<double> wt = random_array<double>({3, 3, 2}, rng);
  const std::vector<std::pair<std::string, std::pair<Shape, Builder>>> cases = {
      {"add", {{5, 3}, [&](Graph<double>& g, Var<double> x) { return ops::add(g, x, g.constant(other)); }}},
      {"mul", {{5, 3}, [&](Graph<double>& g, Var<double> x) { return ops::mul(g, x, x); }}},
      {"scale", {{5, 3}, [](Graph<double>& g, Var<double> x) { return ops::scale(g, x, 2.5); }}},
      {"relu", {{5, 3}, [](Graph<double>& g, Var<double> x) { return ops::relu(g, x); }}},
      {"l2_norm", {{5, 3}, [](Graph<double>& g, Var<double> x) { return ops::l2_norm(g, x); }}},
      {"frame_at", {{5, 3}, [](Graph<double>& g, Var<double> x) { return ops::frame_at(g, x, 2); }}},
      {"mean_pool", {{5, 3, 2, 2}, [](Graph<double>& g, Var<double> x) { return ops::mean_pool(g, x); }}},
      {"linear", {{3}, [&](Graph<double>& g, Var<double> x) {
                    return ops::linear(g, x, g.constant(wl), g.constant(Array<double>({2}, {0.1, -0.2})));
                  }}},
      {"pointwise_conv", {{5, 3}, [&](Graph<double>& g, Var<double> x) {
                            return ops::pointwise_conv(g, x, g.constant(wp), g.constant(bias));
                          }}},
      {"spatial_conv", {{2, 2, 3, 3}, [&](Graph<double>& g, Var<double> x) {
                          return ops::spatial_conv(g, x, g.constant(w33), g.constant(Array<double>({3})));
                        }}},
      {"channel_norm", {{5, 3, 2, 2}, [&](Graph<double>& g, Var<double> x) {
                          return ops::channel_norm(g, x, g.constant(gamma), g.constant(Array<double>({3})));
                        }}},
      {"softmax_cross_entropy", {{4}, [](Graph<double>& g, Var<double> x) {
                                   return ops::softmax_cross_entropy(g, x, 1);
                                 }}},
      {"temporal_conv", {{6, 3}, [&](Graph<double>& g, Var<double> x) {
                           return temporal_conv(g, x, g.constant(wt), g.constant(Array<double>({2})));
                         }}},
  };
  std::uint64_t seed = 100;
  for (const auto& [name, c] : cases) {
    EXPECT_LE(op_gradient_error(c.first, c.second, seed++), 1e-5) << name;
  }
}

TEST(OpGradients, ParameterAndWeightPathsMatchFiniteDifferences) {
  Rng rng = make_rng(9);
  const Array<double> x = random_array<double>({2, 2, 3, 3}, rng);
  Parameter<double> w("w", random_array<double>({3, 3, 2, 2}, rng));
  Parameter<double> b("b", random_array<double>({2}, rng));
  Parameter<double> gamma("gamma", random_array<double>({2}, rng));
  Parameter<double> beta("beta", random_array<double>({2}, rng));
  const Array<double> r = random_array<double>({2, 2, 3, 3}, rng);
  auto loss = [&](Graph<double>& g) {
    Var<double> h = ops::spatial_conv(g, g.constant(x), g.param(w), g.param(b));
    h = ops::channel_norm(g, h, g.param(gamma), g.param(beta));
    return ops::sum(g, ops::mul(g, h, g.constant(r)));
  };
  {
    Graph<double> g;
    g.backward(loss(g), false);
  }
  for (Parameter<double>* p : {&w, &b, &gamma, &beta}) {
    const Array<double> keep = p->value;
    auto f = [&](const Array<double>& v) {
      p->value = v;
      Graph<double> g;
      const double out = loss(g).value()[0];
      p->value = keep;
      return out;
    };
    const Array<double> fd = finite_difference_grad<double>(f, keep, 1e-5);
    if (p == &b) {
      // The norm removes any per-channel offset.
      EXPECT_LE(max_abs_diff(p->grad, Array<double>(p->grad.shape())), 1e-12);
      EXPECT_LE(max_abs_diff(fd, Array<double>(fd.shape())), 1e-8);
    } else {
      EXPECT_LE(relative_error(p->grad, fd), 1e-5) << p->name;
    }
  }
}

TEST(FiniteDifference, QuadraticAndLinear) {
  auto squares = [](const Array<double>& x) { return x[0] * x[0] + x[1] * x[1]; };
  const auto g = finite_difference_grad<double>(squares, Array<double>({2}, {1.0, 2.0}), 1e-5);
  EXPECT_NEAR(g[0], 2.0, 1e-6);
  EXPECT_NEAR(g[1], 4.0, 1e-6);

  auto total = [](const Array<double>& x) {
    double s = 0;
    for (double v : x.values()) s += v;
    return s;
  };
  const auto ones = finite_difference_grad<double>(total, Array<double>({3}, {-4.0, 0.5, 7.0}), 1e-5);
  for (double v : ones.values()) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(FiniteDifference, Errors) {
  auto f = [](const Array<double>& x) { return x[0]; };
  EXPECT_THROW(finite_difference_grad<double>(f, Array<double>({1}, {1.0}), 0.0), NumericError);
  auto bad = [](const Array<double>& x) { return std::log(x[0]); };
  EXPECT_THROW(finite_difference_grad<double>(bad, Array<double>({1}, {0.0}), 1e-5), NumericError);
}

TEST(ActivationMeter, TracksLiveAndPeakAcrossGraphs) {
  ActivationMeter meter;
  {
    Graph<double> g(&meter);
    Var<double> x = g.constant(Array<double>({4}, 1.0));
    ops::relu(g, x);
    ops::scale(g, x, 2.0);
    EXPECT_EQ(meter.live(), 8u);
  }
  EXPECT_EQ(meter.live(), 0u);
  EXPECT_EQ(meter.peak(), 8u);
  {
    Graph<double> g(&meter);
    ops::relu(g, g.constant(Array<double>({2}, 1.0)));
  }
  EXPECT_EQ(meter.peak(), 8u);
}
