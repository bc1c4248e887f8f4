#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pgt/array.hpp"
#include "pgt/model.hpp"
#include "pgt/rng.hpp"

namespace pgt {

struct CheckResult {
  std::string id;
  std::string name;
  bool pass = false;
  /// The measured quantity the check thresholds (diff, error, ratio...).
  double value = 0;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 1;
  DType dtype = DType::f64;
};

/// Default forward-equivalence tolerance for a dtype: 1e-10 (f64), 1e-5 (f32).
double equivalence_tolerance(DType dtype);

/// Small random network: 1-4 temporal layers of random Markov variants,
/// at most 16 channels, optionally with pointwise/spatial convs and ReLUs.
ModelSpec random_model_spec(Rng& rng, std::size_t max_temporal = 4, std::size_t max_channels = 16);

template <typename T>
Array<T> random_array(const Shape& shape, Rng& rng, double scale = 1.0);

/// V1: step-by-step vs one-pass layout forward on random models and schedules.
template <typename T>
CheckResult check_forward_equivalence(std::uint64_t seed, std::size_t trials, double tol);

/// V2: per-step loss isolation. Every segment of the layout graph gets its
/// own parameter copy; the loss of step p must leave all other copies and
/// every carried f_past with exactly zero gradient.
template <typename T>
CheckResult check_truncation(std::uint64_t seed, std::size_t trials);

/// V3: accumulated progressive gradients vs central differences of the
/// truncated total loss (carried states frozen), in f64.
CheckResult check_gradient_oracle(std::uint64_t seed, std::size_t trials, double eps = 1e-5, double tol = 1e-5);

/// V4: stop_gradient passes values unchanged and blocks gradients.
template <typename T>
CheckResult check_stop_gradient(std::uint64_t seed);

/// V5: gradient accumulation is linear: two weighted accumulations equal the
/// weighted sum of separate gradients.
template <typename T>
CheckResult check_accumulation(std::uint64_t seed);

/// V6: P = 1 progressive gradients are bit-identical to integrated ones, and
/// PgLong with P = 1 equals OrigLong on the same frames.
template <typename T>
CheckResult check_degenerate(std::uint64_t seed, std::size_t trials);

/// V7: DPR draws per mode are uniform over the choice set within 3 sigma and
/// satisfy |T - T_b| <= T' - 1 and P = round[(T_b - 1) / (T' - 1)].
CheckResult check_dpr(std::uint64_t seed, std::size_t draws = 10000);

/// V8: progressive peak activations vary <= 10% across P in {2,4,8} at T' = 8;
/// integrated peak at T = 64 vs T = 16 has ratio 4 +- 0.4.
template <typename T>
CheckResult check_memory(std::uint64_t seed);

/// Runs V1..V8 in order.
std::vector<CheckResult> run_verify_suite(const VerifyOptions& options);

}  // namespace pgt
