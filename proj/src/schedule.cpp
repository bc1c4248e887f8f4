#include "pgt/schedule.hpp"

#include <cmath>

namespace pgt {

std::size_t progressive_total(std::size_t step_length, std::size_t steps) {
  return (step_length - 1) * steps + 1;
}

ProgressiveSchedule make_schedule(std::size_t total, std::size_t step_length, std::size_t steps) {
  if (step_length < 2) throw ScheduleError("progressive length must be at least 2, got " + std::to_string(step_length));
  if (steps < 1) throw ScheduleError("need at least one progressive step");
  const std::size_t expected = progressive_total(step_length, steps);
  if (total != expected) {
    throw ScheduleError("T'=" + std::to_string(step_length) + ", P=" + std::to_string(steps) + " covers T=" +
                        std::to_string(expected) + " frames, not " + std::to_string(total));
  }
  ProgressiveSchedule s;
  s.step_length = step_length;
  s.steps = steps;
  for (std::size_t p = 0; p < steps; ++p) {
    const std::size_t begin = p * (step_length - 1);
    s.ranges.push_back({begin, begin + step_length});
  }
  return s;
}

std::string dpr_name(DprMode mode) {
  switch (mode) {
    case DprMode::a:
      return "A";
    case DprMode::b:
      return "B";
    case DprMode::off:
      break;
  }
  return "off";
}

DprMode parse_dpr(const std::string& text) {
  if (text == "off") return DprMode::off;
  if (text == "A" || text == "a") return DprMode::a;
  if (text == "B" || text == "b") return DprMode::b;
  throw ConfigError("schedule.dpr", "expected off, A or B, got '" + text + "'");
}

std::vector<std::size_t> DprConfig::choices() const {
  std::vector<double> factors;
  switch (mode) {
    case DprMode::a:
      factors = {0.75, 1.0, 1.25};
      break;
    case DprMode::b:
      factors = {0.5, 0.75, 1.0};
      break;
    case DprMode::off:
      throw ConfigError("schedule.dpr", "DPR is off");
  }
  std::vector<std::size_t> out;
  for (double f : factors) {
    const auto len = static_cast<std::size_t>(std::floor(f * static_cast<double>(base_length) + 0.5));
    if (len < 2) {
      throw ConfigError("schedule.T_prime", "DPR choice " + std::to_string(f) + " x " +
                                                    std::to_string(base_length) + " gives T' < 2");
    }
    out.push_back(len);
  }
  return out;
}

DprDraw dpr_plan(const DprConfig& config, std::size_t step_length) {
  if (step_length < 2) throw ConfigError("schedule.T_prime", "T' must be at least 2");
  if (config.base_total < 2) throw ConfigError("schedule.P", "T_b must be at least 2");
  const double ratio = static_cast<double>(config.base_total - 1) / static_cast<double>(step_length - 1);
  const auto steps = static_cast<std::size_t>(std::round(ratio));
  if (steps < 1) {
    throw ConfigError("schedule.T_prime", "T'=" + std::to_string(step_length) + " is too long for T_b=" +
                                                  std::to_string(config.base_total));
  }
  DprDraw d;
  d.step_length = step_length;
  d.steps = steps;
  d.schedule = make_schedule(progressive_total(step_length, steps), step_length, steps);
  return d;
}

DprDraw dpr_sample(const DprConfig& config, Rng& rng) {
  const auto set = config.choices();
  std::uniform_int_distribution<std::size_t> pick(0, set.size() - 1);
  return dpr_plan(config, set[pick(rng)]);
}

}  // namespace pgt
