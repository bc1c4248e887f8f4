#include "pgt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "pgt/text.hpp"

namespace pgt {

std::string regime_name(TrainingRegime r) { return r == TrainingRegime::progressive ? "progressive" : "clip"; }

TrainingRegime parse_regime(const std::string& text) {
  if (text == "progressive") return TrainingRegime::progressive;
  if (text == "clip") return TrainingRegime::clip;
  throw ConfigError("schedule.regime", "expected progressive or clip, got '" + text + "'");
}

std::size_t ScheduleConfig::max_steps() const {
  if (regime == TrainingRegime::clip) return 0;
  if (dpr == DprMode::off) return steps;
  DprConfig cfg{dpr, step_length, base_total()};
  std::size_t most = 0;
  for (std::size_t len : cfg.choices()) most = std::max(most, dpr_plan(cfg, len).steps);
  return most;
}

void ScheduleConfig::validate() const {
  if (step_length < 2) throw ConfigError("schedule.T_prime", "must be at least 2");
  if (steps < 1) throw ConfigError("schedule.P", "must be at least 1");
  if (dpr != DprMode::off) DprConfig{dpr, step_length, base_total()}.choices();
}

template <typename T>
Trainer<T>::Trainer(Model<T>& model, TrainConfig train, ScheduleConfig schedule, EvalConfig eval)
    : model_(model), train_(train), schedule_(schedule), eval_(eval), optimizer_(model) {
  train_.validate();
  schedule_.validate();
}

template <typename T>
InferenceMode Trainer<T>::validation_mode() const {
  if (schedule_.regime == TrainingRegime::clip) {
    return InferenceMode::multi_view(eval_.views, schedule_.step_length, eval_.aggregation);
  }
  return InferenceMode::pg_long(make_schedule(schedule_.base_total(), schedule_.step_length, schedule_.steps),
                                eval_.aggregation);
}

template <typename T>
Array<T> Trainer<T>::validation_input(const Array<T>& sequence) const {
  if (schedule_.regime == TrainingRegime::clip || sequence.frames() == schedule_.base_total()) return sequence;
  Rng rng = make_rng(train_.seed, 0xfeed);
  return fit_sequence(sequence, schedule_.base_total(), rng);
}

template <typename T>
EpochMetrics Trainer<T>::run_epoch(const Dataset<T>& train, const Dataset<T>& val) {
  EpochMetrics m;
  m.epoch = epoch_;
  m.lr = lr_at(static_cast<double>(epoch_), train_);
  const std::size_t columns = schedule_.max_steps();
  std::vector<double> step_sum(columns, 0.0);
  std::vector<std::size_t> step_count(columns, 0);

  Rng rng = make_rng(train_.seed, epoch_, 1);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  const DprConfig dpr{schedule_.dpr, schedule_.step_length, schedule_.base_total()};
  const ProgressiveSchedule basic =
      schedule_.regime == TrainingRegime::progressive
          ? make_schedule(schedule_.base_total(), schedule_.step_length, schedule_.steps)
          : ProgressiveSchedule{};

  double loss_sum = 0;
  std::size_t correct = 0;
  ActivationMeter meter;
  for (std::size_t start = 0; start < order.size(); start += train_.batch_size) {
    const std::size_t end = std::min(order.size(), start + train_.batch_size);
    const T weight = T{1} / static_cast<T>(end - start);
    model_.zero_grad();
    for (std::size_t i = start; i < end; ++i) {
      const Array<T>& seq = train.sequences[order[i]];
      const std::size_t label = train.labels[order[i]];
      StepReport<T> report;
      if (schedule_.regime == TrainingRegime::progressive) {
        const ProgressiveSchedule schedule = dpr.mode == DprMode::off ? basic : dpr_sample(dpr, rng).schedule;
        const Array<T> input = fit_sequence(seq, schedule.total_frames(), rng);
        report = progressive_accumulate(model_, input, label, schedule, train_.loss_aggregation, weight, &meter);
        for (std::size_t p = 0; p < report.step_losses.size(); ++p) {
          step_sum[p] += static_cast<double>(report.step_losses[p]);
          ++step_count[p];
        }
      } else {
        std::uniform_int_distribution<std::size_t> pick(0, seq.frames() - schedule_.step_length);
        const std::size_t s = pick(rng);
        report = integrated_accumulate(model_, seq.slice_frames(s, s + schedule_.step_length), label, weight, &meter);
      }
      loss_sum += static_cast<double>(report.loss);
      const auto& z = report.logits.vec();
      if (static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin()) == label) ++correct;
      m.peak_activations = std::max(m.peak_activations, report.peak_activations);
    }
    optimizer_.step(model_, m.lr, train_);
  }
  m.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, train.size()));
  m.train_accuracy = static_cast<double>(correct) / static_cast<double>(std::max<std::size_t>(1, train.size()));
  if (!std::isfinite(m.train_loss)) throw NumericError("training loss diverged in epoch " + std::to_string(epoch_));
  for (std::size_t p = 0; p < columns; ++p) {
    m.step_losses.push_back(step_count[p] ? step_sum[p] / static_cast<double>(step_count[p])
                                          : std::numeric_limits<double>::quiet_NaN());
  }

  Dataset<T> val_input;
  for (std::size_t i = 0; i < val.size(); ++i) {
    val_input.sequences.push_back(validation_input(val.sequences[i]));
    val_input.labels.push_back(val.labels[i]);
  }
  const EvalResult v = evaluate(model_, val_input, validation_mode());
  m.val_loss = v.loss;
  m.val_accuracy = v.accuracy;
  ++epoch_;
  return m;
}

template <typename T>
void Trainer<T>::fit(const Dataset<T>& train, const Dataset<T>& val,
                     const std::function<void(const EpochMetrics&)>& on_epoch) {
  while (epoch_ < train_.epochs) {
    const EpochMetrics m = run_epoch(train, val);
    if (on_epoch) on_epoch(m);
  }
}

MetricsWriter::MetricsWriter(const std::string& path, std::size_t step_columns)
    : path_(path), step_columns_(step_columns) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  if (fresh) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write metrics to " + path);
    os << header(step_columns) << '\n';
  }
}

std::string MetricsWriter::header(std::size_t step_columns) {
  std::string h = "epoch,split,loss,accuracy,lr,peak_activations";
  for (std::size_t p = 1; p <= step_columns; ++p) h += ",step_loss_" + std::to_string(p);
  return h;
}

void MetricsWriter::write(const EpochMetrics& m) {
  std::ofstream os(path_, std::ios::app);
  if (!os) throw FormatError("cannot append metrics to " + path_);
  auto cell = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
  os << m.epoch << ",train," << format_double(m.train_loss) << ',' << format_double(m.train_accuracy) << ','
     << format_double(m.lr) << ',' << m.peak_activations;
  for (std::size_t p = 0; p < step_columns_; ++p) os << ',' << (p < m.step_losses.size() ? cell(m.step_losses[p]) : "");
  os << '\n';
  os << m.epoch << ",val," << format_double(m.val_loss) << ',' << format_double(m.val_accuracy) << ','
     << format_double(m.lr) << ',' << m.peak_activations;
  for (std::size_t p = 0; p < step_columns_; ++p) os << ',';
  os << '\n';
}

template class Trainer<float>;
template class Trainer<double>;

}  // namespace pgt
