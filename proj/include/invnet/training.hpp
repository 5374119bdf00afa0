#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "invnet/errors.hpp"
#include "invnet/unrolled.hpp"

namespace invnet {

struct Example {
  SignalGrid g;  ///< observation
  SignalGrid f;  ///< ground truth
};

struct Dataset {
  std::vector<Example> pairs;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

/// Shuffles indices with `seed` and puts the first `train_count` in the train split.
Dataset make_dataset(std::vector<Example> pairs, std::size_t train_count, std::uint64_t seed);
/// Shapes agree, splits are disjoint and cover every pair.
void validate(const Dataset& data);
std::vector<Example> select(const Dataset& data, std::span<const std::size_t> idx);

struct LossSpec {
  double weight_decay = 0.0;  ///< lambda_W
};

enum class Optimizer { PlainSgd, MomentumSgd };
std::string to_string(Optimizer o);
Optimizer optimizer_from_string(const std::string& name);

struct TrainConfig {
  Optimizer optimizer = Optimizer::PlainSgd;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::size_t epochs = 10;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  bool shuffle = true;
};

void validate(const TrainConfig& cfg);
/// key = value lines covering every field.
std::string describe(const TrainConfig& cfg, const LossSpec& spec);

/// sum_k |f_k - forward(g_k)|^2 + lambda_W * sum(trainable^2). When `grad` is
/// given it receives the flat gradient over trainable values.
double batch_loss(const UnrolledModel& model, const std::vector<Example>& pool, std::span<const std::size_t> idx,
                  const LossSpec& spec, std::vector<double>* grad);

double loss(const UnrolledModel& model, std::span<const Example> batch, const LossSpec& spec);
/// Per-block gradient; blocks that are not trainable stay empty.
ParamGradient grad(const UnrolledModel& model, std::span<const Example> batch, const LossSpec& spec);

struct ExampleMetrics {
  double mse = 0.0;
  double psnr = 0.0;  ///< +inf when mse == 0
};

struct MetricReport {
  std::vector<ExampleMetrics> per_example;
  double mse = 0.0;   ///< mean of per-example values
  double psnr = 0.0;  ///< mean of per-example values
};

/// PSNR = 10 log10(peak^2 / mse) with peak = max |truth|.
ExampleMetrics image_metrics(const SignalGrid& estimate, const SignalGrid& truth);
MetricReport aggregate(std::vector<ExampleMetrics> per_example);

struct EpochLoss {
  double train = 0.0;  ///< full training objective after the epoch
  double test = 0.0;   ///< data term on the test split (train data term if the split is empty)
};

template <class Model>
struct TrainRun {
  Model final_model;  ///< snapshot with the lowest test loss
  Model last_model;
  std::vector<EpochLoss> history;
  EpochLoss initial;
  std::size_t best_epoch = 0;  ///< 1-based
  std::string config_echo;
  double wall_seconds = 0.0;
};

/// Structured report: config echo, initial and per-epoch losses, best epoch.
std::string train_report(const std::string& config_echo, const EpochLoss& initial,
                         const std::vector<EpochLoss>& history, std::size_t best_epoch, const MetricReport* final_metrics);

template <class Model>
MetricReport evaluate(const Model& model, const Dataset& data) {
  if (data.test.empty()) throw ConfigError("evaluation needs a nonempty test split");
  std::vector<ExampleMetrics> per;
  for (std::size_t i : data.test) per.push_back(image_metrics(predict(model, data.pairs[i].g), data.pairs[i].f));
  return aggregate(std::move(per));
}

/// Minibatch SGD over the trainable values of any model exposing
/// trainable_values / set_trainable_values / batch_loss / predict.
template <class Model>
TrainRun<Model> train(const Model& model, const Dataset& data, const TrainConfig& cfg, const LossSpec& spec) {
  validate(data);
  validate(cfg);
  if (data.train.empty()) throw ConfigError("training needs a nonempty train split");
  const auto start = std::chrono::steady_clock::now();
  std::vector<double> params = trainable_values(model);
  if (params.empty()) throw ConfigError("the model has no trainable parameters");

  const LossSpec data_only{};
  const auto& held_out = data.test.empty() ? data.train : data.test;
  auto measure = [&](const Model& m) {
    return EpochLoss{batch_loss(m, data.pairs, data.train, spec, nullptr),
                     batch_loss(m, data.pairs, held_out, data_only, nullptr)};
  };

  TrainRun<Model> run{model, model, {}, measure(model), 0, describe(cfg, spec), 0.0};
  Model current = model;
  std::vector<double> velocity(params.size(), 0.0), g;
  std::vector<std::size_t> order = data.train;
  std::mt19937_64 rng(cfg.seed);
  double best = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - at);
      const double l = batch_loss(current, data.pairs, std::span(order).subspan(at, n), spec, &g);
      if (!std::isfinite(l)) throw TrainingDivergedError("training loss is not finite", epoch);
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (cfg.optimizer == Optimizer::MomentumSgd) {
          velocity[i] = cfg.momentum * velocity[i] + g[i];
          params[i] -= cfg.learning_rate * velocity[i];
        } else {
          params[i] -= cfg.learning_rate * g[i];
        }
        if (!std::isfinite(params[i])) throw TrainingDivergedError("parameters became non-finite", epoch);
      }
      set_trainable_values(current, params);
      params = trainable_values(current);  // picks up projections such as threshold clamping
    }
    const EpochLoss e = measure(current);
    if (!std::isfinite(e.train) || !std::isfinite(e.test)) {
      throw TrainingDivergedError("training loss is not finite", epoch);
    }
    run.history.push_back(e);
    if (e.test < best) {
      best = e.test;
      run.best_epoch = epoch;
      run.final_model = current;
    }
  }
  run.last_model = current;
  run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

struct GradProbe {
  std::size_t coordinate = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckResult {
  std::vector<GradProbe> probes;
  bool near_kink = false;  ///< no probes taken: some pre-activation sits within the margin of a kink
  double max_rel_error = 0.0;
};

struct GradCheckOptions {
  std::size_t probes = 5;
  double step = 1e-6;
  double kink_margin = 1e-3;
  double denominator_floor = 1e-4;
  std::uint64_t seed = 0;
};

/// Central differences on randomly chosen trainable coordinates.
/// rel = |numeric - analytic| / max(|analytic|, |numeric|, floor).
GradCheckResult gradient_check(const UnrolledModel& model, std::span<const Example> batch, const LossSpec& spec,
                               const GradCheckOptions& opt);

/// Smallest distance of any pre-activation to its activation kink over the batch.
double kink_distance(const UnrolledModel& model, std::span<const Example> batch);

}  // namespace invnet
