#include "invnet/training.hpp"

#include <set>
#include <sstream>

#include <json.hpp>

namespace invnet {

Dataset make_dataset(std::vector<Example> pairs, std::size_t train_count, std::uint64_t seed) {
  if (train_count > pairs.size()) throw ConfigError("train split larger than the dataset");
  Dataset d;
  d.seed = seed;
  std::vector<std::size_t> idx(pairs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  d.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(train_count));
  d.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(train_count), idx.end());
  d.pairs = std::move(pairs);
  validate(d);
  return d;
}

void validate(const Dataset& data) {
  if (data.pairs.empty()) throw ConfigError("dataset is empty");
  for (const auto& p : data.pairs) {
    require_shape(data.pairs[0].g.shape(), p.g.shape(), "dataset observation");
    require_shape(data.pairs[0].f.shape(), p.f.shape(), "dataset ground truth");
  }
  std::set<std::size_t> seen;
  for (const auto* split : {&data.train, &data.test}) {
    for (std::size_t i : *split) {
      if (i >= data.pairs.size()) throw ConfigError("split index out of range");
      if (!seen.insert(i).second) throw ConfigError("train and test splits overlap");
    }
  }
  if (seen.size() != data.pairs.size()) throw ConfigError("splits do not cover the dataset");
}

std::vector<Example> select(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<Example> out;
  for (std::size_t i : idx) out.push_back(data.pairs.at(i));
  return out;
}

std::string to_string(Optimizer o) { return o == Optimizer::PlainSgd ? "plain_sgd" : "momentum_sgd"; }

Optimizer optimizer_from_string(const std::string& name) {
  if (name == "plain_sgd") return Optimizer::PlainSgd;
  if (name == "momentum_sgd") return Optimizer::MomentumSgd;
  throw ConfigError("unknown optimizer '" + name + "' (expected plain_sgd or momentum_sgd)");
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw ConfigError("learning_rate must be finite and >= 0");
  }
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be >= 1");
}

std::string describe(const TrainConfig& cfg, const LossSpec& spec) {
  std::ostringstream os;
  os.precision(17);
  os << "optimizer = " << to_string(cfg.optimizer) << "\n"
     << "learning_rate = " << cfg.learning_rate << "\n"
     << "momentum = " << cfg.momentum << "\n"
     << "epochs = " << cfg.epochs << "\n"
     << "batch_size = " << cfg.batch_size << "\n"
     << "seed = " << cfg.seed << "\n"
     << "shuffle = " << (cfg.shuffle ? "true" : "false") << "\n"
     << "weight_decay = " << spec.weight_decay << "\n";
  return os.str();
}

double batch_loss(const UnrolledModel& model, const std::vector<Example>& pool, std::span<const std::size_t> idx,
                  const LossSpec& spec, std::vector<double>* grad) {
  if (idx.empty()) throw ConfigError("loss needs a nonempty batch");
  if (!(spec.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (grad && trainable_parameter_count(model) == 0) throw ConfigError("the model has no trainable parameters");

  double total = 0.0;
  ParamGradient acc;
  for (std::size_t i : idx) {
    const Example& ex = pool.at(i);
    require_shape(model.output_shape, ex.f.shape(), "training target");
    if (!grad) {
      total += (predict(model, ex.g) - ex.f).squared_norm();
      continue;
    }
    const ForwardResult fr = forward(model, ex.g);
    SignalGrid r = fr.output - ex.f;
    total += r.squared_norm();
    r *= 2.0;
    ParamGradient pg = backward(model, ex.g, fr, r);
    if (acc.blocks.empty()) {
      acc = std::move(pg);
    } else {
      for (std::size_t b = 0; b < acc.blocks.size(); ++b)
        for (std::size_t j = 0; j < acc.blocks[b].size(); ++j) acc.blocks[b][j] += pg.blocks[b][j];
    }
  }
  const std::vector<double> params = trainable_values(model);
  double decay = 0.0;
  for (double p : params) decay += p * p;
  total += spec.weight_decay * decay;
  if (grad) {
    *grad = flatten(model, acc);
    for (std::size_t j = 0; j < params.size(); ++j) (*grad)[j] += 2.0 * spec.weight_decay * params[j];
  }
  return total;
}

namespace {
std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}
}  // namespace

double loss(const UnrolledModel& model, std::span<const Example> batch, const LossSpec& spec) {
  const std::vector<Example> pool(batch.begin(), batch.end());
  return batch_loss(model, pool, all_indices(pool.size()), spec, nullptr);
}

ParamGradient grad(const UnrolledModel& model, std::span<const Example> batch, const LossSpec& spec) {
  const std::vector<Example> pool(batch.begin(), batch.end());
  std::vector<double> flat;
  batch_loss(model, pool, all_indices(pool.size()), spec, &flat);
  ParamGradient out;
  out.blocks.resize(model.blocks.size());
  std::size_t at = 0;
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    if (!model.blocks[b].trainable) continue;
    out.blocks[b].assign(flat.begin() + static_cast<std::ptrdiff_t>(at),
                         flat.begin() + static_cast<std::ptrdiff_t>(at + model.blocks[b].size()));
    at += model.blocks[b].size();
  }
  return out;
}

ExampleMetrics image_metrics(const SignalGrid& estimate, const SignalGrid& truth) {
  require_shape(truth.shape(), estimate.shape(), "metric estimate");
  ExampleMetrics m;
  m.mse = (estimate - truth).squared_norm() / static_cast<double>(truth.size());
  const double peak = truth.max_abs();
  m.psnr = m.mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(peak * peak / m.mse);
  return m;
}

MetricReport aggregate(std::vector<ExampleMetrics> per_example) {
  MetricReport r;
  r.per_example = std::move(per_example);
  if (r.per_example.empty()) return r;
  for (const auto& e : r.per_example) {
    r.mse += e.mse;
    r.psnr += e.psnr;
  }
  r.mse /= static_cast<double>(r.per_example.size());
  r.psnr /= static_cast<double>(r.per_example.size());
  return r;
}

std::string train_report(const std::string& config_echo, const EpochLoss& initial,
                         const std::vector<EpochLoss>& history, std::size_t best_epoch,
                         const MetricReport* final_metrics) {
  nlohmann::json j;
  j["format"] = "invnet-train-report";
  j["version"] = 1;
  j["config"] = config_echo;
  j["initial"] = {{"train", initial.train}, {"test", initial.test}};
  nlohmann::json epochs = nlohmann::json::array();
  for (std::size_t e = 0; e < history.size(); ++e)
    epochs.push_back({{"epoch", e + 1}, {"train", history[e].train}, {"test", history[e].test}});
  j["epochs"] = epochs;
  j["best_epoch"] = best_epoch;
  if (final_metrics) {
    j["test_mse"] = final_metrics->mse;
    // JSON has no infinity; a perfect reconstruction reports null
    j["test_psnr"] = std::isfinite(final_metrics->psnr) ? nlohmann::json(final_metrics->psnr) : nlohmann::json(nullptr);
  }
  return j.dump(2) + "\n";
}

double kink_distance(const UnrolledModel& model, std::span<const Example> batch) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& ex : batch) {
    const ForwardResult fr = forward(model, ex.g);
    for (std::size_t k = 0; k < model.depth(); ++k) {
      const Activation a = model.layers[k].activation;
      if (a == Activation::Identity) continue;
      const double theta = layer_theta(model, k);
      for (double z : fr.layers[k].pre_activation.data()) {
        const double d = a == Activation::SoftThreshold ? std::abs(std::abs(z) - theta) : std::abs(z - theta);
        best = std::min(best, d);
      }
    }
  }
  return best;
}

GradCheckResult gradient_check(const UnrolledModel& model, std::span<const Example> batch, const LossSpec& spec,
                               const GradCheckOptions& opt) {
  GradCheckResult res;
  if (kink_distance(model, batch) < opt.kink_margin) {
    res.near_kink = true;
    return res;
  }
  const std::vector<Example> pool(batch.begin(), batch.end());
  const auto idx = all_indices(pool.size());
  std::vector<double> analytic;
  batch_loss(model, pool, idx, spec, &analytic);
  const std::vector<double> base = trainable_values(model);

  std::mt19937_64 rng(opt.seed);
  std::uniform_int_distribution<std::size_t> pick(0, base.size() - 1);
  UnrolledModel probe = model;
  for (std::size_t p = 0; p < opt.probes; ++p) {
    const std::size_t c = pick(rng);
    std::vector<double> v = base;
    v[c] = base[c] + opt.step;
    set_trainable_values(probe, v);
    const double up = batch_loss(probe, pool, idx, spec, nullptr);
    v[c] = base[c] - opt.step;
    set_trainable_values(probe, v);
    const double down = batch_loss(probe, pool, idx, spec, nullptr);
    GradProbe gp;
    gp.coordinate = c;
    gp.analytic = analytic[c];
    gp.numeric = (up - down) / (2.0 * opt.step);
    gp.rel_error = std::abs(gp.numeric - gp.analytic) /
                   std::max({std::abs(gp.analytic), std::abs(gp.numeric), opt.denominator_floor});
    res.max_rel_error = std::max(res.max_rel_error, gp.rel_error);
    res.probes.push_back(gp);
  }
  return res;
}

}  // namespace invnet
