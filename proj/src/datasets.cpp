#include "invnet/datasets.hpp"

#include <cmath>
#include <random>

#include "invnet/errors.hpp"

namespace invnet {

std::string to_string(SignalClass c) { return c == SignalClass::PiecewiseConstant ? "piecewise" : "sparse"; }

SignalClass signal_class_from_string(const std::string& name) {
  if (name == "piecewise") return SignalClass::PiecewiseConstant;
  if (name == "sparse") return SignalClass::Sparse;
  throw ConfigError("unknown signal class '" + name + "'");
}

void validate(const DeconvDataSpec& spec) {
  if (spec.n == 0) throw ConfigError("signal length must be positive");
  if (spec.count == 0) throw ConfigError("dataset needs at least one pair");
  if (spec.train > spec.count) throw ConfigError("train count exceeds pair count");
  if (!(spec.noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be nonnegative");
  if (spec.blur_extent % 2 == 0 || spec.blur_extent > spec.n) throw ConfigError("blur extent must be odd and <= n");
  if (!(spec.blur_sigma > 0.0)) throw ConfigError("blur sigma must be positive");
  if (spec.min_run == 0 || spec.min_run > spec.max_run) throw ConfigError("bad run-length range");
  if (spec.spikes > spec.n) throw ConfigError("more spikes than samples");
}

LinearOp deconv_operator(const DeconvDataSpec& spec) {
  validate(spec);
  SignalGrid k({spec.blur_extent});
  const double c = static_cast<double>(spec.blur_extent / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < spec.blur_extent; ++i) {
    double d = static_cast<double>(i) - c;
    k[i] = std::exp(-0.5 * d * d / (spec.blur_sigma * spec.blur_sigma));
    total += k[i];
  }
  k *= 1.0 / total;
  return make_conv2d(k, {spec.n});
}

SignalGrid draw_signal(const DeconvDataSpec& spec, std::mt19937_64& rng) {
  SignalGrid f({spec.n});
  std::uniform_real_distribution<double> level(0.0, 1.0);
  if (spec.signal == SignalClass::PiecewiseConstant) {
    std::uniform_int_distribution<std::size_t> run(spec.min_run, spec.max_run);
    for (std::size_t j = 0; j < spec.n;) {
      const double v = level(rng);
      for (std::size_t t = run(rng); t > 0 && j < spec.n; --t) f[j++] = v;
    }
  } else {
    std::vector<std::size_t> pos(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) pos[i] = i;
    std::shuffle(pos.begin(), pos.end(), rng);
    for (std::size_t t = 0; t < spec.spikes; ++t) f[pos[t]] = 2.0 * level(rng) - 1.0;
  }
  return f;
}

Dataset make_deconv_dataset(const DeconvDataSpec& spec) {
  LinearOp h = deconv_operator(spec);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  std::vector<Example> pairs;
  pairs.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    SignalGrid f = draw_signal(spec, rng);
    SignalGrid g = apply(h, f);
    if (spec.noise_sigma > 0.0)
      for (double& x : g.data()) x += noise(rng);
    pairs.push_back({std::move(g), std::move(f)});
  }
  return make_dataset(std::move(pairs), spec.train, spec.seed ^ 0x9e3779b97f4a7c15ULL);
}

}  // namespace invnet
