#pragma once

#include <cstdint>
#include <string>

#include "invnet/operators.hpp"
#include "invnet/training.hpp"

namespace invnet {

enum class SignalClass { PiecewiseConstant, Sparse };
std::string to_string(SignalClass c);
SignalClass signal_class_from_string(const std::string& name);

/// Seeded 1-D deconvolution benchmark: signals of length n blurred by a
/// circular sampled Gaussian and corrupted by white Gaussian noise.
struct DeconvDataSpec {
  std::size_t n = 32;
  std::size_t count = 60;
  std::size_t train = 50;
  double noise_sigma = 0.02;
  std::size_t blur_extent = 7;
  double blur_sigma = 1.5;
  SignalClass signal = SignalClass::PiecewiseConstant;
  std::size_t min_run = 3;   ///< piecewise: segment lengths drawn from [min_run, max_run]
  std::size_t max_run = 10;
  std::size_t spikes = 4;    ///< sparse: nonzeros per signal
  std::uint64_t seed = 0;
};

void validate(const DeconvDataSpec& spec);
LinearOp deconv_operator(const DeconvDataSpec& spec);
/// Piecewise signals take levels in [0, 1]; sparse spikes lie in [-1, 1].
SignalGrid draw_signal(const DeconvDataSpec& spec, std::mt19937_64& rng);
Dataset make_deconv_dataset(const DeconvDataSpec& spec);

}  // namespace invnet
