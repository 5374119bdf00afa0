#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "invnet/operators.hpp"
#include "invnet/training.hpp"
#include "invnet/unrolled.hpp"

namespace invnet {

using Complex = std::complex<double>;

/// Which symmetric gram is decomposed: H H^t (codomain side) or H^t H (domain side).
enum class GramSide { Range, Domain };

/// gram = U diag(delta) V^t with U == V (symmetric eigendecomposition),
/// delta sorted nonincreasing and clamped at 0.
struct SvdFactors {
  Eigen::MatrixXd u;
  Eigen::VectorXd delta;
  Eigen::MatrixXd v;
  std::string source;
};

SvdFactors svd_decompose(const LinearOp& h, GramSide side = GramSide::Range);

/// Unitary DFT (1/sqrt(N) both ways) over a rank-1 or rank-2 shape.
std::vector<Complex> unitary_dft(std::span<const Complex> x, const Shape& shape, bool inverse);
/// Transfer function (unnormalized DFT of the impulse response) of a circular
/// shift-invariant operator. Throws ConfigError otherwise.
std::vector<Complex> transfer_function(const LinearOp& h);

enum class SpectralMode { Svd, Fourier };
std::string to_string(SpectralMode m);
SpectralMode spectral_mode_from_string(const std::string& name);

/// forward(g) = synthesis(filter * analysis(H^t g)). Only the filter is
/// trainable. Fourier filters keep filter(-w) == conj(filter(w)).
struct SpectralModel {
  SpectralMode mode = SpectralMode::Fourier;
  LinearOp adjoint_stage;
  Shape input_shape;
  Shape output_shape;
  Eigen::MatrixXd basis;         ///< svd: orthonormal eigenvectors of H^t H as columns
  std::vector<double> spectrum;  ///< svd: eigenvalues; fourier: |h_hat|^2
  std::vector<double> filter_re;
  std::vector<double> filter_im;  ///< fourier only
  std::string psf_hash;
};

SpectralModel build_spectral_model(const LinearOp& h, SpectralMode mode);

SignalGrid predict(const SpectralModel& model, const SignalGrid& g);
/// Analysis stage alone, applied to a domain-shaped signal.
std::vector<Complex> analysis(const SpectralModel& model, const SignalGrid& x);

/// 1 / (|h_hat|^2 + lambda) per frequency. Composed with the H^t stage this
/// gives (H^t H + lambda I)^-1 H^t; wherever h_hat != 0 it equals
/// |h_hat|^2 / (|h_hat|^2 (|h_hat|^2 + lambda)).
std::vector<double> tikhonov_spectrum(const LinearOp& h, double lambda);
/// Same closed form on the spectrum stored in the model (either mode).
std::vector<double> tikhonov_filter(const SpectralModel& model, double lambda);
/// Real filter; throws DimensionError on a size mismatch.
void set_filter(SpectralModel& model, std::span<const double> values);
/// Complex filter, checked for conjugate symmetry in fourier mode.
void set_filter(SpectralModel& model, std::span<const Complex> values);

std::vector<CensusEntry> parameter_census(const SpectralModel& model);
std::vector<double> trainable_values(const SpectralModel& model);
void set_trainable_values(SpectralModel& model, std::span<const double> values);
double batch_loss(const SpectralModel& model, const std::vector<Example>& pool, std::span<const std::size_t> idx,
                  const LossSpec& spec, std::vector<double>* grad);

std::string serialize_spectral(const SpectralModel& model);
SpectralModel deserialize_spectral(std::string_view text);

enum class BInit { Tikhonov, Identity };

struct TwoStageOptions {
  BInit init = BInit::Tikhonov;
  double lambda = 0.1;
  Activation activation = Activation::Identity;
  /// When set, B is a circular kernel of this extent (identity init only).
  std::optional<Shape> kernel_extent;
};

/// One-layer model f = phi(B H^t g) with H^t fixed and B trainable.
UnrolledModel fixed_plus_trainable(const LinearOp& h, const TwoStageOptions& opt);

}  // namespace invnet
