#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "invnet/operators.hpp"

namespace invnet {

/// How a missing step size is derived from L = largest eigenvalue of the
/// normal operator.
enum class StepRule {
  InverseLipschitz,   ///< alpha = safety / L
  LiteralEigenvalue,  ///< alpha = safety * L, the bound read literally
};

struct IterConfig {
  std::optional<double> alpha;  ///< step size; derived from step_rule when unset
  double lambda = 0.0;
  std::size_t max_iters = 100;
  bool record_trajectory = true;
  std::optional<LinearOp> reg_op;  ///< D for the quadratic-regularized scheme
  StepRule step_rule = StepRule::InverseLipschitz;
  double safety = 0.99;
  std::size_t power_iterations = 300;
  std::uint64_t power_seed = 0x5eed;
  /// Abort when the objective exceeds this multiple of its initial value.
  double divergence_factor = 1e6;
};

/// Iterates f^(0..K) and their objective values. With record_trajectory off
/// only f^(0) and f^(K) are kept.
struct Trajectory {
  std::vector<SignalGrid> iterates;
  std::vector<double> objective;
  double alpha = 0.0;

  const SignalGrid& final() const { return iterates.back(); }
};

SignalGrid soft_threshold(const SignalGrid& x, double theta);
double soft_threshold(double x, double theta);

/// Step size used by the solvers for `cfg` (largest eigenvalue of
/// H^t H + lambda D^t D when reg_op is set).
double resolve_step(const LinearOp& h, const IterConfig& cfg);

/// 0.5 |g - H f|^2
double data_objective(const LinearOp& h, const SignalGrid& g, const SignalGrid& f);
/// 0.5 |g - H f|^2 + 0.5 lambda |D f|^2
double quadratic_objective(const LinearOp& h, const LinearOp& d, const SignalGrid& g,
                           const SignalGrid& f, double lambda);
/// 0.5 |g - H f|^2 + lambda |f|_1
double l1_objective(const LinearOp& h, const SignalGrid& g, const SignalGrid& f, double lambda);

/// f^(k+1) = alpha H^t g + (I - alpha H^t H) f^(k)
Trajectory gd_run(const LinearOp& h, const SignalGrid& g, const IterConfig& cfg,
                  std::optional<SignalGrid> f0 = std::nullopt);
/// f^(k+1) = alpha H^t g + (I - alpha H^t H - alpha lambda D^t D) f^(k)
Trajectory gd_regularized_run(const LinearOp& h, const SignalGrid& g, const IterConfig& cfg,
                              std::optional<SignalGrid> f0 = std::nullopt);
/// f^(k+1) = S_{lambda alpha}(alpha H^t g + (I - alpha H^t H) f^(k))
Trajectory ista_run(const LinearOp& h, const SignalGrid& g, const IterConfig& cfg,
                    std::optional<SignalGrid> f0 = std::nullopt);
/// ISTA with the t_k momentum sequence; iterates are the prox points x_k.
Trajectory fista_run(const LinearOp& h, const SignalGrid& g, const IterConfig& cfg,
                     std::optional<SignalGrid> f0 = std::nullopt);

SignalGrid ista_step(const LinearOp& h, const SignalGrid& g, const SignalGrid& f, double alpha, double lambda);

/// t_1 = 1, t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2
double fista_momentum(std::size_t k);

struct DenoiseResult {
  SignalGrid coefficients;  ///< z_hat = S_threshold(D^t g)
  SignalGrid restored;      ///< f_hat = D z_hat
};

/// Analysis, threshold, synthesis. Exact l1 denoiser when D is orthonormal.
DenoiseResult l1_denoise(const LinearOp& d, const SignalGrid& g, double threshold);

}  // namespace invnet
