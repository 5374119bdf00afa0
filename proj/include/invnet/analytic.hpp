#pragma once

#include <Eigen/Dense>

#include "invnet/operators.hpp"

namespace invnet {

/// Three algebraically equal routes to the quadratic-regularized inverse
///   A   = (H^t H + lambda I)^{-1} H^t
///   BHt = B H^t      with B = (H^t H + lambda I)^{-1}
///   HtC = H^t C / lambda  with C = (H H^t / lambda + I)^{-1}   (lambda > 0 only)
/// The 1/lambda factor is what makes HtC equal to the other two, since
/// (H^t H + lambda I)^{-1} H^t = H^t (H H^t + lambda I)^{-1}.
enum class TikhonovVariant { A, BHt, HtC };

struct TikhonovForm {
  TikhonovVariant variant = TikhonovVariant::A;
  double lambda = 0.0;
};

enum class PseudoInverseSide { Left, Right };

/// Minimizer of |g - H f|^2 + lambda |f|^2 by dense factorization.
SignalGrid tikhonov_solve(const LinearOp& h, const SignalGrid& g, const TikhonovForm& form);

/// Minimizer of |g - H f|^2 + lambda |D f|^2.
SignalGrid tikhonov_generalized(const LinearOp& h, const LinearOp& d, const SignalGrid& g, double lambda);

/// Left: (H^t H)^{-1} H^t g (least squares). Right: H^t (H H^t)^{-1} g (minimum norm).
SignalGrid pseudo_inverse_solve(const LinearOp& h, const SignalGrid& g, PseudoInverseSide side);

/// B = (H^t H + lambda I)^{-1}, the filtering stage that follows back-projection.
Eigen::MatrixXd tikhonov_filter_matrix(const LinearOp& h, double lambda);

/// Full dense reconstruction matrix of the chosen variant (domain x codomain).
Eigen::MatrixXd tikhonov_matrix(const LinearOp& h, const TikhonovForm& form);

/// Largest materialized domain the dense path accepts.
inline constexpr std::size_t kMaxDenseDomain = 4096;

}  // namespace invnet
