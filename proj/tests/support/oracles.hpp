#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the solver paths it is used to check.

#include <complex>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "invnet/signal_grid.hpp"

namespace oracle {

using Complex = std::complex<double>;

Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n);
Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols);
invnet::SignalGrid random_grid(std::mt19937_64& rng, const invnet::Shape& shape);

/// Naive O(n^2) DFT over a rank-1 or rank-2 grid, no normalization.
std::vector<Complex> dft(const std::vector<double>& x, const invnet::Shape& shape);

/// Circular convolution matrix built straight from the definition
/// y[r,c] = sum_{a,b} k[a,b] x[(r-a+cr) mod R, (c-b+cc) mod C].
Eigen::MatrixXd circular_conv_matrix(const invnet::SignalGrid& kernel, const invnet::Shape& image_shape);
Eigen::MatrixXd zero_pad_conv_matrix(const invnet::SignalGrid& kernel, const invnet::Shape& image_shape);

/// DFT of the circularly embedded, centered kernel (impulse response at the origin).
std::vector<Complex> kernel_transfer(const invnet::SignalGrid& kernel, const invnet::Shape& image_shape);

/// Dense normal-equations solution of min |g - Hf|^2 + lambda |D f|^2 via
/// explicit inverse.
Eigen::VectorXd normal_equations(const Eigen::MatrixXd& h, const Eigen::MatrixXd& d,
                                 const Eigen::VectorXd& g, double lambda);

/// Exact minimum of 0.5 |g - H f|^2 + lambda |f|_1 over supports of size <= max_support,
/// by enumerating support and sign patterns and solving the resulting
/// equality-constrained quadratic; only KKT-consistent candidates are kept.
double l1_min_by_sign_enumeration(const Eigen::MatrixXd& h, const Eigen::VectorXd& g, double lambda,
                                  int max_support, Eigen::VectorXd* argmin = nullptr);

double rel_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace oracle

namespace oracle {

/// 6x8 l1 recovery instance whose global optimum has support <= 3, so the
/// sign-pattern enumeration is exact. Draws are repeated until the KKT
/// conditions certify the enumerated point.
struct SparseRecovery {
  Eigen::MatrixXd h;
  Eigen::VectorXd g;
  double lambda = 0.0;
  double optimum = 0.0;
  Eigen::VectorXd argmin;
  int draws = 0;
};

SparseRecovery certified_sparse_recovery(std::mt19937_64& rng, double lambda = 0.15);

}  // namespace oracle
