#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "invnet/signal_grid.hpp"

namespace invnet {

enum class OpKind {
  Dense,
  Conv2D,
  Radon,
  Identity,
  Diagonal,
  Scaled,
  Sum,
  Composed,
  AdjointOf,
  Downsample,
};

enum class Boundary { Circular, ZeroPad };

std::string to_string(OpKind kind);
std::string to_string(Boundary boundary);
Boundary boundary_from_string(const std::string& name);

/// Convolution payload. Rank-1 images are stored as a single row.
struct ConvPayload {
  SignalGrid kernel;
  Shape image_shape;
  Boundary boundary = Boundary::Circular;
};

struct RadonPayload {
  std::size_t image_side = 0;
  std::vector<double> angles;
  std::size_t detectors = 0;
};

namespace detail {
class OpNode;
}

/// Immutable linear operator with an exact adjoint. Cheap to copy; copies
/// share the same underlying node.
class LinearOp {
 public:
  LinearOp() = default;

  OpKind kind() const;
  const Shape& domain_shape() const;
  const Shape& codomain_shape() const;
  std::size_t domain_size() const { return shape_size(domain_shape()); }
  std::size_t codomain_size() const { return shape_size(codomain_shape()); }

  SignalGrid apply(const SignalGrid& x) const;
  SignalGrid adjoint_apply(const SignalGrid& y) const;

  /// Unchecked raw forms; `out` is overwritten.
  void apply_into(std::span<const double> in, std::span<double> out) const;
  void adjoint_into(std::span<const double> in, std::span<double> out) const;

  std::string describe() const;

  /// Children of Scaled, Sum, Composed (outer first) and AdjointOf.
  const std::vector<LinearOp>& children() const;
  /// Factor of a Scaled operator; 1 for every other kind.
  double scale() const;
  /// Row-major matrix of a Dense operator.
  const Eigen::MatrixXd* dense_matrix() const;
  const std::vector<double>* diagonal_gains() const;
  const ConvPayload* conv() const;
  const RadonPayload* radon() const;

  bool valid() const noexcept { return node_ != nullptr; }
  /// True when both handles share one node.
  bool same_node(const LinearOp& other) const noexcept { return node_ == other.node_; }
  const void* node_id() const noexcept { return node_.get(); }

  explicit LinearOp(std::shared_ptr<const detail::OpNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<const detail::OpNode> node_;
};

SignalGrid apply(const LinearOp& op, const SignalGrid& x);
SignalGrid adjoint_apply(const LinearOp& op, const SignalGrid& y);

LinearOp make_identity(const Shape& shape);
LinearOp make_diagonal(std::vector<double> gains, Shape shape = {});
/// `matrix` maps vectors of domain_size to codomain_size. Shapes default to
/// rank-1 extents of the matrix.
LinearOp make_dense(Eigen::MatrixXd matrix, Shape domain_shape = {}, Shape codomain_shape = {});
LinearOp make_conv2d(const SignalGrid& kernel, const Shape& image_shape,
                     Boundary boundary = Boundary::Circular);
/// Parallel-beam projector on a square image of unit pixels centered at the
/// origin. Detector bins have unit spacing and are centered on the origin;
/// angle 0 integrates along image columns. Weights are exact pixel-ray
/// intersection lengths. Sinogram shape is [angles, detectors].
LinearOp make_radon(const Shape& image_shape, std::vector<double> angles, std::size_t detectors);
/// Block averaging by `factor` along every axis.
LinearOp make_downsample(const Shape& image_shape, std::size_t factor);

LinearOp scaled(const LinearOp& op, double factor);
LinearOp sum(std::vector<LinearOp> terms);
/// outer ∘ inner
LinearOp compose(const LinearOp& outer, const LinearOp& inner);
LinearOp adjoint_of(const LinearOp& op);
/// H^t H as Composed(adjoint, op).
LinearOp gram(const LinearOp& op);

/// Evenly spaced angles in [0, pi).
std::vector<double> uniform_angles(std::size_t count);

/// Power-iteration estimate of the largest eigenvalue of gram(op), starting
/// from a seeded random vector. The Rayleigh quotient of a positive
/// semidefinite operator is nondecreasing along the iteration.
double estimate_spectral_norm(const LinearOp& op, std::size_t iterations, std::uint64_t seed);

/// Dense matrix with column j equal to apply(e_j).
Eigen::MatrixXd materialize(const LinearOp& op);
Eigen::MatrixXd materialize_adjoint(const LinearOp& op);

/// True if `op` is a circular convolution on its domain (identity, circular
/// Conv2D and scaled/summed/composed/adjoint combinations thereof).
bool is_circular_shift_invariant(const LinearOp& op);
/// Odd per-axis extent of the smallest centered kernel that represents a
/// circular shift-invariant `op`. Empty if not shift invariant.
Shape circular_kernel_extent(const LinearOp& op);
/// Centered kernel of the given odd extent reproducing a circular
/// shift-invariant operator.
SignalGrid extract_circular_kernel(const LinearOp& op, const Shape& extent);

}  // namespace invnet
