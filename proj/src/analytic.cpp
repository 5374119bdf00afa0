#include "invnet/analytic.hpp"

#include <cmath>
#include <string>

#include "invnet/errors.hpp"

namespace invnet {

namespace {

constexpr double kMinRcond = 1e-13;

Eigen::MatrixXd dense_of(const LinearOp& op, const char* what) {
  if (op.domain_size() > kMaxDenseDomain || op.codomain_size() > kMaxDenseDomain) {
    throw ConfigError(std::string(what) + " " + op.describe() + " is too large to materialize (limit " +
                      std::to_string(kMaxDenseDomain) + " elements)");
  }
  if (const auto* m = op.dense_matrix()) return *m;
  return materialize(op);
}

void check_lambda(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ConfigError("regularization weight lambda must be finite and >= 0, got " + std::to_string(lambda));
  }
}

// Cholesky of a symmetric matrix that must be positive definite.
Eigen::LLT<Eigen::MatrixXd> factor_spd(const Eigen::MatrixXd& m, const std::string& name,
                                       const char* hint = "; use lambda > 0") {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success || !(llt.rcond() > kMinRcond)) {
    throw SingularityError(name + " is singular or numerically rank deficient" + hint);
  }
  return llt;
}

}  // namespace

Eigen::MatrixXd tikhonov_filter_matrix(const LinearOp& h, double lambda) {
  check_lambda(lambda);
  const Eigen::MatrixXd hm = dense_of(h, "forward operator");
  Eigen::MatrixXd normal = hm.transpose() * hm;
  normal.diagonal().array() += lambda;
  auto llt = factor_spd(normal, "H^t H + lambda I");
  return llt.solve(Eigen::MatrixXd::Identity(normal.rows(), normal.cols()));
}

Eigen::MatrixXd tikhonov_matrix(const LinearOp& h, const TikhonovForm& form) {
  check_lambda(form.lambda);
  const Eigen::MatrixXd hm = dense_of(h, "forward operator");
  switch (form.variant) {
    case TikhonovVariant::A: {
      Eigen::MatrixXd normal = hm.transpose() * hm;
      normal.diagonal().array() += form.lambda;
      return factor_spd(normal, "H^t H + lambda I").solve(hm.transpose());
    }
    case TikhonovVariant::BHt:
      return tikhonov_filter_matrix(h, form.lambda) * hm.transpose();
    case TikhonovVariant::HtC: {
      if (form.lambda <= 0.0) {
        throw ConfigError("the H^t C form contains 1/lambda and needs lambda > 0; use form A or BHt at lambda = 0");
      }
      Eigen::MatrixXd outer = hm * hm.transpose() / form.lambda;
      outer.diagonal().array() += 1.0;
      const auto llt = factor_spd(outer, "H H^t / lambda + I");
      return hm.transpose() * llt.solve(Eigen::MatrixXd::Identity(outer.rows(), outer.cols())) / form.lambda;
    }
  }
  throw ConfigError("unknown Tikhonov variant");
}

SignalGrid tikhonov_solve(const LinearOp& h, const SignalGrid& g, const TikhonovForm& form) {
  require_shape(h.codomain_shape(), g.shape(), "tikhonov_solve data");
  check_lambda(form.lambda);
  switch (form.variant) {
    case TikhonovVariant::A:
      return SignalGrid::from_vector(h.domain_shape(), tikhonov_matrix(h, form) * g.vec());
    case TikhonovVariant::BHt: {
      const SignalGrid backprojected = h.adjoint_apply(g);
      return SignalGrid::from_vector(h.domain_shape(),
                                     tikhonov_filter_matrix(h, form.lambda) * backprojected.vec());
    }
    case TikhonovVariant::HtC: {
      if (form.lambda <= 0.0) {
        throw ConfigError("the H^t C form contains 1/lambda and needs lambda > 0; use form A or BHt at lambda = 0");
      }
      const Eigen::MatrixXd hm = dense_of(h, "forward operator");
      Eigen::MatrixXd outer = hm * hm.transpose() / form.lambda;
      outer.diagonal().array() += 1.0;
      const Eigen::VectorXd filtered = factor_spd(outer, "H H^t / lambda + I").solve(g.vec()) / form.lambda;
      return h.adjoint_apply(SignalGrid::from_vector(h.codomain_shape(), filtered));
    }
  }
  throw ConfigError("unknown Tikhonov variant");
}

SignalGrid tikhonov_generalized(const LinearOp& h, const LinearOp& d, const SignalGrid& g, double lambda) {
  require_shape(h.domain_shape(), d.domain_shape(), "regularization operator domain");
  require_shape(h.codomain_shape(), g.shape(), "tikhonov_generalized data");
  check_lambda(lambda);
  const Eigen::MatrixXd hm = dense_of(h, "forward operator");
  const Eigen::MatrixXd dm = dense_of(d, "regularization operator");
  const Eigen::MatrixXd normal = hm.transpose() * hm + lambda * (dm.transpose() * dm);
  const auto llt = factor_spd(normal, "H^t H + lambda D^t D");
  return SignalGrid::from_vector(h.domain_shape(), llt.solve(hm.transpose() * g.vec()));
}

SignalGrid pseudo_inverse_solve(const LinearOp& h, const SignalGrid& g, PseudoInverseSide side) {
  require_shape(h.codomain_shape(), g.shape(), "pseudo_inverse_solve data");
  const Eigen::MatrixXd hm = dense_of(h, "forward operator");
  if (side == PseudoInverseSide::Left) {
    const auto llt = factor_spd(hm.transpose() * hm, "H^t H", " (left pseudo-inverse needs full column rank)");
    return SignalGrid::from_vector(h.domain_shape(), llt.solve(hm.transpose() * g.vec()));
  }
  const auto llt = factor_spd(hm * hm.transpose(), "H H^t", " (right pseudo-inverse needs full row rank)");
  return SignalGrid::from_vector(h.domain_shape(), hm.transpose() * llt.solve(g.vec()));
}

}  // namespace invnet
