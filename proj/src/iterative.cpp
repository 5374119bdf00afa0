#include "invnet/iterative.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "invnet/errors.hpp"

namespace invnet {

double soft_threshold(double x, double theta) {
  if (x > theta) return x - theta;
  if (x < -theta) return x + theta;
  return 0.0;
}

SignalGrid soft_threshold(const SignalGrid& x, double theta) {
  if (!(theta >= 0.0)) throw ConfigError("soft threshold needs theta >= 0, got " + std::to_string(theta));
  SignalGrid out = x;
  for (double& v : out.data()) v = soft_threshold(v, theta);
  return out;
}

double resolve_step(const LinearOp& h, const IterConfig& cfg) {
  if (cfg.alpha) {
    if (!(*cfg.alpha > 0.0) || !std::isfinite(*cfg.alpha)) {
      throw ConfigError("step size alpha must be positive, got " + std::to_string(*cfg.alpha));
    }
    return *cfg.alpha;
  }
  double lipschitz = 0.0;
  if (cfg.reg_op && cfg.lambda > 0.0) {
    // largest eigenvalue of the PSD operator M = H^t H + lambda D^t D is sqrt(eig_max(M^t M))
    const LinearOp normal = sum({gram(h), scaled(gram(*cfg.reg_op), cfg.lambda)});
    lipschitz = std::sqrt(estimate_spectral_norm(normal, cfg.power_iterations, cfg.power_seed));
  } else {
    lipschitz = estimate_spectral_norm(h, cfg.power_iterations, cfg.power_seed);
  }
  if (!(lipschitz > 0.0)) throw ConfigError("cannot derive a step size for a zero operator");
  return cfg.step_rule == StepRule::InverseLipschitz ? cfg.safety / lipschitz : cfg.safety * lipschitz;
}

double data_objective(const LinearOp& h, const SignalGrid& g, const SignalGrid& f) {
  return 0.5 * (g - h.apply(f)).squared_norm();
}

double quadratic_objective(const LinearOp& h, const LinearOp& d, const SignalGrid& g, const SignalGrid& f,
                           double lambda) {
  return data_objective(h, g, f) + 0.5 * lambda * d.apply(f).squared_norm();
}

double l1_objective(const LinearOp& h, const SignalGrid& g, const SignalGrid& f, double lambda) {
  return data_objective(h, g, f) + lambda * f.l1_norm();
}

namespace {

enum class Scheme { Gd, GdReg, Ista, Fista };

void validate(const LinearOp& h, const SignalGrid& g, const IterConfig& cfg, const std::optional<SignalGrid>& f0) {
  require_shape(h.codomain_shape(), g.shape(), "iterative solver data");
  if (f0) require_shape(h.domain_shape(), f0->shape(), "iterative solver initial guess");
  if (cfg.max_iters == 0) throw ConfigError("max_iters must be >= 1");
  if (!(cfg.lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (cfg.reg_op) require_shape(h.domain_shape(), cfg.reg_op->domain_shape(), "regularization operator domain");
}

class Recorder {
 public:
  Recorder(const IterConfig& cfg, double alpha, const char* name) : cfg_(cfg), name_(name) { out_.alpha = alpha; }

  void push(SignalGrid f, double objective, std::size_t k) {
    if (!std::isfinite(objective)) fail(k);
    if (out_.objective.empty()) {
      initial_ = std::max(objective, std::numeric_limits<double>::min());
    } else if (objective > cfg_.divergence_factor * initial_) {
      fail(k);
    }
    if (cfg_.record_trajectory || out_.iterates.empty() || k == cfg_.max_iters) {
      out_.iterates.push_back(std::move(f));
      out_.objective.push_back(objective);
    }
  }

  Trajectory take() { return std::move(out_); }

 private:
  [[noreturn]] void fail(std::size_t k) const {
    throw DivergenceError(std::string(name_) + " diverged at iteration " + std::to_string(k) +
                          " (objective grew beyond " + std::to_string(cfg_.divergence_factor) +
                          "x its initial value); reduce the step size alpha");
  }
  const IterConfig& cfg_;
  const char* name_;
  Trajectory out_;
  double initial_ = 0.0;
};

Trajectory run(Scheme scheme, const LinearOp& h, const SignalGrid& g, const IterConfig& cfg,
               std::optional<SignalGrid> f0) {
  validate(h, g, cfg, f0);
  if (scheme == Scheme::GdReg && !cfg.reg_op) {
    throw ConfigError("the regularized gradient scheme needs a regularization operator D");
  }
  const double alpha = resolve_step(h, cfg);
  const double lambda = cfg.lambda;
  const LinearOp* d = cfg.reg_op ? &*cfg.reg_op : nullptr;

  auto objective = [&](const SignalGrid& f) {
    switch (scheme) {
      case Scheme::Gd: return data_objective(h, g, f);
      case Scheme::GdReg: return quadratic_objective(h, *d, g, f, lambda);
      default: return l1_objective(h, g, f, lambda);
    }
  };

  // alpha H^t g, the constant bias term
  SignalGrid bias = h.adjoint_apply(g);
  bias *= alpha;

  // alpha H^t g + (I - alpha H^t H [- alpha lambda D^t D]) x
  auto affine = [&](const SignalGrid& x) {
    SignalGrid normal = h.adjoint_apply(h.apply(x));
    if (scheme == Scheme::GdReg && lambda != 0.0) {
      SignalGrid reg = d->adjoint_apply(d->apply(x));
      reg *= lambda;
      normal += reg;
    }
    normal *= alpha;
    SignalGrid out = bias;
    out += x;
    out -= normal;
    return out;
  };

  const char* name = scheme == Scheme::Gd      ? "gradient descent"
                     : scheme == Scheme::GdReg ? "regularized gradient descent"
                     : scheme == Scheme::Ista  ? "ISTA"
                                               : "FISTA";
  Recorder rec(cfg, alpha, name);
  SignalGrid f = f0 ? *f0 : SignalGrid(h.domain_shape());
  rec.push(f, objective(f), 0);

  const double theta = lambda * alpha;
  if (scheme == Scheme::Fista) {
    SignalGrid y = f;
    double t = 1.0;
    for (std::size_t k = 1; k <= cfg.max_iters; ++k) {
      SignalGrid next = soft_threshold(affine(y), theta);
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      SignalGrid step = next - f;
      step *= (t - 1.0) / t_next;
      y = next + step;
      f = std::move(next);
      t = t_next;
      rec.push(f, objective(f), k);
    }
    return rec.take();
  }

  for (std::size_t k = 1; k <= cfg.max_iters; ++k) {
    f = affine(f);
    if (scheme == Scheme::Ista) f = soft_threshold(f, theta);
    rec.push(f, objective(f), k);
  }
  return rec.take();
}

}  // namespace

Trajectory gd_run(const LinearOp& h, const SignalGrid& g, const IterConfig& cfg, std::optional<SignalGrid> f0) {
  return run(Scheme::Gd, h, g, cfg, std::move(f0));
}

Trajectory gd_regularized_run(const LinearOp& h, const SignalGrid& g, const IterConfig& cfg,
                              std::optional<SignalGrid> f0) {
  return run(Scheme::GdReg, h, g, cfg, std::move(f0));
}

Trajectory ista_run(const LinearOp& h, const SignalGrid& g, const IterConfig& cfg, std::optional<SignalGrid> f0) {
  return run(Scheme::Ista, h, g, cfg, std::move(f0));
}

Trajectory fista_run(const LinearOp& h, const SignalGrid& g, const IterConfig& cfg, std::optional<SignalGrid> f0) {
  return run(Scheme::Fista, h, g, cfg, std::move(f0));
}

SignalGrid ista_step(const LinearOp& h, const SignalGrid& g, const SignalGrid& f, double alpha, double lambda) {
  SignalGrid grad = h.adjoint_apply(h.apply(f) - g);
  grad *= alpha;
  return soft_threshold(f - grad, lambda * alpha);
}

double fista_momentum(std::size_t k) {
  if (k == 0) throw ConfigError("momentum sequence starts at k = 1");
  double t = 1.0;
  for (std::size_t i = 1; i < k; ++i) t = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
  return t;
}

DenoiseResult l1_denoise(const LinearOp& d, const SignalGrid& g, double threshold) {
  require_shape(d.codomain_shape(), g.shape(), "l1_denoise data");
  SignalGrid z = soft_threshold(d.adjoint_apply(g), threshold);
  SignalGrid f = d.apply(z);
  return {std::move(z), std::move(f)};
}

}  // namespace invnet
