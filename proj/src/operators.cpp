#include "invnet/operators.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "invnet/conv.hpp"
#include "invnet/errors.hpp"

namespace invnet {

std::string to_string(OpKind kind) {
  switch (kind) {
    case OpKind::Dense: return "dense";
    case OpKind::Conv2D: return "conv2d";
    case OpKind::Radon: return "radon";
    case OpKind::Identity: return "identity";
    case OpKind::Diagonal: return "diagonal";
    case OpKind::Scaled: return "scaled";
    case OpKind::Sum: return "sum";
    case OpKind::Composed: return "composed";
    case OpKind::AdjointOf: return "adjoint";
    case OpKind::Downsample: return "downsample";
  }
  return "unknown";
}

std::string to_string(Boundary boundary) {
  return boundary == Boundary::Circular ? "circular" : "zero-pad";
}

Boundary boundary_from_string(const std::string& name) {
  if (name == "circular") return Boundary::Circular;
  if (name == "zero-pad" || name == "zero_pad" || name == "zeropad") return Boundary::ZeroPad;
  throw ConfigError("unknown boundary mode '" + name + "' (expected circular or zero-pad)");
}

namespace detail {

class OpNode {
 public:
  OpNode(OpKind kind, Shape domain, Shape codomain)
      : kind_(kind), domain_(std::move(domain)), codomain_(std::move(codomain)) {}
  virtual ~OpNode() = default;

  OpKind kind() const { return kind_; }
  const Shape& domain() const { return domain_; }
  const Shape& codomain() const { return codomain_; }

  virtual void apply(std::span<const double> in, std::span<double> out) const = 0;
  virtual void adjoint(std::span<const double> in, std::span<double> out) const = 0;
  virtual std::string describe() const = 0;

  std::vector<LinearOp> children;
  double factor = 1.0;

 private:
  OpKind kind_;
  Shape domain_;
  Shape codomain_;
};

}  // namespace detail

namespace {

using detail::OpNode;

class IdentityNode final : public OpNode {
 public:
  explicit IdentityNode(const Shape& s) : OpNode(OpKind::Identity, s, s) {}
  void apply(std::span<const double> in, std::span<double> out) const override {
    std::copy(in.begin(), in.end(), out.begin());
  }
  void adjoint(std::span<const double> in, std::span<double> out) const override { apply(in, out); }
  std::string describe() const override { return "identity" + shape_to_string(domain()); }
};

class DiagonalNode final : public OpNode {
 public:
  DiagonalNode(std::vector<double> gains, const Shape& s)
      : OpNode(OpKind::Diagonal, s, s), gains_(std::move(gains)) {}
  void apply(std::span<const double> in, std::span<double> out) const override {
    for (std::size_t i = 0; i < gains_.size(); ++i) out[i] = gains_[i] * in[i];
  }
  void adjoint(std::span<const double> in, std::span<double> out) const override { apply(in, out); }
  std::string describe() const override { return "diagonal" + shape_to_string(domain()); }
  const std::vector<double>& gains() const { return gains_; }

 private:
  std::vector<double> gains_;
};

class DenseNode final : public OpNode {
 public:
  DenseNode(Eigen::MatrixXd m, Shape dom, Shape cod)
      : OpNode(OpKind::Dense, std::move(dom), std::move(cod)), m_(std::move(m)) {}
  void apply(std::span<const double> in, std::span<double> out) const override {
    Eigen::Map<const Eigen::VectorXd> x(in.data(), static_cast<Eigen::Index>(in.size()));
    Eigen::Map<Eigen::VectorXd> y(out.data(), static_cast<Eigen::Index>(out.size()));
    y.noalias() = m_ * x;
  }
  void adjoint(std::span<const double> in, std::span<double> out) const override {
    Eigen::Map<const Eigen::VectorXd> y(in.data(), static_cast<Eigen::Index>(in.size()));
    Eigen::Map<Eigen::VectorXd> x(out.data(), static_cast<Eigen::Index>(out.size()));
    x.noalias() = m_.transpose() * y;
  }
  std::string describe() const override {
    return "dense" + std::to_string(m_.rows()) + "x" + std::to_string(m_.cols());
  }
  const Eigen::MatrixXd& matrix() const { return m_; }

 private:
  Eigen::MatrixXd m_;
};

class ConvNode final : public OpNode {
 public:
  ConvNode(ConvPayload payload, conv::Geometry geom)
      : OpNode(OpKind::Conv2D, payload.image_shape, payload.image_shape),
        payload_(std::move(payload)),
        geom_(geom) {}
  void apply(std::span<const double> in, std::span<double> out) const override {
    conv::forward(geom_, payload_.kernel.data(), in, out);
  }
  void adjoint(std::span<const double> in, std::span<double> out) const override {
    conv::adjoint(geom_, payload_.kernel.data(), in, out);
  }
  std::string describe() const override {
    return "conv" + shape_to_string(payload_.kernel.shape()) + "@" +
           shape_to_string(payload_.image_shape) + "/" + to_string(payload_.boundary);
  }
  const ConvPayload& payload() const { return payload_; }

 private:
  ConvPayload payload_;
  conv::Geometry geom_;
};

// Rows stored in compressed form: ray r covers entries [offsets[r], offsets[r+1]).
class RadonNode final : public OpNode {
 public:
  RadonNode(RadonPayload payload, std::vector<std::size_t> offsets, std::vector<std::size_t> pixels,
            std::vector<double> weights)
      : OpNode(OpKind::Radon, {payload.image_side, payload.image_side},
               {payload.angles.size(), payload.detectors}),
        payload_(std::move(payload)),
        offsets_(std::move(offsets)),
        pixels_(std::move(pixels)),
        weights_(std::move(weights)) {}
  void apply(std::span<const double> in, std::span<double> out) const override {
    for (std::size_t r = 0; r + 1 < offsets_.size(); ++r) {
      double s = 0.0;
      for (std::size_t e = offsets_[r]; e < offsets_[r + 1]; ++e) s += weights_[e] * in[pixels_[e]];
      out[r] = s;
    }
  }
  void adjoint(std::span<const double> in, std::span<double> out) const override {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t r = 0; r + 1 < offsets_.size(); ++r) {
      for (std::size_t e = offsets_[r]; e < offsets_[r + 1]; ++e) out[pixels_[e]] += weights_[e] * in[r];
    }
  }
  std::string describe() const override {
    return "radon" + std::to_string(payload_.image_side) + "/" + std::to_string(payload_.angles.size()) +
           "x" + std::to_string(payload_.detectors);
  }
  const RadonPayload& payload() const { return payload_; }

 private:
  RadonPayload payload_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> pixels_;
  std::vector<double> weights_;
};

class DownsampleNode final : public OpNode {
 public:
  DownsampleNode(const Shape& in_shape, Shape out_shape, std::size_t factor)
      : OpNode(OpKind::Downsample, in_shape, std::move(out_shape)), factor_(factor) {
    const std::size_t block = rank() == 1 ? factor_ : factor_ * factor_;
    inv_block_ = 1.0 / static_cast<double>(block);
  }
  void apply(std::span<const double> in, std::span<double> out) const override {
    std::fill(out.begin(), out.end(), 0.0);
    for_each(in.size(), [&](std::size_t i, std::size_t o) { out[o] += inv_block_ * in[i]; });
  }
  void adjoint(std::span<const double> in, std::span<double> out) const override {
    for_each(out.size(), [&](std::size_t i, std::size_t o) { out[i] = inv_block_ * in[o]; });
  }
  std::string describe() const override {
    return "downsample" + std::to_string(factor_) + "@" + shape_to_string(domain());
  }

 private:
  std::size_t rank() const { return domain().size(); }
  template <typename Fn>
  void for_each(std::size_t n, Fn&& fn) const {
    const std::size_t cols = domain().back();
    const std::size_t out_cols = codomain().back();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t r = i / cols, c = i % cols;
      fn(i, (r / factor_) * out_cols + c / factor_);
    }
  }
  std::size_t factor_;
  double inv_block_ = 1.0;
};

class ScaledNode final : public OpNode {
 public:
  ScaledNode(const LinearOp& op, double s) : OpNode(OpKind::Scaled, op.domain_shape(), op.codomain_shape()) {
    children = {op};
    factor = s;
  }
  void apply(std::span<const double> in, std::span<double> out) const override {
    children[0].apply_into(in, out);
    for (double& v : out) v *= factor;
  }
  void adjoint(std::span<const double> in, std::span<double> out) const override {
    children[0].adjoint_into(in, out);
    for (double& v : out) v *= factor;
  }
  std::string describe() const override {
    std::ostringstream os;
    os << factor << "*(" << children[0].describe() << ")";
    return os.str();
  }
};

class SumNode final : public OpNode {
 public:
  explicit SumNode(std::vector<LinearOp> terms)
      : OpNode(OpKind::Sum, terms.front().domain_shape(), terms.front().codomain_shape()) {
    children = std::move(terms);
  }
  void apply(std::span<const double> in, std::span<double> out) const override {
    accumulate(in, out, false);
  }
  void adjoint(std::span<const double> in, std::span<double> out) const override {
    accumulate(in, out, true);
  }
  std::string describe() const override {
    std::string s = "(";
    for (std::size_t i = 0; i < children.size(); ++i) {
      if (i) s += " + ";
      s += children[i].describe();
    }
    return s + ")";
  }

 private:
  void accumulate(std::span<const double> in, std::span<double> out, bool adj) const {
    std::vector<double> tmp(out.size());
    for (std::size_t t = 0; t < children.size(); ++t) {
      auto target = t == 0 ? out : std::span<double>(tmp);
      if (adj) {
        children[t].adjoint_into(in, target);
      } else {
        children[t].apply_into(in, target);
      }
      if (t > 0) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += tmp[i];
      }
    }
  }
};

class ComposedNode final : public OpNode {
 public:
  ComposedNode(const LinearOp& outer, const LinearOp& inner)
      : OpNode(OpKind::Composed, inner.domain_shape(), outer.codomain_shape()) {
    children = {outer, inner};
  }
  void apply(std::span<const double> in, std::span<double> out) const override {
    std::vector<double> mid(children[1].codomain_size());
    children[1].apply_into(in, mid);
    children[0].apply_into(mid, out);
  }
  void adjoint(std::span<const double> in, std::span<double> out) const override {
    std::vector<double> mid(children[0].domain_size());
    children[0].adjoint_into(in, mid);
    children[1].adjoint_into(mid, out);
  }
  std::string describe() const override {
    return children[0].describe() + " . " + children[1].describe();
  }
};

class AdjointNode final : public OpNode {
 public:
  explicit AdjointNode(const LinearOp& op) : OpNode(OpKind::AdjointOf, op.codomain_shape(), op.domain_shape()) {
    children = {op};
  }
  void apply(std::span<const double> in, std::span<double> out) const override {
    children[0].adjoint_into(in, out);
  }
  void adjoint(std::span<const double> in, std::span<double> out) const override {
    children[0].apply_into(in, out);
  }
  std::string describe() const override { return "adjoint(" + children[0].describe() + ")"; }
};

const OpNode& node_of(const std::shared_ptr<const OpNode>& node) {
  if (!node) throw ConfigError("use of an empty linear operator");
  return *node;
}

// Exact intersection lengths of one ray with the pixels of a side x side
// image covering [-side/2, side/2]^2. Pixel (r, c) spans
// x in [c - side/2, c + 1 - side/2], y in [side/2 - r - 1, side/2 - r].
void trace_ray(std::size_t side, double theta, double s, std::vector<std::size_t>& pixels,
               std::vector<double>& weights) {
  const double half = 0.5 * static_cast<double>(side);
  const double ct = std::cos(theta), st = std::sin(theta);
  // Ray point: p(t) = s*(ct, st) + t*(-st, ct)
  const double x0 = s * ct, y0 = s * st;
  const double dx = -st, dy = ct;
  constexpr double kTiny = 1e-14;

  double tmin = -std::numeric_limits<double>::infinity();
  double tmax = std::numeric_limits<double>::infinity();
  auto clip = [&](double p0, double d) {
    if (std::abs(d) < kTiny) {
      if (p0 < -half || p0 > half) tmin = std::numeric_limits<double>::infinity();
      return;
    }
    double t1 = (-half - p0) / d, t2 = (half - p0) / d;
    if (t1 > t2) std::swap(t1, t2);
    tmin = std::max(tmin, t1);
    tmax = std::min(tmax, t2);
  };
  clip(x0, dx);
  clip(y0, dy);
  if (!(tmax > tmin)) return;

  std::vector<double> ts{tmin, tmax};
  for (std::size_t i = 0; i <= side; ++i) {
    const double line = static_cast<double>(i) - half;
    if (std::abs(dx) >= kTiny) {
      const double t = (line - x0) / dx;
      if (t > tmin && t < tmax) ts.push_back(t);
    }
    if (std::abs(dy) >= kTiny) {
      const double t = (line - y0) / dy;
      if (t > tmin && t < tmax) ts.push_back(t);
    }
  }
  std::sort(ts.begin(), ts.end());
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    const double len = ts[i + 1] - ts[i];
    if (len <= 1e-12) continue;
    const double tm = 0.5 * (ts[i] + ts[i + 1]);
    const double xm = x0 + tm * dx, ym = y0 + tm * dy;
    const auto c = static_cast<std::ptrdiff_t>(std::floor(xm + half));
    const auto r = static_cast<std::ptrdiff_t>(std::floor(half - ym));
    const auto n = static_cast<std::ptrdiff_t>(side);
    if (r < 0 || r >= n || c < 0 || c >= n) continue;
    const auto p = static_cast<std::size_t>(r * n + c);
    if (!pixels.empty() && pixels.back() == p) {
      weights.back() += len;
    } else {
      pixels.push_back(p);
      weights.push_back(len);
    }
  }
}

}  // namespace

OpKind LinearOp::kind() const { return node_of(node_).kind(); }
const Shape& LinearOp::domain_shape() const { return node_of(node_).domain(); }
const Shape& LinearOp::codomain_shape() const { return node_of(node_).codomain(); }

SignalGrid LinearOp::apply(const SignalGrid& x) const {
  require_shape(domain_shape(), x.shape(), ("apply " + describe()).c_str());
  SignalGrid out(codomain_shape());
  node_->apply(x.data(), out.data());
  return out;
}

SignalGrid LinearOp::adjoint_apply(const SignalGrid& y) const {
  require_shape(codomain_shape(), y.shape(), ("adjoint_apply " + describe()).c_str());
  SignalGrid out(domain_shape());
  node_->adjoint(y.data(), out.data());
  return out;
}

void LinearOp::apply_into(std::span<const double> in, std::span<double> out) const {
  node_of(node_).apply(in, out);
}

void LinearOp::adjoint_into(std::span<const double> in, std::span<double> out) const {
  node_of(node_).adjoint(in, out);
}

std::string LinearOp::describe() const { return node_of(node_).describe(); }

const std::vector<LinearOp>& LinearOp::children() const { return node_of(node_).children; }

double LinearOp::scale() const { return node_of(node_).factor; }

const Eigen::MatrixXd* LinearOp::dense_matrix() const {
  auto* n = dynamic_cast<const DenseNode*>(node_.get());
  return n ? &n->matrix() : nullptr;
}

const std::vector<double>* LinearOp::diagonal_gains() const {
  auto* n = dynamic_cast<const DiagonalNode*>(node_.get());
  return n ? &n->gains() : nullptr;
}

const ConvPayload* LinearOp::conv() const {
  auto* n = dynamic_cast<const ConvNode*>(node_.get());
  return n ? &n->payload() : nullptr;
}

const RadonPayload* LinearOp::radon() const {
  auto* n = dynamic_cast<const RadonNode*>(node_.get());
  return n ? &n->payload() : nullptr;
}

SignalGrid apply(const LinearOp& op, const SignalGrid& x) { return op.apply(x); }
SignalGrid adjoint_apply(const LinearOp& op, const SignalGrid& y) { return op.adjoint_apply(y); }

LinearOp make_identity(const Shape& shape) {
  if (shape_size(shape) == 0) throw ConfigError("identity operator needs a nonempty shape");
  return LinearOp(std::make_shared<IdentityNode>(shape));
}

LinearOp make_diagonal(std::vector<double> gains, Shape shape) {
  if (shape.empty()) shape = {gains.size()};
  if (shape_size(shape) != gains.size() || gains.empty()) {
    throw DimensionError("diagonal gains of length " + std::to_string(gains.size()) +
                         " do not fit shape " + shape_to_string(shape));
  }
  for (double g : gains) {
    if (!std::isfinite(g)) throw ConfigError("diagonal gains must be finite");
  }
  return LinearOp(std::make_shared<DiagonalNode>(std::move(gains), shape));
}

LinearOp make_dense(Eigen::MatrixXd matrix, Shape domain_shape, Shape codomain_shape) {
  if (matrix.size() == 0) throw ConfigError("dense operator needs a nonempty matrix");
  if (!matrix.allFinite()) throw ConfigError("dense operator entries must be finite");
  if (domain_shape.empty()) domain_shape = {static_cast<std::size_t>(matrix.cols())};
  if (codomain_shape.empty()) codomain_shape = {static_cast<std::size_t>(matrix.rows())};
  if (shape_size(domain_shape) != static_cast<std::size_t>(matrix.cols()) ||
      shape_size(codomain_shape) != static_cast<std::size_t>(matrix.rows())) {
    throw DimensionError("dense matrix " + std::to_string(matrix.rows()) + "x" +
                         std::to_string(matrix.cols()) + " does not map " +
                         shape_to_string(domain_shape) + " to " + shape_to_string(codomain_shape));
  }
  return LinearOp(std::make_shared<DenseNode>(std::move(matrix), std::move(domain_shape),
                                              std::move(codomain_shape)));
}

LinearOp make_conv2d(const SignalGrid& kernel, const Shape& image_shape, Boundary boundary) {
  auto geom = conv::make_geometry(image_shape, kernel.shape(), boundary);
  return LinearOp(std::make_shared<ConvNode>(ConvPayload{kernel, image_shape, boundary}, geom));
}

LinearOp make_radon(const Shape& image_shape, std::vector<double> angles, std::size_t detectors) {
  if (image_shape.size() != 2 || image_shape[0] != image_shape[1] || image_shape[0] == 0) {
    throw ConfigError("radon projector needs a square image, got " + shape_to_string(image_shape));
  }
  if (angles.empty()) throw ConfigError("radon projector needs at least one angle");
  const std::size_t side = image_shape[0];
  if (detectors < side) {
    throw ConfigError("radon projector needs at least " + std::to_string(side) + " detectors, got " +
                      std::to_string(detectors));
  }
  std::vector<std::size_t> offsets{0}, pixels;
  std::vector<double> weights;
  const double center = 0.5 * static_cast<double>(detectors - 1);
  for (double theta : angles) {
    if (!std::isfinite(theta)) throw ConfigError("radon angles must be finite");
    for (std::size_t d = 0; d < detectors; ++d) {
      trace_ray(side, theta, static_cast<double>(d) - center, pixels, weights);
      offsets.push_back(pixels.size());
    }
  }
  RadonPayload payload{side, std::move(angles), detectors};
  return LinearOp(std::make_shared<RadonNode>(std::move(payload), std::move(offsets), std::move(pixels),
                                              std::move(weights)));
}

LinearOp make_downsample(const Shape& image_shape, std::size_t factor) {
  if (factor == 0) throw ConfigError("downsample factor must be positive");
  if (image_shape.empty() || image_shape.size() > 2) {
    throw ConfigError("downsampling supports rank-1 and rank-2 grids");
  }
  Shape out;
  for (auto e : image_shape) {
    if (e % factor != 0) {
      throw ConfigError("downsample factor " + std::to_string(factor) + " does not divide " +
                        shape_to_string(image_shape));
    }
    out.push_back(e / factor);
  }
  return LinearOp(std::make_shared<DownsampleNode>(image_shape, std::move(out), factor));
}

LinearOp scaled(const LinearOp& op, double factor) {
  if (!std::isfinite(factor)) throw ConfigError("scale factor must be finite");
  return LinearOp(std::make_shared<ScaledNode>(op, factor));
}

LinearOp sum(std::vector<LinearOp> terms) {
  if (terms.empty()) throw ConfigError("sum of zero operators");
  for (const auto& t : terms) {
    require_shape(terms.front().domain_shape(), t.domain_shape(), "sum domain");
    require_shape(terms.front().codomain_shape(), t.codomain_shape(), "sum codomain");
  }
  return LinearOp(std::make_shared<SumNode>(std::move(terms)));
}

LinearOp compose(const LinearOp& outer, const LinearOp& inner) {
  require_shape(outer.domain_shape(), inner.codomain_shape(), "composition");
  return LinearOp(std::make_shared<ComposedNode>(outer, inner));
}

LinearOp adjoint_of(const LinearOp& op) { return LinearOp(std::make_shared<AdjointNode>(op)); }

LinearOp gram(const LinearOp& op) { return compose(adjoint_of(op), op); }

std::vector<double> uniform_angles(std::size_t count) {
  std::vector<double> a(count);
  for (std::size_t i = 0; i < count; ++i) {
    a[i] = std::numbers::pi * static_cast<double>(i) / static_cast<double>(count);
  }
  return a;
}

double estimate_spectral_norm(const LinearOp& op, std::size_t iterations, std::uint64_t seed) {
  if (iterations == 0) throw ConfigError("power iteration needs at least one iteration");
  const std::size_t n = op.domain_size();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd x(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = normal(rng);
  x.normalize();

  Eigen::VectorXd hx(static_cast<Eigen::Index>(op.codomain_size()));
  Eigen::VectorXd ax(x.size());
  double estimate = 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    op.apply_into({x.data(), n}, {hx.data(), static_cast<std::size_t>(hx.size())});
    op.adjoint_into({hx.data(), static_cast<std::size_t>(hx.size())}, {ax.data(), n});
    estimate = x.dot(ax);
    const double norm = ax.norm();
    if (norm == 0.0) return 0.0;
    x = ax / norm;
  }
  return estimate;
}

Eigen::MatrixXd materialize(const LinearOp& op) {
  const auto n = static_cast<Eigen::Index>(op.domain_size());
  const auto m = static_cast<Eigen::Index>(op.codomain_size());
  Eigen::MatrixXd out(m, n);
  std::vector<double> e(static_cast<std::size_t>(n), 0.0), col(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < n; ++j) {
    e[static_cast<std::size_t>(j)] = 1.0;
    op.apply_into(e, col);
    e[static_cast<std::size_t>(j)] = 0.0;
    out.col(j) = Eigen::Map<Eigen::VectorXd>(col.data(), m);
  }
  return out;
}

Eigen::MatrixXd materialize_adjoint(const LinearOp& op) {
  const auto n = static_cast<Eigen::Index>(op.domain_size());
  const auto m = static_cast<Eigen::Index>(op.codomain_size());
  Eigen::MatrixXd out(n, m);
  std::vector<double> e(static_cast<std::size_t>(m), 0.0), col(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < m; ++j) {
    e[static_cast<std::size_t>(j)] = 1.0;
    op.adjoint_into(e, col);
    e[static_cast<std::size_t>(j)] = 0.0;
    out.col(j) = Eigen::Map<Eigen::VectorXd>(col.data(), n);
  }
  return out;
}

bool is_circular_shift_invariant(const LinearOp& op) { return !circular_kernel_extent(op).empty(); }

Shape circular_kernel_extent(const LinearOp& op) {
  const Shape& dom = op.domain_shape();
  if (dom != op.codomain_shape() || dom.size() > 2) return {};
  switch (op.kind()) {
    case OpKind::Identity:
      return Shape(dom.size(), 1);
    case OpKind::Conv2D:
      if (op.conv()->boundary != Boundary::Circular) return {};
      return op.conv()->kernel.shape();
    case OpKind::Scaled:
    case OpKind::AdjointOf:
      return circular_kernel_extent(op.children()[0]);
    case OpKind::Sum: {
      Shape ext(dom.size(), 1);
      for (const auto& c : op.children()) {
        auto e = circular_kernel_extent(c);
        if (e.empty()) return {};
        for (std::size_t i = 0; i < ext.size(); ++i) ext[i] = std::max(ext[i], e[i]);
      }
      return ext;
    }
    case OpKind::Composed: {
      auto a = circular_kernel_extent(op.children()[0]);
      auto b = circular_kernel_extent(op.children()[1]);
      if (a.empty() || b.empty()) return {};
      Shape ext(dom.size());
      for (std::size_t i = 0; i < ext.size(); ++i) {
        ext[i] = a[i] + b[i] - 1;
        if (ext[i] > dom[i]) return {};
      }
      return ext;
    }
    default:
      return {};
  }
}

SignalGrid extract_circular_kernel(const LinearOp& op, const Shape& extent) {
  const Shape& dom = op.domain_shape();
  if (extent.size() != dom.size()) throw DimensionError("kernel extent rank mismatch");
  const std::size_t rows = dom.size() == 2 ? dom[0] : 1;
  const std::size_t cols = dom.back();
  const std::size_t kr = extent.size() == 2 ? extent[0] : 1;
  const std::size_t kc = extent.back();
  SignalGrid delta(dom);
  delta[0] = 1.0;
  const SignalGrid h = op.apply(delta);
  SignalGrid kernel(extent);
  const auto cr = static_cast<std::ptrdiff_t>(kr / 2), cc = static_cast<std::ptrdiff_t>(kc / 2);
  for (std::size_t a = 0; a < kr; ++a) {
    for (std::size_t b = 0; b < kc; ++b) {
      auto r = static_cast<std::ptrdiff_t>(a) - cr;
      auto c = static_cast<std::ptrdiff_t>(b) - cc;
      r = (r % static_cast<std::ptrdiff_t>(rows) + static_cast<std::ptrdiff_t>(rows)) %
          static_cast<std::ptrdiff_t>(rows);
      c = (c % static_cast<std::ptrdiff_t>(cols) + static_cast<std::ptrdiff_t>(cols)) %
          static_cast<std::ptrdiff_t>(cols);
      kernel[a * kc + b] = h[static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(c)];
    }
  }
  return kernel;
}

}  // namespace invnet
