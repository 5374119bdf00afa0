#include "invnet/unrolled.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "invnet/conv.hpp"
#include "invnet/errors.hpp"
#include "invnet/fileio.hpp"
#include "invnet/iterative.hpp"
#include "model_json.hpp"

namespace invnet {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using detail::Json;

constexpr std::size_t kMaxDenseParams = std::size_t{1} << 22;
constexpr const char* kFormat = "invnet-unrolled-model";
constexpr int kVersion = 1;

template <class E>
E parse_enum(const std::string& name, std::initializer_list<std::pair<const char*, E>> table, const char* what) {
  for (const auto& [n, v] : table)
    if (name == n) return v;
  std::string options;
  for (const auto& [n, v] : table) options += std::string(options.empty() ? "" : ", ") + n;
  throw ConfigError("unknown " + std::string(what) + " '" + name + "' (expected one of: " + options + ")");
}

conv::Geometry geometry(const ParamBlock& b) { return conv::make_geometry(b.in_shape, b.kernel_shape, b.boundary); }

void block_apply(const ParamBlock& b, std::span<const double> in, std::span<double> out) {
  if (b.kind == BlockKind::Kernel) {
    conv::forward(geometry(b), b.values, in, out);
    return;
  }
  Eigen::Map<const RowMatrix> w(b.values.data(), static_cast<Eigen::Index>(out.size()),
                                static_cast<Eigen::Index>(in.size()));
  Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size())) =
      w * Eigen::Map<const Eigen::VectorXd>(in.data(), static_cast<Eigen::Index>(in.size()));
}

void block_adjoint(const ParamBlock& b, std::span<const double> in, std::span<double> out) {
  if (b.kind == BlockKind::Kernel) {
    conv::adjoint(geometry(b), b.values, in, out);
    return;
  }
  Eigen::Map<const RowMatrix> w(b.values.data(), static_cast<Eigen::Index>(in.size()),
                                static_cast<Eigen::Index>(out.size()));
  Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size())) =
      w.transpose() * Eigen::Map<const Eigen::VectorXd>(in.data(), static_cast<Eigen::Index>(in.size()));
}

void block_grad(const ParamBlock& b, std::span<const double> dy, std::span<const double> x, std::vector<double>& grad) {
  if (b.kind == BlockKind::Kernel) {
    conv::accumulate_kernel_grad(geometry(b), dy, x, grad);
    return;
  }
  Eigen::Map<RowMatrix> gm(grad.data(), static_cast<Eigen::Index>(dy.size()), static_cast<Eigen::Index>(x.size()));
  gm.noalias() += Eigen::Map<const Eigen::VectorXd>(dy.data(), static_cast<Eigen::Index>(dy.size())) *
                  Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
}

// Input shape of the core (fixed op or block) of a map.
Shape core_in(const UnrolledModel& m, const MapRef& map) {
  if (map.fixed) return map.fixed->domain_shape();
  return m.blocks.at(*map.block).in_shape;
}

Shape core_out(const UnrolledModel& m, const MapRef& map) {
  if (map.fixed) return map.fixed->codomain_shape();
  return m.blocks.at(*map.block).out_shape;
}

Shape map_in(const UnrolledModel& m, const MapRef& map) { return map.pre ? map.pre->domain_shape() : core_in(m, map); }

bool same_map(const MapRef& a, const MapRef& b) {
  auto same_op = [](const std::optional<LinearOp>& x, const std::optional<LinearOp>& y) {
    return x.has_value() == y.has_value() && (!x || x->same_node(*y));
  };
  return same_op(a.pre, b.pre) && same_op(a.fixed, b.fixed) && a.block == b.block;
}

bool map_trainable(const UnrolledModel& m, const MapRef& map) { return map.block && m.blocks[*map.block].trainable; }

SignalGrid map_adjoint(const UnrolledModel& m, const MapRef& map, const SignalGrid& dy) {
  SignalGrid core;
  if (map.fixed) {
    core = map.fixed->adjoint_apply(dy);
  } else {
    const auto& b = m.blocks[*map.block];
    core = SignalGrid(b.in_shape);
    block_adjoint(b, dy.data(), core.data());
  }
  return map.pre ? map.pre->adjoint_apply(core) : core;
}

// Value of the map's core as a new parameter block.
ParamBlock materialize_core(const UnrolledModel& m, const MapRef& map, BlockRole role) {
  if (map.block) {
    ParamBlock b = m.blocks[*map.block];
    b.role = role;
    b.trainable = true;
    return b;
  }
  const LinearOp& op = *map.fixed;
  ParamBlock b;
  b.role = role;
  b.in_shape = op.domain_shape();
  b.out_shape = op.codomain_shape();
  if (Shape ext = circular_kernel_extent(op); !ext.empty()) {
    b.kind = BlockKind::Kernel;
    b.kernel_shape = ext;
    b.boundary = Boundary::Circular;
    b.values = extract_circular_kernel(op, ext).values();
    return b;
  }
  if (op.domain_size() * op.codomain_size() > kMaxDenseParams) {
    throw ConfigError("promoting " + op.describe() + " would need a dense block of " +
                      std::to_string(op.domain_size() * op.codomain_size()) + " parameters");
  }
  b.kind = BlockKind::Dense;
  const Eigen::MatrixXd dense = materialize(op);
  b.values.resize(static_cast<std::size_t>(dense.size()));
  Eigen::Map<RowMatrix>(b.values.data(), dense.rows(), dense.cols()) = dense;
  return b;
}

std::size_t add_block(UnrolledModel& m, ParamBlock b) {
  m.blocks.push_back(std::move(b));
  return m.blocks.size() - 1;
}

void drop_unreferenced_blocks(UnrolledModel& m) {
  std::vector<bool> used(m.blocks.size(), false);
  for (const auto& l : m.layers) {
    if (l.bias.block) used[*l.bias.block] = true;
    if (l.recurrence && l.recurrence->block) used[*l.recurrence->block] = true;
    if (l.theta_block) used[*l.theta_block] = true;
  }
  std::vector<std::size_t> remap(m.blocks.size());
  std::vector<ParamBlock> kept;
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    if (!used[i]) continue;
    remap[i] = kept.size();
    kept.push_back(std::move(m.blocks[i]));
  }
  m.blocks = std::move(kept);
  for (auto& l : m.layers) {
    if (l.bias.block) l.bias.block = remap[*l.bias.block];
    if (l.recurrence && l.recurrence->block) l.recurrence->block = remap[*l.recurrence->block];
    if (l.theta_block) l.theta_block = remap[*l.theta_block];
  }
}

void check_map(const UnrolledModel& m, const MapRef& map, const Shape& in, const Shape& out, const std::string& what) {
  if (map.fixed.has_value() == map.block.has_value()) {
    throw ConfigError(what + " must reference exactly one of a fixed operator or a parameter block");
  }
  if (map.block && *map.block >= m.blocks.size()) throw ConfigError(what + " references a missing block");
  if (map.block && m.blocks[*map.block].kind == BlockKind::Scalar) {
    throw ConfigError(what + " cannot use a scalar block");
  }
  if (map.pre) require_shape(map.pre->codomain_shape(), core_in(m, map), (what + " stage junction").c_str());
  require_shape(in, map_in(m, map), (what + " domain").c_str());
  require_shape(out, core_out(m, map), (what + " codomain").c_str());
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::SoftThreshold: return "soft_threshold";
    case Activation::Relu: return "relu";
  }
  return "?";
}

std::string to_string(UnrollScheme s) {
  switch (s) {
    case UnrollScheme::Gd: return "gd";
    case UnrollScheme::GdReg: return "gd_reg";
    case UnrollScheme::Ista: return "ista";
  }
  return "?";
}

std::string to_string(Promotion p) {
  switch (p) {
    case Promotion::RecurrenceAll: return "recurrence_all";
    case Promotion::RecurrencePerLayer: return "recurrence_per_layer";
    case Promotion::Bias: return "bias";
    case Promotion::Theta: return "theta";
  }
  return "?";
}

std::string to_string(BlockKind k) {
  switch (k) {
    case BlockKind::Dense: return "dense";
    case BlockKind::Kernel: return "kernel";
    case BlockKind::Scalar: return "scalar";
  }
  return "?";
}

std::string to_string(BlockRole r) {
  switch (r) {
    case BlockRole::Bias: return "bias";
    case BlockRole::Recurrence: return "recurrence";
    case BlockRole::Theta: return "theta";
    case BlockRole::Filter: return "filter";
  }
  return "?";
}

Activation activation_from_string(const std::string& name) {
  return parse_enum<Activation>(name,
                                {{"identity", Activation::Identity},
                                 {"soft_threshold", Activation::SoftThreshold},
                                 {"relu", Activation::Relu}},
                                "activation");
}

UnrollScheme scheme_from_string(const std::string& name) {
  return parse_enum<UnrollScheme>(
      name, {{"gd", UnrollScheme::Gd}, {"gd_reg", UnrollScheme::GdReg}, {"ista", UnrollScheme::Ista}}, "scheme");
}

Promotion promotion_from_string(const std::string& name) {
  return parse_enum<Promotion>(name,
                               {{"recurrence_all", Promotion::RecurrenceAll},
                                {"recurrence_per_layer", Promotion::RecurrencePerLayer},
                                {"bias", Promotion::Bias},
                                {"theta", Promotion::Theta}},
                               "promotion");
}

namespace {
BlockKind block_kind_from_string(const std::string& s) {
  return parse_enum<BlockKind>(s, {{"dense", BlockKind::Dense}, {"kernel", BlockKind::Kernel}, {"scalar", BlockKind::Scalar}},
                               "block kind");
}
BlockRole block_role_from_string(const std::string& s) {
  return parse_enum<BlockRole>(
      s, {{"bias", BlockRole::Bias}, {"recurrence", BlockRole::Recurrence}, {"theta", BlockRole::Theta}, {"filter", BlockRole::Filter}},
      "block role");
}
}  // namespace

double activate(Activation a, double z, double theta) {
  switch (a) {
    case Activation::Identity: return z;
    case Activation::SoftThreshold: return soft_threshold(z, theta);
    case Activation::Relu: return std::max(z - theta, 0.0);
  }
  return z;
}

LayerFlags layer_flags(const UnrolledModel& model, std::size_t layer) {
  const auto& l = model.layers.at(layer);
  LayerFlags f;
  f.trainable_bias = map_trainable(model, l.bias);
  f.trainable_recurrence = l.recurrence && map_trainable(model, *l.recurrence);
  f.trainable_theta = l.theta_block && model.blocks[*l.theta_block].trainable;
  return f;
}

double layer_theta(const UnrolledModel& model, std::size_t layer) {
  const auto& l = model.layers.at(layer);
  return l.theta_block ? model.blocks.at(*l.theta_block).values.at(0) : l.theta;
}

void validate(const UnrolledModel& m) {
  if (m.layers.empty()) throw ConfigError("an unrolled model needs at least one layer");
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    const auto& b = m.blocks[i];
    const std::string name = "block " + std::to_string(i);
    std::size_t expect = 0;
    switch (b.kind) {
      case BlockKind::Dense: expect = shape_size(b.in_shape) * shape_size(b.out_shape); break;
      case BlockKind::Kernel:
        require_shape(b.in_shape, b.out_shape, (name + " kernel image").c_str());
        geometry(b);
        expect = shape_size(b.kernel_shape);
        break;
      case BlockKind::Scalar: expect = 1; break;
    }
    if (b.values.size() != expect) {
      throw DimensionError(name + " holds " + std::to_string(b.values.size()) + " values, expected " +
                           std::to_string(expect));
    }
    for (double v : b.values)
      if (!std::isfinite(v)) throw ConfigError(name + " contains a non-finite value");
  }
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    const auto& l = m.layers[k];
    const std::string tag = "layer " + std::to_string(k);
    check_map(m, l.bias, m.input_shape, m.output_shape, tag + " bias map");
    if (l.recurrence) check_map(m, *l.recurrence, m.output_shape, m.output_shape, tag + " recurrence map");
    if (l.theta_block) {
      if (*l.theta_block >= m.blocks.size() || m.blocks[*l.theta_block].kind != BlockKind::Scalar) {
        throw ConfigError(tag + " threshold must reference a scalar block");
      }
    }
    const double theta = layer_theta(m, k);
    if (!(theta >= 0.0) || !std::isfinite(theta)) throw ConfigError(tag + " threshold must be finite and >= 0");
    if (m.tied && l.recurrence.has_value() != m.layers[0].recurrence.has_value()) {
      throw ConfigError("tied model layers must all share one recurrence map");
    }
    if (m.tied && l.recurrence && !same_map(*l.recurrence, *m.layers[0].recurrence)) {
      throw ConfigError("tied model layers must all share one recurrence map");
    }
  }
}

UnrolledModel build_from_physics(const LinearOp& h, UnrollScheme scheme, std::size_t depth,
                                 std::optional<double> alpha, double lambda, std::optional<LinearOp> reg_op,
                                 bool tied) {
  if (depth == 0) throw ConfigError("unrolled depth K must be >= 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0");
  if (scheme == UnrollScheme::GdReg && !reg_op) {
    throw ConfigError("scheme gd_reg needs a regularization operator D");
  }
  if (alpha && (!(*alpha > 0.0) || !std::isfinite(*alpha))) throw ConfigError("alpha must be finite and > 0");

  IterConfig cfg;
  cfg.alpha = alpha;
  cfg.lambda = lambda;
  if (scheme == UnrollScheme::GdReg) {
    require_shape(h.domain_shape(), reg_op->domain_shape(), "regularization operator domain");
    cfg.reg_op = reg_op;
  }
  const double a = resolve_step(h, cfg);

  std::vector<LinearOp> terms{make_identity(h.domain_shape()), scaled(gram(h), -a)};
  if (scheme == UnrollScheme::GdReg) terms.push_back(scaled(gram(*reg_op), -a * lambda));

  LayerSpec layer;
  layer.bias.fixed = scaled(adjoint_of(h), a);
  layer.recurrence = MapRef{std::nullopt, sum(std::move(terms)), std::nullopt};
  if (scheme == UnrollScheme::Ista) {
    layer.activation = Activation::SoftThreshold;
    layer.theta = lambda * a;
  }

  UnrolledModel m;
  m.scheme = to_string(scheme);
  m.layers.assign(depth, layer);
  m.tied = tied;
  m.input_shape = h.codomain_shape();
  m.output_shape = h.domain_shape();
  m.alpha = a;
  m.lambda = lambda;
  return m;
}

SignalGrid apply_map(const UnrolledModel& model, const MapRef& map, const SignalGrid& x) {
  const SignalGrid staged = map.pre ? map.pre->apply(x) : SignalGrid();
  const SignalGrid& in = map.pre ? staged : x;
  if (map.fixed) return map.fixed->apply(in);
  const auto& b = model.blocks.at(*map.block);
  require_shape(b.in_shape, in.shape(), "parameter block input");
  SignalGrid out(b.out_shape);
  block_apply(b, in.data(), out.data());
  return out;
}

namespace {

template <class Sink>
SignalGrid run_forward(const UnrolledModel& model, const SignalGrid& g, std::optional<SignalGrid> f0, Sink&& sink) {
  require_shape(model.input_shape, g.shape(), "unrolled model input");
  if (f0) require_shape(model.output_shape, f0->shape(), "unrolled model initial state");
  SignalGrid f = f0 ? std::move(*f0) : SignalGrid(model.output_shape);
  SignalGrid bias_term;
  const MapRef* cached = nullptr;
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& l = model.layers[k];
    if (!cached || !same_map(*cached, l.bias)) {
      bias_term = apply_map(model, l.bias, g);
      cached = &l.bias;
    }
    SignalGrid rec = l.recurrence ? apply_map(model, *l.recurrence, f) : SignalGrid(model.output_shape);
    SignalGrid z = bias_term + rec;
    SignalGrid out = z;
    const double theta = layer_theta(model, k);
    if (l.activation != Activation::Identity)
      for (double& v : out.data()) v = activate(l.activation, v, theta);
    sink(f, bias_term, std::move(rec), std::move(z), out);
    f = std::move(out);
  }
  return f;
}

}  // namespace

ForwardResult forward(const UnrolledModel& model, const SignalGrid& g, std::optional<SignalGrid> f0) {
  ForwardResult r;
  r.layers.reserve(model.layers.size());
  r.output = run_forward(model, g, std::move(f0),
                         [&](const SignalGrid& in, const SignalGrid& b, SignalGrid rec, SignalGrid z, const SignalGrid& out) {
                           r.layers.push_back({in, b, std::move(rec), std::move(z), out});
                         });
  return r;
}

SignalGrid predict(const UnrolledModel& model, const SignalGrid& g, std::optional<SignalGrid> f0) {
  return run_forward(model, g, std::move(f0), [](auto&&...) {});
}

SignalGrid replay(const UnrolledModel& model, const ForwardResult& states) {
  if (states.layers.size() != model.layers.size()) {
    throw DimensionError("replay needs one record per layer");
  }
  SignalGrid f;
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& rec = states.layers[k];
    f = rec.bias_term + rec.recurrence_term;
    const double theta = layer_theta(model, k);
    if (model.layers[k].activation != Activation::Identity)
      for (double& v : f.data()) v = activate(model.layers[k].activation, v, theta);
  }
  return f;
}

ParamGradient backward(const UnrolledModel& model, const SignalGrid& g, const ForwardResult& states,
                       const SignalGrid& upstream) {
  require_shape(model.output_shape, upstream.shape(), "output gradient");
  if (states.layers.size() != model.layers.size()) throw DimensionError("forward records do not match the model");
  ParamGradient grad;
  grad.blocks.resize(model.blocks.size());
  for (std::size_t i = 0; i < model.blocks.size(); ++i)
    if (model.blocks[i].trainable) grad.blocks[i].assign(model.blocks[i].size(), 0.0);

  // Nothing below the earliest layer with a trainable part needs a gradient.
  std::size_t first = model.layers.size();
  for (std::size_t k = 0; k < model.layers.size() && first == model.layers.size(); ++k) {
    const auto f = layer_flags(model, k);
    if (f.trainable_bias || f.trainable_recurrence || f.trainable_theta) first = k;
  }

  std::map<const void*, SignalGrid> staged;  // pre(g) per distinct pre stage
  auto bias_input = [&](const MapRef& map) -> const SignalGrid& {
    if (!map.pre) return g;
    auto it = staged.find(map.pre->node_id());
    if (it == staged.end()) it = staged.emplace(map.pre->node_id(), map.pre->apply(g)).first;
    return it->second;
  };

  SignalGrid delta = upstream;
  for (std::size_t k = model.layers.size(); k-- > first;) {
    const auto& l = model.layers[k];
    const auto& rec = states.layers[k];
    const double theta = layer_theta(model, k);
    const bool theta_grad = l.theta_block && model.blocks[*l.theta_block].trainable;
    if (l.activation != Activation::Identity) {
      double dtheta = 0.0;
      for (std::size_t i = 0; i < delta.size(); ++i) {
        const double z = rec.pre_activation[i];
        const bool active = l.activation == Activation::SoftThreshold ? std::abs(z) > theta : z > theta;
        if (active) {
          dtheta -= (l.activation == Activation::SoftThreshold ? (z > 0 ? 1.0 : -1.0) : 1.0) * delta[i];
        } else {
          delta[i] = 0.0;
        }
      }
      if (theta_grad) grad.blocks[*l.theta_block][0] += dtheta;
    }
    if (map_trainable(model, l.bias)) {
      block_grad(model.blocks[*l.bias.block], delta.data(), bias_input(l.bias).data(), grad.blocks[*l.bias.block]);
    }
    if (!l.recurrence) break;  // earlier layers cannot influence the output
    if (map_trainable(model, *l.recurrence)) {
      const auto& b = model.blocks[*l.recurrence->block];
      const SignalGrid& x = l.recurrence->pre ? l.recurrence->pre->apply(rec.input) : rec.input;
      block_grad(b, delta.data(), x.data(), grad.blocks[*l.recurrence->block]);
    }
    if (k > first) delta = map_adjoint(model, *l.recurrence, delta);
  }
  return grad;
}

UnrolledModel promote_trainable(const UnrolledModel& model, Promotion which) {
  validate(model);
  UnrolledModel m = model;
  switch (which) {
    case Promotion::RecurrenceAll: {
      for (const auto& l : m.layers) {
        if (!l.recurrence) throw ConfigError("cannot promote a recurrence: some layer has the zero map");
        if (!same_map(*l.recurrence, *m.layers[0].recurrence)) {
          throw ConfigError("recurrence_all needs every layer to share one recurrence map");
        }
      }
      const std::size_t id = add_block(m, materialize_core(m, *m.layers[0].recurrence, BlockRole::Recurrence));
      for (auto& l : m.layers) {
        l.recurrence->fixed.reset();
        l.recurrence->block = id;
      }
      m.tied = true;
      break;
    }
    case Promotion::RecurrencePerLayer: {
      if (m.tied && m.layers.size() > 1) {
        throw ConfigError("recurrence_per_layer needs an untied model; tied layers share recurrence_all");
      }
      for (auto& l : m.layers) {
        if (!l.recurrence) throw ConfigError("cannot promote a recurrence: some layer has the zero map");
        const std::size_t id = add_block(m, materialize_core(m, *l.recurrence, BlockRole::Recurrence));
        l.recurrence->fixed.reset();
        l.recurrence->block = id;
      }
      break;
    }
    case Promotion::Bias: {
      for (const auto& l : m.layers) {
        if (!same_map(l.bias, m.layers[0].bias)) throw ConfigError("bias promotion needs one shared bias map");
      }
      const std::size_t id = add_block(m, materialize_core(m, m.layers[0].bias, BlockRole::Bias));
      for (auto& l : m.layers) {
        l.bias.fixed.reset();
        l.bias.block = id;
      }
      break;
    }
    case Promotion::Theta: {
      std::optional<std::size_t> shared;
      for (std::size_t k = 0; k < m.layers.size(); ++k) {
        auto& l = m.layers[k];
        if (l.activation == Activation::Identity) {
          throw ConfigError("layer " + std::to_string(k) + " has identity activation; its threshold is unused");
        }
        ParamBlock b;
        b.kind = BlockKind::Scalar;
        b.role = BlockRole::Theta;
        b.values = {layer_theta(m, k)};
        if (m.tied && shared) {
          l.theta_block = shared;
        } else {
          l.theta_block = add_block(m, std::move(b));
          if (m.tied) shared = l.theta_block;
        }
      }
      break;
    }
  }
  drop_unreferenced_blocks(m);
  return m;
}

std::vector<CensusEntry> parameter_census(const UnrolledModel& model) {
  std::vector<CensusEntry> out;
  std::vector<std::optional<std::size_t>> slot(model.blocks.size());
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    const auto& b = model.blocks[i];
    if (!b.trainable) continue;
    slot[i] = out.size();
    out.push_back({i, b.role, b.kind, b.size(), {}});
  }
  auto note = [&](std::optional<std::size_t> block, std::size_t k) {
    if (block && slot[*block]) {
      auto& layers = out[*slot[*block]].layers;
      if (layers.empty() || layers.back() != k) layers.push_back(k);
    }
  };
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& l = model.layers[k];
    note(l.bias.block, k);
    if (l.recurrence) note(l.recurrence->block, k);
    note(l.theta_block, k);
  }
  return out;
}

std::size_t trainable_parameter_count(const UnrolledModel& model) {
  std::size_t n = 0;
  for (const auto& b : model.blocks)
    if (b.trainable) n += b.size();
  return n;
}

std::vector<double> trainable_values(const UnrolledModel& model) {
  std::vector<double> v;
  for (const auto& b : model.blocks)
    if (b.trainable) v.insert(v.end(), b.values.begin(), b.values.end());
  return v;
}

void set_trainable_values(UnrolledModel& model, std::span<const double> values) {
  if (values.size() != trainable_parameter_count(model)) {
    throw DimensionError("expected " + std::to_string(trainable_parameter_count(model)) + " trainable values, got " +
                         std::to_string(values.size()));
  }
  std::size_t at = 0;
  for (auto& b : model.blocks) {
    if (!b.trainable) continue;
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(at), b.size(), b.values.begin());
    if (b.role == BlockRole::Theta)
      for (double& t : b.values) t = std::max(t, 0.0);
    at += b.size();
  }
}

std::vector<double> flatten(const UnrolledModel& model, const ParamGradient& grad) {
  std::vector<double> v;
  for (std::size_t i = 0; i < model.blocks.size(); ++i)
    if (model.blocks[i].trainable) v.insert(v.end(), grad.blocks.at(i).begin(), grad.blocks.at(i).end());
  return v;
}

// ---- serialization ----

namespace {

Json map_json(const MapRef& map, detail::OpWriter& ops) {
  Json j;
  j["pre"] = map.pre ? Json(ops.add(*map.pre)) : Json(nullptr);
  j["fixed"] = map.fixed ? Json(ops.add(*map.fixed)) : Json(nullptr);
  j["block"] = map.block ? Json(*map.block) : Json(nullptr);
  return j;
}

MapRef map_from_json(const Json& j, detail::OpReader& ops) {
  MapRef m;
  const auto& pre = detail::member(j, "pre");
  const auto& fixed = detail::member(j, "fixed");
  const auto& block = detail::member(j, "block");
  if (!pre.is_null()) m.pre = ops.get(pre.get<std::size_t>());
  if (!fixed.is_null()) m.fixed = ops.get(fixed.get<std::size_t>());
  if (!block.is_null()) m.block = block.get<std::size_t>();
  return m;
}

}  // namespace

namespace detail {

Json model_json(const UnrolledModel& m) {
  OpWriter ops;
  Json layers = Json::array();
  for (const auto& l : m.layers) {
    Json j;
    j["activation"] = to_string(l.activation);
    j["theta"] = l.theta;
    j["theta_block"] = l.theta_block ? Json(*l.theta_block) : Json(nullptr);
    j["bias"] = map_json(l.bias, ops);
    j["recurrence"] = l.recurrence ? map_json(*l.recurrence, ops) : Json(nullptr);
    layers.push_back(std::move(j));
  }
  Json blocks = Json::array();
  for (const auto& b : m.blocks) {
    Json j;
    j["kind"] = to_string(b.kind);
    j["role"] = to_string(b.role);
    j["trainable"] = b.trainable;
    j["in_shape"] = shape_json(b.in_shape);
    j["out_shape"] = shape_json(b.out_shape);
    if (b.kind == BlockKind::Kernel) {
      j["kernel_shape"] = shape_json(b.kernel_shape);
      j["boundary"] = to_string(b.boundary);
    }
    j["values"] = doubles_json(b.values);
    blocks.push_back(std::move(j));
  }
  Json doc;
  doc["format"] = kFormat;
  doc["version"] = kVersion;
  doc["scheme"] = m.scheme;
  doc["depth"] = m.layers.size();
  doc["tied"] = m.tied;
  doc["input_shape"] = shape_json(m.input_shape);
  doc["output_shape"] = shape_json(m.output_shape);
  doc["alpha"] = m.alpha;
  doc["lambda"] = m.lambda;
  doc["layers"] = std::move(layers);
  doc["blocks"] = std::move(blocks);
  doc["operators"] = ops.take();
  return doc;
}

UnrolledModel model_from_json(const Json& doc) {
  if (!doc.is_object() || doc.value("format", "") != kFormat) throw IoError("not an unrolled model document");
  if (member(doc, "version").get<int>() != kVersion) {
    throw IoError("unsupported model format version " + doc.at("version").dump());
  }
  OpReader ops(member(doc, "operators"));
  UnrolledModel m;
  m.scheme = member(doc, "scheme").get<std::string>();
  m.tied = member(doc, "tied").get<bool>();
  m.input_shape = shape_from_json(member(doc, "input_shape"));
  m.output_shape = shape_from_json(member(doc, "output_shape"));
  m.alpha = member(doc, "alpha").get<double>();
  m.lambda = member(doc, "lambda").get<double>();
  for (const auto& j : member(doc, "blocks")) {
    ParamBlock b;
    b.kind = block_kind_from_string(member(j, "kind").get<std::string>());
    b.role = block_role_from_string(member(j, "role").get<std::string>());
    b.trainable = member(j, "trainable").get<bool>();
    b.in_shape = shape_from_json(member(j, "in_shape"));
    b.out_shape = shape_from_json(member(j, "out_shape"));
    if (b.kind == BlockKind::Kernel) {
      b.kernel_shape = shape_from_json(member(j, "kernel_shape"));
      b.boundary = boundary_from_string(member(j, "boundary").get<std::string>());
    }
    b.values = doubles_from_json(member(j, "values"));
    m.blocks.push_back(std::move(b));
  }
  for (const auto& j : member(doc, "layers")) {
    LayerSpec l;
    l.activation = activation_from_string(member(j, "activation").get<std::string>());
    l.theta = member(j, "theta").get<double>();
    if (const auto& tb = member(j, "theta_block"); !tb.is_null()) l.theta_block = tb.get<std::size_t>();
    l.bias = map_from_json(member(j, "bias"), ops);
    if (const auto& r = member(j, "recurrence"); !r.is_null()) l.recurrence = map_from_json(r, ops);
    m.layers.push_back(std::move(l));
  }
  if (m.layers.size() != member(doc, "depth").get<std::size_t>()) throw IoError("depth does not match layer count");
  validate(m);
  return m;
}

}  // namespace detail

std::string serialize_model(const UnrolledModel& model) {
  validate(model);
  return detail::model_json(model).dump(2) + "\n";
}

UnrolledModel deserialize_model(std::string_view text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::exception& e) {
    throw IoError(std::string("malformed model document: ") + e.what());
  }
  try {
    return detail::model_from_json(doc);
  } catch (const Json::exception& e) {
    throw IoError(std::string("malformed model document: ") + e.what());
  }
}

void save_model(const UnrolledModel& model, const std::string& path) {
  write_file_atomic(path, serialize_model(model));
}

UnrolledModel load_model(const std::string& path) { return deserialize_model(read_file(path)); }

}  // namespace invnet
