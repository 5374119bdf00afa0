#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "invnet/operators.hpp"
#include "invnet/signal_grid.hpp"

namespace invnet {

enum class Activation { Identity, SoftThreshold, Relu };
enum class UnrollScheme { Gd, GdReg, Ista };
enum class Promotion { RecurrenceAll, RecurrencePerLayer, Bias, Theta };

std::string to_string(Activation a);
std::string to_string(UnrollScheme s);
std::string to_string(Promotion p);
Activation activation_from_string(const std::string& name);
UnrollScheme scheme_from_string(const std::string& name);
Promotion promotion_from_string(const std::string& name);

/// relu is max(z - theta, 0); theta = 0 gives the plain rectifier.
double activate(Activation a, double z, double theta);

enum class BlockKind { Dense, Kernel, Scalar };
enum class BlockRole { Bias, Recurrence, Theta, Filter };

std::string to_string(BlockKind k);
std::string to_string(BlockRole r);

/// Parameter storage referenced by layers. Dense blocks are row-major
/// [out_size x in_size]; kernel blocks are centered convolution kernels on
/// `in_shape` (== out_shape); scalar blocks hold one threshold.
struct ParamBlock {
  BlockKind kind = BlockKind::Dense;
  BlockRole role = BlockRole::Recurrence;
  Shape in_shape;
  Shape out_shape;
  Shape kernel_shape;
  Boundary boundary = Boundary::Circular;
  std::vector<double> values;
  bool trainable = true;

  std::size_t size() const { return values.size(); }
  bool operator==(const ParamBlock&) const = default;
};

/// A linear map: an optional fixed `pre` stage followed by either a fixed
/// operator or a parameter block.
struct MapRef {
  std::optional<LinearOp> pre;
  std::optional<LinearOp> fixed;
  std::optional<std::size_t> block;
};

struct LayerSpec {
  MapRef bias;
  std::optional<MapRef> recurrence;  ///< empty means the zero map
  Activation activation = Activation::Identity;
  double theta = 0.0;
  std::optional<std::size_t> theta_block;
};

/// K-layer network f^(k+1) = act_k(bias_k(g) + recurrence_k(f^(k))).
/// Treated as a value: promotion and training return new models.
struct UnrolledModel {
  std::string scheme;  ///< gd, gd_reg, ista or a free-form tag for hand-built models
  std::vector<LayerSpec> layers;
  std::vector<ParamBlock> blocks;
  bool tied = true;
  Shape input_shape;
  Shape output_shape;
  double alpha = 0.0;
  double lambda = 0.0;

  std::size_t depth() const { return layers.size(); }
};

struct LayerFlags {
  bool trainable_bias = false;
  bool trainable_recurrence = false;
  bool trainable_theta = false;
};

LayerFlags layer_flags(const UnrolledModel& model, std::size_t layer);
double layer_theta(const UnrolledModel& model, std::size_t layer);

/// Throws DimensionError / ConfigError if layers, blocks and shapes disagree.
void validate(const UnrolledModel& model);

/// Physics initialization. A missing alpha is resolved exactly as the
/// iterative solvers do (see resolve_step). gd_reg needs reg_op.
UnrolledModel build_from_physics(const LinearOp& h, UnrollScheme scheme, std::size_t depth,
                                 std::optional<double> alpha, double lambda,
                                 std::optional<LinearOp> reg_op = std::nullopt, bool tied = true);

struct LayerRecord {
  SignalGrid input;            ///< f^(k)
  SignalGrid bias_term;        ///< bias_k(g)
  SignalGrid recurrence_term;  ///< recurrence_k(f^(k)), zeros for the zero map
  SignalGrid pre_activation;
  SignalGrid output;           ///< f^(k+1)
};

struct ForwardResult {
  SignalGrid output;
  std::vector<LayerRecord> layers;
};

ForwardResult forward(const UnrolledModel& model, const SignalGrid& g,
                      std::optional<SignalGrid> f0 = std::nullopt);
/// Output only; no records kept.
SignalGrid predict(const UnrolledModel& model, const SignalGrid& g,
                   std::optional<SignalGrid> f0 = std::nullopt);
/// Recomputes the output from stored bias and recurrence terms alone.
SignalGrid replay(const UnrolledModel& model, const ForwardResult& states);

/// Evaluates one map on x.
SignalGrid apply_map(const UnrolledModel& model, const MapRef& map, const SignalGrid& x);

/// Gradients for every block; entries of non-trainable blocks stay empty.
struct ParamGradient {
  std::vector<std::vector<double>> blocks;
};

/// Reverse pass for d(loss)/d(output) = `upstream`. Soft-threshold and relu
/// derivatives are 0 at the kink.
ParamGradient backward(const UnrolledModel& model, const SignalGrid& g, const ForwardResult& states,
                       const SignalGrid& upstream);

/// Materializes the selected maps as trainable blocks initialized to their
/// current values. Circular shift-invariant maps become kernels, others
/// dense matrices.
UnrolledModel promote_trainable(const UnrolledModel& model, Promotion which);

struct CensusEntry {
  std::size_t block = 0;
  BlockRole role = BlockRole::Recurrence;
  BlockKind kind = BlockKind::Dense;
  std::size_t size = 0;
  std::vector<std::size_t> layers;  ///< layers referencing the block
};

/// Trainable blocks only, in storage order.
std::vector<CensusEntry> parameter_census(const UnrolledModel& model);
std::size_t trainable_parameter_count(const UnrolledModel& model);

/// Trainable values concatenated in block order.
std::vector<double> trainable_values(const UnrolledModel& model);
/// Inverse of trainable_values; threshold blocks are clamped at 0.
void set_trainable_values(UnrolledModel& model, std::span<const double> values);
std::vector<double> flatten(const UnrolledModel& model, const ParamGradient& grad);

std::string serialize_model(const UnrolledModel& model);
UnrolledModel deserialize_model(std::string_view text);
void save_model(const UnrolledModel& model, const std::string& path);
UnrolledModel load_model(const std::string& path);

}  // namespace invnet
