#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "invnet/operators.hpp"
#include "invnet/spectral.hpp"
#include "invnet/unrolled.hpp"

namespace invnet {

enum class ShapeKind { Rectangle, Disk };
std::string to_string(ShapeKind k);
ShapeKind shape_kind_from_string(const std::string& name);

/// Geometry in pixel units; pixel (r, c) has its center at (r + 0.5, c + 0.5).
/// Rectangles cover |y - cy| <= half_height and |x - cx| <= half_width; disks
/// cover distance <= radius (stored in half_height).
struct PhantomShape {
  ShapeKind kind = ShapeKind::Disk;
  double cy = 0.0;
  double cx = 0.0;
  double half_height = 1.0;
  double half_width = 1.0;
  std::size_t level = 1;  ///< index into PhantomSpec::levels, >= 1
};

struct PhantomSpec {
  Shape image_shape{64, 64};
  std::size_t min_shapes = 2;
  std::size_t max_shapes = 5;
  std::vector<ShapeKind> kinds{ShapeKind::Rectangle, ShapeKind::Disk};
  /// Background first, then normal, high and optionally very_high.
  std::vector<double> levels{0.0, 0.4, 0.7, 1.0};
  std::uint64_t seed = 0;
  /// When nonempty these shapes are painted instead of random ones.
  std::vector<PhantomShape> shapes;
};

struct LabelImage {
  Shape shape;
  std::vector<std::size_t> labels;
  std::vector<double> levels;
};

struct Phantom {
  SignalGrid truth;
  LabelImage labels;
  std::vector<PhantomShape> shapes;
};

void validate(const PhantomSpec& spec);
Phantom gen_phantom(const PhantomSpec& spec);

/// Normalized sampled Gaussian of odd extent.
SignalGrid gaussian_psf(std::size_t extent, double sigma);

struct DegradationSpec {
  SignalGrid psf;
  double noise_sigma = 0.0;
  std::size_t downsample_factor = 1;
  std::uint64_t seed = 0;
  Boundary boundary = Boundary::Circular;
};

void validate(const DegradationSpec& spec);
/// Blur, then block-average when the factor exceeds 1.
LinearOp degradation_operator(const Shape& image_shape, const DegradationSpec& spec);
SignalGrid simulate_ir(const SignalGrid& truth, const DegradationSpec& spec);
/// Pixel replication back to full resolution.
SignalGrid upsample_nearest(const SignalGrid& x, std::size_t factor);

/// Label = number of cut points <= value. Cut points must increase strictly.
LabelImage quantize(const SignalGrid& x, const std::vector<double>& cuts, const std::vector<double>& levels);
/// Midpoints between consecutive levels.
std::vector<double> midpoint_cuts(const std::vector<double>& levels);

using Deconvolver = std::variant<UnrolledModel, SpectralModel>;

struct ChainResult {
  SignalGrid denoised;
  SignalGrid restored;
  LabelImage seg;
};

ChainResult run_ir_chain(const SignalGrid& g, const UnrolledModel& denoiser, const Deconvolver& deconvolver,
                         const std::vector<double>& cuts, const std::vector<double>& levels);

struct SegReport {
  std::vector<std::vector<std::size_t>> confusion;  ///< [truth][pred]
  std::vector<double> precision;                    ///< NaN when a level is never predicted
  std::vector<double> recall;                       ///< NaN when a level is absent from truth
  double accuracy = 0.0;
};

SegReport seg_metrics(const LabelImage& pred, const LabelImage& truth);

// ---- image files ----

/// Binary P5 with maxval 65535, big-endian samples.
struct PgmImage {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint16_t> samples;
};

std::string encode_pgm(const PgmImage& img);
PgmImage decode_pgm(std::string_view bytes);
/// Linear map of [lo, hi] onto [0, 65535], clamped and rounded.
PgmImage to_pgm(const SignalGrid& x, double lo, double hi);
SignalGrid from_pgm(const PgmImage& img, double lo, double hi);
PgmImage labels_to_pgm(const LabelImage& labels);

/// Writes `path` and a sidecar `path.json` holding the value range and any
/// extra string fields. Both writes are atomic.
void write_image(const std::filesystem::path& path, const SignalGrid& x, double lo, double hi,
                 const std::map<std::string, std::string>& fields = {});
/// Label raster with a sidecar holding the level values and extra fields.
void write_labels(const std::filesystem::path& path, const LabelImage& labels,
                  const std::map<std::string, std::string>& fields = {});
/// Reads an image written by write_image, restoring values from the sidecar.
SignalGrid read_image(const std::filesystem::path& path);

// ---- desk-scale experiment ----

enum class DeconvolverKind { Ista, SpectralTikhonov };
std::string to_string(DeconvolverKind k);
DeconvolverKind deconvolver_kind_from_string(const std::string& name);

struct IrDemoConfig {
  PhantomSpec phantom;
  std::size_t psf_extent = 5;
  double psf_sigma = 1.0;
  double noise_sigma = 0.01;
  std::size_t downsample_factor = 1;
  std::size_t count = 20;
  std::uint64_t phantom_seed = 1;  ///< phantom i uses phantom_seed + i
  std::uint64_t noise_seed = 1001;  ///< observation i uses noise_seed + i
  std::size_t denoise_depth = 3;
  double denoise_lambda = 0.002;
  std::size_t deconv_depth = 150;
  double deconv_lambda = 0.002;
  DeconvolverKind deconv_kind = DeconvolverKind::Ista;
};

struct IrCase {
  std::uint64_t phantom_seed = 0;
  std::uint64_t noise_seed = 0;
  Phantom phantom;
  SignalGrid observed;  ///< at full resolution (upsampled when needed)
  ChainResult chain;
  LabelImage observed_seg;
  double mse_observed = 0.0;
  double mse_restored = 0.0;
  double acc_observed = 0.0;
  double acc_restored = 0.0;
};

struct IrDemoModels {
  UnrolledModel denoiser;
  Deconvolver deconvolver;
};

IrDemoModels build_ir_models(const IrDemoConfig& cfg);
std::vector<IrCase> run_ir_suite(const IrDemoConfig& cfg, const IrDemoModels& models);

}  // namespace invnet
