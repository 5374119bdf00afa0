#include "invnet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "invnet/errors.hpp"
#include "invnet/fileio.hpp"
#include "invnet/iterative.hpp"
#include "op_json.hpp"

namespace invnet {

std::string to_string(ShapeKind k) { return k == ShapeKind::Rectangle ? "rectangle" : "disk"; }

ShapeKind shape_kind_from_string(const std::string& name) {
  if (name == "rectangle") return ShapeKind::Rectangle;
  if (name == "disk") return ShapeKind::Disk;
  throw ConfigError("unknown shape kind '" + name + "'");
}

std::string to_string(DeconvolverKind k) {
  return k == DeconvolverKind::Ista ? "ista" : "spectral_tikhonov";
}

DeconvolverKind deconvolver_kind_from_string(const std::string& name) {
  if (name == "ista") return DeconvolverKind::Ista;
  if (name == "spectral_tikhonov") return DeconvolverKind::SpectralTikhonov;
  throw ConfigError("unknown deconvolver kind '" + name + "'");
}

namespace {

void check_levels(const std::vector<double>& levels) {
  if (levels.size() < 3 || levels.size() > 4)
    throw ConfigError("phantom needs 3 or 4 levels, got " + std::to_string(levels.size()));
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!std::isfinite(levels[i])) throw ConfigError("phantom level is not finite");
    if (i > 0 && !(levels[i] > levels[i - 1])) throw ConfigError("phantom levels must increase strictly");
  }
}

void check_shape_fits(const PhantomShape& s, const Shape& img, std::size_t level_count) {
  if (s.level == 0 || s.level >= level_count)
    throw ConfigError("shape level index " + std::to_string(s.level) + " outside 1.." +
                      std::to_string(level_count - 1));
  double hh = s.half_height;
  double hw = s.kind == ShapeKind::Disk ? s.half_height : s.half_width;
  if (!(hh > 0.0) || !(hw > 0.0)) throw ConfigError("shape extents must be positive");
  double rows = static_cast<double>(img[0]), cols = static_cast<double>(img[1]);
  if (s.cy - hh < 0.0 || s.cy + hh > rows || s.cx - hw < 0.0 || s.cx + hw > cols)
    throw ConfigError("shape does not fit inside the image");
}

bool covers(const PhantomShape& s, double y, double x) {
  double dy = y - s.cy, dx = x - s.cx;
  if (s.kind == ShapeKind::Disk) return dy * dy + dx * dx <= s.half_height * s.half_height;
  return std::abs(dy) <= s.half_height && std::abs(dx) <= s.half_width;
}

std::vector<PhantomShape> random_shapes(const PhantomSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> count_dist(spec.min_shapes, spec.max_shapes);
  std::uniform_int_distribution<std::size_t> kind_dist(0, spec.kinds.size() - 1);
  std::uniform_int_distribution<std::size_t> level_dist(1, spec.levels.size() - 1);
  double rows = static_cast<double>(spec.image_shape[0]);
  double cols = static_cast<double>(spec.image_shape[1]);
  double max_extent = std::max(2.0, std::min(rows, cols) / 5.0);
  std::uniform_real_distribution<double> extent_dist(std::min(2.0, max_extent), max_extent);

  std::size_t n = count_dist(rng);
  std::vector<PhantomShape> shapes;
  shapes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    PhantomShape s;
    s.kind = spec.kinds[kind_dist(rng)];
    s.level = level_dist(rng);
    s.half_height = extent_dist(rng);
    s.half_width = s.kind == ShapeKind::Disk ? s.half_height : extent_dist(rng);
    std::uniform_real_distribution<double> cy(s.half_height, rows - s.half_height);
    std::uniform_real_distribution<double> cx(s.half_width, cols - s.half_width);
    s.cy = cy(rng);
    s.cx = cx(rng);
    shapes.push_back(s);
  }
  return shapes;
}

double mse(const SignalGrid& a, const SignalGrid& b) {
  require_shape(b.shape(), a.shape(), "mse");
  return (a - b).squared_norm() / static_cast<double>(a.size());
}

}  // namespace

void validate(const PhantomSpec& spec) {
  if (spec.image_shape.size() != 2) throw DimensionError("phantoms are rank-2 images");
  if (spec.image_shape[0] == 0 || spec.image_shape[1] == 0) throw DimensionError("empty phantom shape");
  check_levels(spec.levels);
  if (spec.shapes.empty()) {
    if (spec.min_shapes > spec.max_shapes) throw ConfigError("min_shapes exceeds max_shapes");
    if (spec.max_shapes > 0 && spec.kinds.empty()) throw ConfigError("no shape kinds allowed");
    if (spec.max_shapes > 0 && std::min(spec.image_shape[0], spec.image_shape[1]) < 4)
      throw ConfigError("image too small for random shapes");
  }
  for (const auto& s : spec.shapes) check_shape_fits(s, spec.image_shape, spec.levels.size());
}

Phantom gen_phantom(const PhantomSpec& spec) {
  validate(spec);
  Phantom out;
  out.shapes = spec.shapes.empty() ? random_shapes(spec) : spec.shapes;
  const std::size_t rows = spec.image_shape[0], cols = spec.image_shape[1];
  out.labels.shape = spec.image_shape;
  out.labels.levels = spec.levels;
  out.labels.labels.assign(rows * cols, 0);
  for (const auto& s : out.shapes) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        if (covers(s, static_cast<double>(r) + 0.5, static_cast<double>(c) + 0.5)) out.labels.labels[r * cols + c] = s.level;
  }
  out.truth = SignalGrid(spec.image_shape);
  for (std::size_t i = 0; i < out.truth.size(); ++i) out.truth[i] = spec.levels[out.labels.labels[i]];
  return out;
}

SignalGrid gaussian_psf(std::size_t extent, double sigma) {
  if (extent == 0 || extent % 2 == 0) throw ConfigError("psf extent must be odd");
  if (!(sigma > 0.0)) throw ConfigError("psf sigma must be positive");
  SignalGrid k({extent, extent});
  const double c = static_cast<double>(extent / 2);
  double total = 0.0;
  for (std::size_t r = 0; r < extent; ++r)
    for (std::size_t q = 0; q < extent; ++q) {
      double dy = static_cast<double>(r) - c, dx = static_cast<double>(q) - c;
      double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      k[r * extent + q] = v;
      total += v;
    }
  k *= 1.0 / total;
  return k;
}

void validate(const DegradationSpec& spec) {
  if (spec.psf.size() == 0) throw ConfigError("psf is empty");
  double total = 0.0;
  for (double v : spec.psf.values()) {
    if (!(v >= 0.0)) throw ConfigError("psf entries must be nonnegative");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("psf must sum to 1");
  if (!(spec.noise_sigma >= 0.0) || !std::isfinite(spec.noise_sigma))
    throw ConfigError("noise_sigma must be nonnegative");
  if (spec.downsample_factor == 0) throw ConfigError("downsample_factor must be positive");
}

LinearOp degradation_operator(const Shape& image_shape, const DegradationSpec& spec) {
  validate(spec);
  if (spec.psf.rank() != image_shape.size()) throw DimensionError("psf rank differs from image rank");
  for (std::size_t e : image_shape)
    if (e % spec.downsample_factor != 0)
      throw ConfigError("downsample_factor " + std::to_string(spec.downsample_factor) +
                        " does not divide image extent " + std::to_string(e));
  LinearOp blur = make_conv2d(spec.psf, image_shape, spec.boundary);
  if (spec.downsample_factor == 1) return blur;
  return compose(make_downsample(image_shape, spec.downsample_factor), blur);
}

SignalGrid simulate_ir(const SignalGrid& truth, const DegradationSpec& spec) {
  LinearOp h = degradation_operator(truth.shape(), spec);
  SignalGrid g = apply(h, truth);
  if (spec.noise_sigma > 0.0) {
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += noise(rng);
  }
  return g;
}

SignalGrid upsample_nearest(const SignalGrid& x, std::size_t factor) {
  if (factor == 0) throw ConfigError("upsample factor must be positive");
  if (factor == 1) return x;
  if (x.rank() == 1) {
    SignalGrid out({x.size() * factor});
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i / factor];
    return out;
  }
  if (x.rank() != 2) throw DimensionError("upsample_nearest supports rank 1 and 2");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  SignalGrid out({rows * factor, cols * factor});
  const std::size_t oc = cols * factor;
  for (std::size_t r = 0; r < rows * factor; ++r)
    for (std::size_t c = 0; c < oc; ++c) out[r * oc + c] = x[(r / factor) * cols + c / factor];
  return out;
}

std::vector<double> midpoint_cuts(const std::vector<double>& levels) {
  std::vector<double> cuts;
  for (std::size_t i = 1; i < levels.size(); ++i) cuts.push_back(0.5 * (levels[i - 1] + levels[i]));
  return cuts;
}

LabelImage quantize(const SignalGrid& x, const std::vector<double>& cuts, const std::vector<double>& levels) {
  if (cuts.size() + 1 != levels.size())
    throw ConfigError("expected " + std::to_string(levels.size() - 1) + " cut points, got " +
                      std::to_string(cuts.size()));
  for (std::size_t i = 0; i < cuts.size(); ++i) {
    if (!std::isfinite(cuts[i])) throw ConfigError("cut points must be finite");
    if (i > 0 && !(cuts[i] > cuts[i - 1])) throw ConfigError("cut points must increase strictly");
  }
  LabelImage out{x.shape(), std::vector<std::size_t>(x.size()), levels};
  for (std::size_t i = 0; i < x.size(); ++i)
    out.labels[i] = static_cast<std::size_t>(std::upper_bound(cuts.begin(), cuts.end(), x[i]) - cuts.begin());
  return out;
}

ChainResult run_ir_chain(const SignalGrid& g, const UnrolledModel& denoiser, const Deconvolver& deconvolver,
                         const std::vector<double>& cuts, const std::vector<double>& levels) {
  require_shape(denoiser.input_shape, g.shape(), "run_ir_chain denoiser input");
  ChainResult out;
  out.denoised = predict(denoiser, g);
  out.restored = std::visit(
      [&](const auto& m) {
        require_shape(m.input_shape, out.denoised.shape(), "run_ir_chain deconvolver input");
        return predict(m, out.denoised);
      },
      deconvolver);
  out.seg = quantize(out.restored, cuts, levels);
  return out;
}

SegReport seg_metrics(const LabelImage& pred, const LabelImage& truth) {
  if (pred.levels.size() != truth.levels.size())
    throw ConfigError("label count mismatch: " + std::to_string(pred.levels.size()) + " vs " +
                      std::to_string(truth.levels.size()));
  require_shape(truth.shape, pred.shape, "seg_metrics");
  const std::size_t n = truth.levels.size();
  if (pred.labels.size() != truth.labels.size() || truth.labels.size() != shape_size(truth.shape))
    throw DimensionError("seg_metrics: label array sizes disagree");
  SegReport rep;
  rep.confusion.assign(n, std::vector<std::size_t>(n, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.labels.size(); ++i) {
    std::size_t t = truth.labels[i], p = pred.labels[i];
    if (t >= n || p >= n) throw ConfigError("label index exceeds level count");
    ++rep.confusion[t][p];
    if (t == p) ++correct;
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t l = 0; l < n; ++l) {
    std::size_t row = 0, col = 0;
    for (std::size_t m = 0; m < n; ++m) {
      row += rep.confusion[l][m];
      col += rep.confusion[m][l];
    }
    double tp = static_cast<double>(rep.confusion[l][l]);
    rep.precision.push_back(col ? tp / static_cast<double>(col) : nan);
    rep.recall.push_back(row ? tp / static_cast<double>(row) : nan);
  }
  rep.accuracy = truth.labels.empty() ? 1.0 : static_cast<double>(correct) / static_cast<double>(truth.labels.size());
  return rep;
}

// ---- image files ----

std::string encode_pgm(const PgmImage& img) {
  if (img.samples.size() != img.rows * img.cols) throw DimensionError("pgm: sample count mismatch");
  std::string out = "P5\n" + std::to_string(img.cols) + " " + std::to_string(img.rows) + "\n65535\n";
  out.reserve(out.size() + 2 * img.samples.size());
  for (std::uint16_t s : img.samples) {
    out.push_back(static_cast<char>(s >> 8));
    out.push_back(static_cast<char>(s & 0xff));
  }
  return out;
}

PgmImage decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      char ch = bytes[pos];
      if (ch == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::size_t {
    skip_space();
    std::size_t start = pos, v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > (std::size_t{1} << 40)) throw IoError("pgm: header value too large");
      ++pos;
    }
    if (pos == start) throw IoError("pgm: malformed header");
    return v;
  };
  if (bytes.substr(0, 2) != "P5") throw IoError("pgm: not a binary P5 file");
  pos = 2;
  PgmImage img;
  img.cols = number();
  img.rows = number();
  std::size_t maxval = number();
  if (maxval == 0 || maxval > 65535) throw IoError("pgm: bad maxval");
  if (pos >= bytes.size()) throw IoError("pgm: truncated header");
  ++pos;  // single whitespace before the raster
  const std::size_t bps = maxval > 255 ? 2 : 1;
  const std::size_t n = img.rows * img.cols;
  if (bytes.size() - pos < n * bps) throw IoError("pgm: truncated raster");
  img.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto b0 = static_cast<unsigned char>(bytes[pos + i * bps]);
    img.samples[i] = bps == 2 ? static_cast<std::uint16_t>(
                                    (b0 << 8) | static_cast<unsigned char>(bytes[pos + i * bps + 1]))
                              : b0;
  }
  return img;
}

namespace {
std::pair<std::size_t, std::size_t> rows_cols(const Shape& s) {
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  throw DimensionError("pgm images are rank 1 or 2");
}
}  // namespace

PgmImage to_pgm(const SignalGrid& x, double lo, double hi) {
  if (!(hi > lo)) throw ConfigError("pgm value range must satisfy lo < hi");
  auto [rows, cols] = rows_cols(x.shape());
  PgmImage img{rows, cols, std::vector<std::uint16_t>(x.size())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    double t = std::clamp((x[i] - lo) / (hi - lo), 0.0, 1.0);
    img.samples[i] = static_cast<std::uint16_t>(std::lround(t * 65535.0));
  }
  return img;
}

SignalGrid from_pgm(const PgmImage& img, double lo, double hi) {
  SignalGrid x({img.rows, img.cols});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = lo + (hi - lo) * (img.samples[i] / 65535.0);
  return x;
}

PgmImage labels_to_pgm(const LabelImage& labels) {
  auto [rows, cols] = rows_cols(labels.shape);
  PgmImage img{rows, cols, std::vector<std::uint16_t>(labels.labels.size())};
  for (std::size_t i = 0; i < img.samples.size(); ++i) img.samples[i] = static_cast<std::uint16_t>(labels.labels[i]);
  return img;
}

void write_image(const std::filesystem::path& path, const SignalGrid& x, double lo, double hi,
                 const std::map<std::string, std::string>& fields) {
  write_file_atomic(path, encode_pgm(to_pgm(x, lo, hi)));
  detail::Json meta = {{"format", "invnet-image-meta"},
                       {"version", 1},
                       {"shape", x.shape()},
                       {"value_min", lo},
                       {"value_max", hi},
                       {"fields", fields}};
  write_file_atomic(path.string() + ".json", meta.dump(2) + "\n");
}

void write_labels(const std::filesystem::path& path, const LabelImage& labels,
                  const std::map<std::string, std::string>& fields) {
  write_file_atomic(path, encode_pgm(labels_to_pgm(labels)));
  detail::Json meta = {{"format", "invnet-label-meta"},
                       {"version", 1},
                       {"shape", labels.shape},
                       {"levels", labels.levels},
                       {"fields", fields}};
  write_file_atomic(path.string() + ".json", meta.dump(2) + "\n");
}

SignalGrid read_image(const std::filesystem::path& path) {
  PgmImage img = decode_pgm(read_file(path));
  detail::Json meta;
  try {
    meta = detail::Json::parse(read_file(path.string() + ".json"));
  } catch (const detail::Json::exception& e) {
    throw IoError("image sidecar: " + std::string(e.what()));
  }
  try {
    SignalGrid flat = from_pgm(img, detail::member(meta, "value_min").get<double>(),
                               detail::member(meta, "value_max").get<double>());
    Shape shape = detail::member(meta, "shape").get<Shape>();
    if (shape_size(shape) != flat.size()) throw IoError("image sidecar shape disagrees with raster");
    return SignalGrid(shape, flat.values());
  } catch (const detail::Json::exception& e) {
    throw IoError("image sidecar: " + std::string(e.what()));
  }
}

// ---- desk-scale experiment ----

IrDemoModels build_ir_models(const IrDemoConfig& cfg) {
  DegradationSpec deg{gaussian_psf(cfg.psf_extent, cfg.psf_sigma), cfg.noise_sigma, cfg.downsample_factor, 0,
                      Boundary::Circular};
  LinearOp h = degradation_operator(cfg.phantom.image_shape, deg);
  UnrolledModel denoiser =
      build_from_physics(make_identity(h.codomain_shape()), UnrollScheme::Ista, cfg.denoise_depth, std::nullopt,
                         cfg.denoise_lambda);
  if (cfg.deconv_kind == DeconvolverKind::Ista)
    return {std::move(denoiser),
            build_from_physics(h, UnrollScheme::Ista, cfg.deconv_depth, std::nullopt, cfg.deconv_lambda)};
  SpectralModel sm = build_spectral_model(h, SpectralMode::Fourier);
  auto filt = tikhonov_filter(sm, cfg.deconv_lambda);
  set_filter(sm, std::span<const double>(filt));
  return {std::move(denoiser), std::move(sm)};
}

std::vector<IrCase> run_ir_suite(const IrDemoConfig& cfg, const IrDemoModels& models) {
  const auto cuts = midpoint_cuts(cfg.phantom.levels);
  std::vector<IrCase> cases;
  cases.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) {
    IrCase c;
    c.phantom_seed = cfg.phantom_seed + i;
    c.noise_seed = cfg.noise_seed + i;
    PhantomSpec ps = cfg.phantom;
    ps.seed = c.phantom_seed;
    c.phantom = gen_phantom(ps);
    DegradationSpec deg{gaussian_psf(cfg.psf_extent, cfg.psf_sigma), cfg.noise_sigma, cfg.downsample_factor,
                        c.noise_seed, Boundary::Circular};
    SignalGrid g = simulate_ir(c.phantom.truth, deg);
    c.observed = upsample_nearest(g, cfg.downsample_factor);
    c.chain = run_ir_chain(g, models.denoiser, models.deconvolver, cuts, cfg.phantom.levels);
    c.observed_seg = quantize(c.observed, cuts, cfg.phantom.levels);
    c.mse_observed = mse(c.observed, c.phantom.truth);
    c.mse_restored = mse(c.chain.restored, c.phantom.truth);
    c.acc_observed = seg_metrics(c.observed_seg, c.phantom.labels).accuracy;
    c.acc_restored = seg_metrics(c.chain.seg, c.phantom.labels).accuracy;
    cases.push_back(std::move(c));
  }
  return cases;
}

}  // namespace invnet
