#include "invnet/spectral.hpp"

#include <algorithm>
#include <cstdio>

#include <fftw3.h>

#include "invnet/analytic.hpp"
#include "invnet/base64.hpp"
#include "invnet/errors.hpp"
#include "op_json.hpp"

namespace invnet {

namespace {

using detail::Json;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr const char* kFormat = "invnet-unrolled-model";

// Extents as (rows, cols); rank-1 signals are a single row.
std::pair<std::size_t, std::size_t> plane(const Shape& s) {
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  throw ConfigError("spectral stages support rank-1 and rank-2 signals, got " + shape_to_string(s));
}

// Flat index of the frequency -w.
std::size_t mirror(std::size_t i, const Shape& s) {
  const auto [rows, cols] = plane(s);
  const std::size_t r = i / cols, c = i % cols;
  return ((rows - r) % rows) * cols + (cols - c) % cols;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fingerprint(const LinearOp& h) {
  detail::OpWriter w;
  w.add(h);
  return fnv1a_hex(w.take().dump());
}

std::vector<Complex> to_complex(const SignalGrid& x) {
  std::vector<Complex> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i];
  return out;
}

void check_conjugate_symmetric(std::span<const Complex> f, const Shape& s) {
  const double scale = 1.0 + std::abs(*std::max_element(f.begin(), f.end(), [](Complex a, Complex b) {
                             return std::abs(a) < std::abs(b);
                           }));
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (std::abs(f[i] - std::conj(f[mirror(i, s)])) > 1e-12 * scale) {
      throw ConfigError("fourier filter must satisfy filter(-w) == conj(filter(w))");
    }
  }
}

}  // namespace

std::vector<Complex> unitary_dft(std::span<const Complex> x, const Shape& shape, bool inverse) {
  const auto [rows, cols] = plane(shape);
  if (x.size() != rows * cols) throw DimensionError("dft input does not match " + shape_to_string(shape));
  std::vector<Complex> in(x.begin(), x.end()), out(x.size());
  auto* pin = reinterpret_cast<fftw_complex*>(in.data());
  auto* pout = reinterpret_cast<fftw_complex*>(out.data());
  const int sign = inverse ? FFTW_BACKWARD : FFTW_FORWARD;
  // FFTW_ESTIMATE picks the same algorithm on every run, keeping results reproducible.
  fftw_plan p = rows == 1 ? fftw_plan_dft_1d(static_cast<int>(cols), pin, pout, sign, FFTW_ESTIMATE)
                          : fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), pin, pout, sign,
                                             FFTW_ESTIMATE);
  if (!p) throw ConfigError("fftw could not plan a transform of shape " + shape_to_string(shape));
  fftw_execute(p);
  fftw_destroy_plan(p);
  const double norm = 1.0 / std::sqrt(static_cast<double>(x.size()));
  for (auto& v : out) v *= norm;
  return out;
}

std::vector<Complex> transfer_function(const LinearOp& h) {
  if (!is_circular_shift_invariant(h)) {
    throw ConfigError("fourier mode needs a circular shift-invariant operator, got " + h.describe());
  }
  SignalGrid impulse(h.domain_shape());
  impulse[0] = 1.0;
  const SignalGrid response = h.apply(impulse);
  auto t = unitary_dft(to_complex(response), h.domain_shape(), false);
  const double scale = std::sqrt(static_cast<double>(t.size()));
  for (auto& v : t) v *= scale;
  return t;
}

SvdFactors svd_decompose(const LinearOp& h, GramSide side) {
  const std::size_t n = side == GramSide::Range ? h.codomain_size() : h.domain_size();
  if (n > kMaxDenseDomain) {
    throw ConfigError("svd_decompose materializes a " + std::to_string(n) + "-square gram; limit is " +
                      std::to_string(kMaxDenseDomain));
  }
  const Eigen::MatrixXd m = materialize(h);
  const Eigen::MatrixXd gram = side == GramSide::Range ? Eigen::MatrixXd(m * m.transpose())
                                                       : Eigen::MatrixXd(m.transpose() * m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  if (es.info() != Eigen::Success) throw SingularityError("eigendecomposition did not converge");
  SvdFactors f;
  f.delta = es.eigenvalues().reverse().cwiseMax(0.0);
  f.u = es.eigenvectors().rowwise().reverse();
  f.v = f.u;
  f.source = (side == GramSide::Range ? "H H^t of " : "H^t H of ") + h.describe();
  return f;
}

std::string to_string(SpectralMode m) { return m == SpectralMode::Svd ? "svd" : "fourier"; }

SpectralMode spectral_mode_from_string(const std::string& name) {
  if (name == "svd") return SpectralMode::Svd;
  if (name == "fourier") return SpectralMode::Fourier;
  throw ConfigError("unknown spectral mode '" + name + "' (expected svd or fourier)");
}

SpectralModel build_spectral_model(const LinearOp& h, SpectralMode mode) {
  SpectralModel m;
  m.mode = mode;
  m.adjoint_stage = adjoint_of(h);
  m.input_shape = h.codomain_shape();
  m.output_shape = h.domain_shape();
  m.psf_hash = fingerprint(h);
  const std::size_t n = h.domain_size();
  if (mode == SpectralMode::Fourier) {
    plane(m.output_shape);
    const auto t = transfer_function(h);
    m.spectrum.resize(n);
    for (std::size_t i = 0; i < n; ++i) m.spectrum[i] = std::norm(t[i]);
    m.filter_re.assign(n, 1.0);
    m.filter_im.assign(n, 0.0);
    return m;
  }
  const SvdFactors f = svd_decompose(h, GramSide::Domain);
  m.basis = f.v;
  m.spectrum.assign(f.delta.data(), f.delta.data() + f.delta.size());
  // Null-space directions never reach the filter through H^t; start them at 0.
  const double tol = 1e-12 * static_cast<double>(n) * std::max(m.spectrum.front(), 1e-300);
  m.filter_re.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.filter_re[i] = m.spectrum[i] > tol ? 1.0 : 0.0;
  return m;
}

std::vector<Complex> analysis(const SpectralModel& model, const SignalGrid& x) {
  require_shape(model.output_shape, x.shape(), "spectral analysis input");
  if (model.mode == SpectralMode::Fourier) return unitary_dft(to_complex(x), model.output_shape, false);
  const Eigen::VectorXd c = model.basis.transpose() * x.vec();
  return std::vector<Complex>(c.data(), c.data() + c.size());
}

namespace {

// Filtered and synthesized signal given the analysis coefficients.
SignalGrid synthesize(const SpectralModel& m, std::span<const Complex> coeffs) {
  const std::size_t n = coeffs.size();
  SignalGrid out(m.output_shape);
  if (m.mode == SpectralMode::Svd) {
    Eigen::VectorXd c(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) c[static_cast<Eigen::Index>(i)] = m.filter_re[i] * coeffs[i].real();
    out.vec() = m.basis * c;
    return out;
  }
  std::vector<Complex> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = Complex(m.filter_re[i], m.filter_im[i]) * coeffs[i];
  const auto back = unitary_dft(y, m.output_shape, true);
  for (std::size_t i = 0; i < n; ++i) out[i] = back[i].real();
  return out;
}

}  // namespace

SignalGrid predict(const SpectralModel& model, const SignalGrid& g) {
  require_shape(model.input_shape, g.shape(), "spectral model input");
  return synthesize(model, analysis(model, model.adjoint_stage.apply(g)));
}

std::vector<double> tikhonov_spectrum(const LinearOp& h, double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("tikhonov_spectrum needs lambda > 0");
  const auto t = transfer_function(h);
  std::vector<double> f(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) f[i] = 1.0 / (std::norm(t[i]) + lambda);
  return f;
}

std::vector<double> tikhonov_filter(const SpectralModel& model, double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("tikhonov filter needs lambda > 0");
  std::vector<double> f(model.spectrum.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = 1.0 / (model.spectrum[i] + lambda);
  return f;
}

void set_filter(SpectralModel& model, std::span<const double> values) {
  if (values.size() != model.filter_re.size()) {
    throw DimensionError("filter has " + std::to_string(values.size()) + " entries, model expects " +
                         std::to_string(model.filter_re.size()));
  }
  model.filter_re.assign(values.begin(), values.end());
  if (model.mode == SpectralMode::Fourier) model.filter_im.assign(values.size(), 0.0);
}

void set_filter(SpectralModel& model, std::span<const Complex> values) {
  if (values.size() != model.filter_re.size()) throw DimensionError("filter size does not match the model");
  if (model.mode == SpectralMode::Svd) throw ConfigError("svd-mode filters are real");
  check_conjugate_symmetric(values, model.output_shape);
  for (std::size_t i = 0; i < values.size(); ++i) {
    model.filter_re[i] = values[i].real();
    model.filter_im[i] = values[i].imag();
  }
}

std::vector<CensusEntry> parameter_census(const SpectralModel& model) {
  CensusEntry e;
  e.block = 0;
  e.role = BlockRole::Filter;
  e.kind = BlockKind::Dense;
  e.size = trainable_values(model).size();
  e.layers = {0};
  return {e};
}

std::vector<double> trainable_values(const SpectralModel& model) {
  if (model.mode == SpectralMode::Svd) return model.filter_re;
  std::vector<double> v;
  for (std::size_t i = 0; i < model.filter_re.size(); ++i) {
    const std::size_t j = mirror(i, model.output_shape);
    if (j == i) {
      v.push_back(model.filter_re[i]);
    } else if (i < j) {
      v.push_back(model.filter_re[i]);
      v.push_back(model.filter_im[i]);
    }
  }
  return v;
}

void set_trainable_values(SpectralModel& model, std::span<const double> values) {
  if (values.size() != trainable_values(model).size()) throw DimensionError("trainable value count mismatch");
  if (model.mode == SpectralMode::Svd) {
    model.filter_re.assign(values.begin(), values.end());
    return;
  }
  std::size_t at = 0;
  for (std::size_t i = 0; i < model.filter_re.size(); ++i) {
    const std::size_t j = mirror(i, model.output_shape);
    if (j == i) {
      model.filter_re[i] = values[at++];
      model.filter_im[i] = 0.0;
    } else if (i < j) {
      model.filter_re[i] = model.filter_re[j] = values[at++];
      model.filter_im[i] = values[at++];
      model.filter_im[j] = -model.filter_im[i];
    }
  }
}

double batch_loss(const SpectralModel& model, const std::vector<Example>& pool, std::span<const std::size_t> idx,
                  const LossSpec& spec, std::vector<double>* grad) {
  if (idx.empty()) throw ConfigError("loss needs a nonempty batch");
  if (!(spec.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  const std::size_t n = model.filter_re.size();
  std::vector<double> g_re(n, 0.0), g_im(n, 0.0);
  double total = 0.0;
  for (std::size_t k : idx) {
    const Example& ex = pool.at(k);
    require_shape(model.input_shape, ex.g.shape(), "spectral model input");
    require_shape(model.output_shape, ex.f.shape(), "training target");
    const auto coeffs = analysis(model, model.adjoint_stage.apply(ex.g));
    SignalGrid r = synthesize(model, coeffs) - ex.f;
    total += r.squared_norm();
    if (!grad) continue;
    r *= 2.0;
    const auto d = analysis(model, r);
    for (std::size_t i = 0; i < n; ++i) {
      const Complex p = coeffs[i] * std::conj(d[i]);
      g_re[i] += p.real();
      g_im[i] -= p.imag();
    }
  }
  const std::vector<double> params = trainable_values(model);
  double decay = 0.0;
  for (double p : params) decay += p * p;
  total += spec.weight_decay * decay;
  if (!grad) return total;

  grad->clear();
  if (model.mode == SpectralMode::Svd) {
    *grad = g_re;
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = mirror(i, model.output_shape);
      if (j == i) {
        grad->push_back(g_re[i]);
      } else if (i < j) {
        grad->push_back(g_re[i] + g_re[j]);
        grad->push_back(g_im[i] - g_im[j]);
      }
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) (*grad)[i] += 2.0 * spec.weight_decay * params[i];
  return total;
}

std::string serialize_spectral(const SpectralModel& m) {
  detail::OpWriter ops;
  const std::size_t adj = ops.add(m.adjoint_stage);
  Json s;
  s["mode"] = to_string(m.mode);
  s["adjoint_stage"] = adj;
  s["psf_hash"] = m.psf_hash;
  s["spectrum"] = detail::doubles_json(m.spectrum);
  s["filter_re"] = detail::doubles_json(m.filter_re);
  if (m.mode == SpectralMode::Fourier) {
    s["filter_im"] = detail::doubles_json(m.filter_im);
  } else {
    s["basis_columns"] = detail::doubles_json(std::span<const double>(m.basis.data(), static_cast<std::size_t>(m.basis.size())));
  }
  Json doc;
  doc["format"] = kFormat;
  doc["version"] = 1;
  doc["scheme"] = "spectral";
  doc["depth"] = 1;
  doc["tied"] = true;
  doc["input_shape"] = detail::shape_json(m.input_shape);
  doc["output_shape"] = detail::shape_json(m.output_shape);
  doc["layers"] = Json::array();
  doc["blocks"] = Json::array();
  doc["operators"] = ops.take();
  doc["spectral"] = std::move(s);
  return doc.dump(2) + "\n";
}

SpectralModel deserialize_spectral(std::string_view text) {
  try {
    const Json doc = Json::parse(text);
    if (doc.value("format", "") != kFormat || !doc.contains("spectral")) {
      throw IoError("not a spectral model document");
    }
    if (detail::member(doc, "version").get<int>() != 1) throw IoError("unsupported model format version");
    const Json& s = doc.at("spectral");
    detail::OpReader ops(detail::member(doc, "operators"));
    SpectralModel m;
    m.mode = spectral_mode_from_string(detail::member(s, "mode").get<std::string>());
    m.adjoint_stage = ops.get(detail::member(s, "adjoint_stage").get<std::size_t>());
    m.input_shape = detail::shape_from_json(detail::member(doc, "input_shape"));
    m.output_shape = detail::shape_from_json(detail::member(doc, "output_shape"));
    m.psf_hash = detail::member(s, "psf_hash").get<std::string>();
    m.spectrum = detail::doubles_from_json(detail::member(s, "spectrum"));
    m.filter_re = detail::doubles_from_json(detail::member(s, "filter_re"));
    const std::size_t n = shape_size(m.output_shape);
    if (m.mode == SpectralMode::Fourier) {
      m.filter_im = detail::doubles_from_json(detail::member(s, "filter_im"));
    } else {
      const auto cols = detail::doubles_from_json(detail::member(s, "basis_columns"));
      if (cols.size() != n * n) throw IoError("basis has the wrong size");
      m.basis = Eigen::Map<const Eigen::MatrixXd>(cols.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    }
    if (m.spectrum.size() != n || m.filter_re.size() != n ||
        (m.mode == SpectralMode::Fourier && m.filter_im.size() != n)) {
      throw IoError("spectral stanza sizes do not match the output shape");
    }
    require_shape(m.input_shape, m.adjoint_stage.domain_shape(), "spectral adjoint stage domain");
    require_shape(m.output_shape, m.adjoint_stage.codomain_shape(), "spectral adjoint stage codomain");
    return m;
  } catch (const Json::exception& e) {
    throw IoError(std::string("malformed spectral model document: ") + e.what());
  }
}

UnrolledModel fixed_plus_trainable(const LinearOp& h, const TwoStageOptions& opt) {
  ParamBlock b;
  b.role = BlockRole::Bias;
  b.in_shape = h.domain_shape();
  b.out_shape = h.domain_shape();
  const std::size_t n = h.domain_size();
  if (opt.kernel_extent) {
    if (opt.init != BInit::Identity) {
      throw ConfigError("a kernel-structured B supports identity initialization only");
    }
    b.kind = BlockKind::Kernel;
    b.kernel_shape = *opt.kernel_extent;
    b.values.assign(shape_size(b.kernel_shape), 0.0);
    if (b.values.empty()) throw ConfigError("kernel extent must be nonempty");
    b.values[b.values.size() / 2] = 1.0;
  } else {
    if (n > kMaxDenseDomain) throw ConfigError("dense B would exceed the dense domain limit");
    b.kind = BlockKind::Dense;
    const Eigen::MatrixXd init =
        opt.init == BInit::Tikhonov ? tikhonov_filter_matrix(h, opt.lambda)
                                    : Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    b.values.resize(n * n);
    Eigen::Map<RowMatrix>(b.values.data(), init.rows(), init.cols()) = init;
  }

  UnrolledModel m;
  m.scheme = "two_stage";
  m.blocks.push_back(std::move(b));
  LayerSpec l;
  l.bias.pre = adjoint_of(h);
  l.bias.block = 0;
  l.activation = opt.activation;
  m.layers.push_back(std::move(l));
  m.input_shape = h.codomain_shape();
  m.output_shape = h.domain_shape();
  m.alpha = 1.0;
  m.lambda = opt.init == BInit::Tikhonov ? opt.lambda : 0.0;
  validate(m);
  return m;
}

}  // namespace invnet
