#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <random>

#include "config.hpp"
#include "invnet/analytic.hpp"
#include "invnet/cli.hpp"
#include "invnet/csv.hpp"
#include "invnet/datasets.hpp"
#include "invnet/errors.hpp"
#include "invnet/fileio.hpp"
#include "invnet/iterative.hpp"
#include "invnet/pipeline.hpp"
#include "invnet/spectral.hpp"
#include "invnet/training.hpp"
#include "invnet/unrolled.hpp"

namespace invnet {

namespace fs = std::filesystem;

std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = seed + h + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

using cli::Config;

/// A passed check that must fail the process with the numerical status.
class CheckFailed : public Error {
 public:
  using Error::Error;
};

struct Run {
  std::string command;
  Config cfg;
  fs::path out;
  std::uint64_t seed = 0;
  bool quiet = false;
  std::ostream* log = nullptr;

  void write(const std::string& rel, std::string_view content) const { write_file_atomic(out / rel, content); }
  void say(const std::string& line) const {
    if (!quiet) *log << line << "\n";
  }
};

// ---- shared builders ----

SignalGrid gaussian_kernel(std::size_t rank, std::size_t extent, double sigma) {
  if (rank == 2) return gaussian_psf(extent, sigma);
  SignalGrid g = gaussian_psf(extent, sigma);
  SignalGrid k({extent});
  for (std::size_t i = 0; i < extent; ++i)
    for (std::size_t j = 0; j < extent; ++j) k[i] += g[i * extent + j];
  return k;
}

struct OpDefaults {
  std::string kind = "conv2d";
  Shape shape{32};
  std::size_t rows = 6;
};

LinearOp build_operator(Run& run, const OpDefaults& d) {
  Config& c = run.cfg;
  const std::string kind = c.text("operator", "kind", d.kind);
  std::mt19937_64 rng(derive_seed(run.seed, "operator"));
  std::normal_distribution<double> normal(0.0, 1.0);

  if (kind == "dense") {
    const std::size_t cols = shape_size(c.shape("operator", "shape", d.shape));
    const std::size_t rows = c.count("operator", "rows", d.rows);
    if (rows == 0 || cols == 0) throw ConfigError("[operator] dense needs positive rows and shape");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = normal(rng) / std::sqrt(static_cast<double>(rows));
    return make_dense(m);
  }
  if (kind == "identity") return make_identity(c.shape("operator", "shape", d.shape));
  if (kind == "diagonal") {
    const Shape s = c.shape("operator", "shape", d.shape);
    std::vector<double> gains(shape_size(s));
    for (double& v : gains) v = normal(rng);
    return make_diagonal(gains, s);
  }
  if (kind == "radon") {
    const Shape s = c.shape("operator", "shape", Shape{8, 8});
    if (s.size() != 2 || s[0] != s[1]) throw ConfigError("[operator] radon needs a square shape such as 8x8");
    const std::size_t angles = c.count("operator", "angles", 4);
    std::size_t auto_det = static_cast<std::size_t>(std::ceil(std::sqrt(2.0) * static_cast<double>(s[0])));
    if (auto_det % 2 != s[0] % 2) ++auto_det;
    const std::size_t det = c.count("operator", "detectors", auto_det);
    if (angles == 0 || det == 0) throw ConfigError("[operator] radon needs angles and detectors");
    return make_radon(s, uniform_angles(angles), det);
  }
  if (kind == "conv2d" || kind == "composed" || kind == "downsample") {
    const Shape s = c.shape("operator", "shape", d.shape);
    if (s.empty() || s.size() > 2) throw ConfigError("[operator] shape must have rank 1 or 2");
    if (kind == "downsample") return make_downsample(s, c.count("operator", "factor", 2));
    const std::string kernel = c.text("operator", "kernel", "gaussian");
    const std::size_t extent = c.count("operator", "kernel_extent", 5);
    if (extent % 2 == 0) throw ConfigError("[operator] kernel_extent must be odd");
    const Boundary boundary = boundary_from_string(c.text("operator", "boundary", "circular"));
    SignalGrid k;
    if (kernel == "gaussian") {
      k = gaussian_kernel(s.size(), extent, c.real("operator", "kernel_sigma", 1.0));
    } else if (kernel == "random") {
      k = SignalGrid(Shape(s.size(), extent));
      for (double& v : k.data()) v = normal(rng);
    } else {
      throw ConfigError("[operator] kernel must be gaussian or random, got '" + kernel + "'");
    }
    LinearOp conv = make_conv2d(k, s, boundary);
    if (kind == "conv2d") return conv;
    return compose(make_downsample(s, c.count("operator", "factor", 2)), conv);
  }
  throw ConfigError("[operator] kind '" + kind +
                    "' is not one of dense, conv2d, radon, diagonal, identity, downsample, composed");
}

struct Problem {
  LinearOp h;
  SignalGrid truth;
  SignalGrid g;
};

Problem build_problem(Run& run, const LinearOp& h) {
  Config& c = run.cfg;
  const Shape& dom = h.domain_shape();
  const std::string signal = c.text("problem", "signal", dom.size() == 2 ? "phantom" : "piecewise");
  const double sigma = c.real("problem", "noise_sigma", 0.01);
  if (!(sigma >= 0.0)) throw ConfigError("[problem] noise_sigma must be nonnegative");
  std::mt19937_64 rng(derive_seed(run.seed, "truth"));
  SignalGrid truth(dom);

  if (signal == "phantom") {
    if (dom.size() != 2) throw ConfigError("[problem] phantom signals need a rank-2 operator domain");
    PhantomSpec ps;
    ps.image_shape = dom;
    ps.levels = c.reals("problem", "levels", ps.levels);
    ps.min_shapes = c.count("problem", "min_shapes", ps.min_shapes);
    ps.max_shapes = c.count("problem", "max_shapes", ps.max_shapes);
    ps.seed = derive_seed(run.seed, "truth");
    truth = gen_phantom(ps).truth;
  } else if (signal == "piecewise" || signal == "sparse") {
    DeconvDataSpec ds;
    ds.n = truth.size();
    ds.blur_extent = 1;
    ds.signal = signal_class_from_string(signal);
    ds.spikes = std::min(c.count("problem", "spikes", 4), truth.size());
    auto f = draw_signal(ds, rng);
    truth = SignalGrid(dom, f.values());
  } else if (signal == "gaussian") {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : truth.data()) v = normal(rng);
  } else {
    throw ConfigError("[problem] signal must be phantom, piecewise, sparse or gaussian, got '" + signal + "'");
  }

  SignalGrid g = apply(h, truth);
  std::mt19937_64 noise_rng(derive_seed(run.seed, "noise"));
  std::normal_distribution<double> noise(0.0, sigma);
  if (sigma > 0.0)
    for (double& v : g.data()) v += noise(noise_rng);
  return {h, std::move(truth), std::move(g)};
}

std::string signal_csv(const SignalGrid& x) {
  CsvTable t({"index", "value"});
  for (std::size_t i = 0; i < x.size(); ++i) t.add_row({std::to_string(i), format_double(x[i])});
  return t.str();
}

std::string metrics_csv(const SignalGrid& estimate, const SignalGrid& truth) {
  auto m = image_metrics(estimate, truth);
  CsvTable t({"mse", "psnr"});
  t.add_row({format_double(m.mse), format_double(m.psnr)});
  return t.str();
}

void write_picture(const Run& run, const std::string& name, const SignalGrid& x,
                   const std::map<std::string, std::string>& fields = {}) {
  if (x.rank() > 2) return;
  double lo = *std::min_element(x.values().begin(), x.values().end());
  double hi = *std::max_element(x.values().begin(), x.values().end());
  if (!(hi > lo)) hi = lo + 1.0;
  write_image(run.out / name, x, lo, hi, fields);
}

void write_reconstruction(const Run& run, const Problem& p, const SignalGrid& restored) {
  run.write("restored.csv", signal_csv(restored));
  run.write("metrics.csv", metrics_csv(restored, p.truth));
  write_picture(run, "truth.pgm", p.truth);
  write_picture(run, "observed.pgm", p.g);
  write_picture(run, "restored.pgm", restored);
  auto m = image_metrics(restored, p.truth);
  run.say("mse " + format_double(m.mse) + "  psnr " + format_double(m.psnr));
}

struct UnrollDefaults {
  std::string scheme = "ista";
  std::size_t depth = 10;
  double lambda = 0.01;
  bool tied = true;
  std::string activation = "auto";
  std::vector<std::string> promote;
};

UnrolledModel build_unrolled(Run& run, const LinearOp& h, const UnrollDefaults& d) {
  Config& c = run.cfg;
  const UnrollScheme scheme = scheme_from_string(c.text("unroll", "scheme", d.scheme));
  const std::size_t depth = c.count("unroll", "depth", d.depth);
  const auto alpha = c.real_or_auto("unroll", "alpha", std::nullopt);
  const double lambda = c.real("unroll", "lambda", d.lambda);
  const bool tied = c.flag("unroll", "tied", d.tied);
  const std::string act = c.text("unroll", "activation", d.activation);
  const auto promote = c.words("unroll", "promote", d.promote);
  std::optional<LinearOp> reg;
  if (scheme == UnrollScheme::GdReg) reg = make_identity(h.domain_shape());
  UnrolledModel m = build_from_physics(h, scheme, depth, alpha, lambda, reg, tied);
  if (act != "auto")
    for (auto& layer : m.layers) layer.activation = activation_from_string(act);
  for (const auto& p : promote) m = promote_trainable(m, promotion_from_string(p));
  return m;
}

std::string census_csv(const std::vector<CensusEntry>& census) {
  CsvTable t({"block", "role", "kind", "size", "layers"});
  for (const auto& e : census) {
    std::string layers;
    for (std::size_t i = 0; i < e.layers.size(); ++i) layers += (i ? " " : "") + std::to_string(e.layers[i]);
    t.add_row({std::to_string(e.block), to_string(e.role), to_string(e.kind), std::to_string(e.size), layers});
  }
  return t.str();
}

TrainConfig read_train_config(Run& run, LossSpec& spec, const TrainConfig& d) {
  Config& c = run.cfg;
  TrainConfig t;
  t.optimizer = optimizer_from_string(c.text("train", "optimizer", to_string(d.optimizer)));
  t.learning_rate = c.real("train", "learning_rate", d.learning_rate);
  t.momentum = c.real("train", "momentum", d.momentum);
  t.epochs = c.count("train", "epochs", d.epochs);
  t.batch_size = c.count("train", "batch_size", d.batch_size);
  t.shuffle = c.flag("train", "shuffle", d.shuffle);
  spec.weight_decay = c.real("train", "weight_decay", spec.weight_decay);
  t.seed = derive_seed(run.seed, "train");
  validate(t);
  return t;
}

std::string history_csv(const EpochLoss& initial, const std::vector<EpochLoss>& history) {
  CsvTable t({"epoch", "train_loss", "test_loss"});
  t.add_row({"0", format_double(initial.train), format_double(initial.test)});
  for (std::size_t i = 0; i < history.size(); ++i)
    t.add_row({std::to_string(i + 1), format_double(history[i].train), format_double(history[i].test)});
  return t.str();
}

// ---- commands ----

int cmd_adjoint_test(Run& run) {
  LinearOp h = build_operator(run, {"conv2d", {8, 8}, 6});
  const std::size_t pairs = run.cfg.count("adjoint_test", "pairs", 50);
  const double tol = run.cfg.real("adjoint_test", "tolerance", 1e-10);
  const bool inject = run.cfg.flag("adjoint_test", "inject_adjoint_error", false);
  run.cfg.reject_unused();

  std::mt19937_64 rng(derive_seed(run.seed, "adjoint_test"));
  std::normal_distribution<double> normal(0.0, 1.0);
  CsvTable t({"pair", "forward_inner", "adjoint_inner", "rel_error"});
  double worst = 0.0;
  for (std::size_t i = 0; i < pairs; ++i) {
    SignalGrid x(h.domain_shape()), y(h.codomain_shape());
    for (double& v : x.data()) v = normal(rng);
    for (double& v : y.data()) v = normal(rng);
    SignalGrid hx = apply(h, x);
    SignalGrid hty = adjoint_apply(h, y);
    if (inject) hty[0] += 1e-3 * (1.0 + std::abs(hty[0]));  // negative control
    const double lhs = dot(hx, y), rhs = dot(x, hty);
    const double rel = std::abs(lhs - rhs) / (hx.norm() * y.norm() + 1e-300);
    worst = std::max(worst, rel);
    t.add_row({std::to_string(i), format_double(lhs), format_double(rhs), format_double(rel)});
  }
  run.write("adjoint_test.csv", t.str());
  run.say(h.describe() + ": worst relative error " + format_double(worst) + " over " + std::to_string(pairs) + " pairs");
  if (worst > tol) throw CheckFailed("adjoint mismatch " + format_double(worst) + " exceeds " + format_double(tol));
  return kExitOk;
}

int cmd_solve(Run& run) {
  LinearOp h = build_operator(run, {});
  Problem p = build_problem(run, h);
  Config& c = run.cfg;
  const std::string method = c.text("solver", "method", "ista");
  const double lambda = c.real("solver", "lambda", 0.01);
  SignalGrid restored;

  if (method == "tikhonov") {
    const std::string v = c.text("solver", "variant", "a");
    TikhonovVariant variant = v == "a" ? TikhonovVariant::A
                              : v == "bht" ? TikhonovVariant::BHt
                              : v == "htc" ? TikhonovVariant::HtC
                                           : throw ConfigError("[solver] variant must be a, bht or htc");
    c.reject_unused();
    restored = tikhonov_solve(h, p.g, {variant, lambda});
  } else {
    IterConfig it;
    it.lambda = lambda;
    it.max_iters = c.count("solver", "iterations", 100);
    it.alpha = c.real_or_auto("solver", "alpha", std::nullopt);
    const std::string rule = c.text("solver", "step_rule", "inverse_lipschitz");
    if (rule == "literal_eigenvalue") {
      it.step_rule = StepRule::LiteralEigenvalue;
    } else if (rule != "inverse_lipschitz") {
      throw ConfigError("[solver] step_rule must be inverse_lipschitz or literal_eigenvalue, got '" + rule + "'");
    }
    c.reject_unused();
    Trajectory tr;
    if (method == "gd") {
      tr = gd_run(h, p.g, it);
    } else if (method == "gd_reg") {
      it.reg_op = make_identity(h.domain_shape());
      tr = gd_regularized_run(h, p.g, it);
    } else if (method == "ista") {
      tr = ista_run(h, p.g, it);
    } else if (method == "fista") {
      tr = fista_run(h, p.g, it);
    } else {
      throw ConfigError("[solver] method must be tikhonov, gd, gd_reg, ista or fista, got '" + method + "'");
    }
    CsvTable t({"iteration", "objective"});
    for (std::size_t k = 0; k < tr.objective.size(); ++k) t.add_row({std::to_string(k), format_double(tr.objective[k])});
    run.write("trajectory.csv", t.str());
    restored = tr.final();
  }
  write_reconstruction(run, p, restored);
  return kExitOk;
}

int cmd_unroll(Run& run) {
  LinearOp h = build_operator(run, {});
  Problem p = build_problem(run, h);
  UnrolledModel m = build_unrolled(run, h, {});
  run.cfg.reject_unused();
  run.write("model.json", serialize_model(m));
  run.write("census.csv", census_csv(parameter_census(m)));
  ForwardResult fr = forward(m, p.g);
  CsvTable t({"layer", "output_norm", "step_norm"});
  for (std::size_t k = 0; k < fr.layers.size(); ++k) {
    const auto& l = fr.layers[k];
    t.add_row({std::to_string(k + 1), format_double(l.output.norm()), format_double((l.output - l.input).norm())});
  }
  run.write("layers.csv", t.str());
  write_reconstruction(run, p, fr.output);
  return kExitOk;
}

int cmd_train(Run& run) {
  Config& c = run.cfg;
  DeconvDataSpec ds;
  ds.n = c.count("data", "n", ds.n);
  ds.count = c.count("data", "pairs", ds.count);
  ds.train = c.count("data", "train", ds.train);
  ds.noise_sigma = c.real("data", "noise_sigma", ds.noise_sigma);
  ds.blur_extent = c.count("data", "blur_extent", ds.blur_extent);
  ds.blur_sigma = c.real("data", "blur_sigma", ds.blur_sigma);
  ds.signal = signal_class_from_string(c.text("data", "signal", to_string(ds.signal)));
  ds.min_run = c.count("data", "min_run", ds.min_run);
  ds.max_run = c.count("data", "max_run", ds.max_run);
  ds.spikes = c.count("data", "spikes", ds.spikes);
  ds.seed = derive_seed(run.seed, "data");
  validate(ds);
  LinearOp h = deconv_operator(ds);
  UnrolledModel init =
      build_unrolled(run, h, {"ista", 5, 0.02, false, "relu", {"recurrence_per_layer", "bias", "theta"}});
  LossSpec spec;
  TrainConfig tc = read_train_config(run, spec, {Optimizer::MomentumSgd, 1e-3, 0.9, 600, 1, 0, true});
  c.reject_unused();

  Dataset data = make_deconv_dataset(ds);
  auto result = train(init, data, tc, spec);
  run.write("model_init.json", serialize_model(init));
  run.write("model.json", serialize_model(result.final_model));
  run.write("census.csv", census_csv(parameter_census(init)));
  run.write("loss_history.csv", history_csv(result.initial, result.history));

  const double lambda = init.lambda;
  CsvTable t({"example", "pair", "mse_init", "mse_trained", "mse_tikhonov", "psnr_trained"});
  std::vector<ExampleMetrics> trained;
  std::size_t wins = 0;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    const Example& e = data.pairs[data.test[i]];
    auto a = image_metrics(predict(init, e.g), e.f);
    auto b = image_metrics(predict(result.final_model, e.g), e.f);
    auto k = image_metrics(tikhonov_solve(h, e.g, {TikhonovVariant::A, lambda}), e.f);
    wins += b.mse < k.mse;
    trained.push_back(b);
    t.add_row({std::to_string(i), std::to_string(data.test[i]), format_double(a.mse), format_double(b.mse),
               format_double(k.mse), format_double(b.psnr)});
  }
  run.write("metrics.csv", t.str());
  MetricReport rep = aggregate(trained);
  run.write("report.json", train_report(result.config_echo, result.initial, result.history, result.best_epoch, &rep));
  run.say("test loss " + format_double(result.initial.test) + " -> " +
          format_double(result.history.empty() ? result.initial.test : result.history[result.best_epoch - 1].test) +
          " (best epoch " + std::to_string(result.best_epoch) + "); beats Tikhonov on " + std::to_string(wins) + "/" +
          std::to_string(data.test.size()) + " test examples");
  return kExitOk;
}

int cmd_spectral(Run& run) {
  LinearOp h = build_operator(run, {});
  Problem p = build_problem(run, h);
  Config& c = run.cfg;
  SpectralModel m = build_spectral_model(h, spectral_mode_from_string(c.text("spectral", "mode", "fourier")));
  const std::string init = c.text("spectral", "init", "tikhonov");
  const double lambda = c.real("spectral", "lambda", 0.01);
  if (init == "tikhonov") {
    auto f = tikhonov_filter(m, lambda);
    set_filter(m, std::span<const double>(f));
  } else if (init != "unit") {
    throw ConfigError("[spectral] init must be tikhonov or unit, got '" + init + "'");
  }
  const std::size_t train_pairs = c.count("spectral", "train_pairs", 0);
  if (train_pairs > 0) {
    LossSpec spec;
    TrainConfig tc = read_train_config(run, spec, {Optimizer::PlainSgd, 1e-3, 0.9, 50, 1, 0, true});
    c.reject_unused();
    std::vector<Example> pairs;
    for (std::size_t i = 0; i < train_pairs; ++i) {
      Run sub = run;
      sub.seed = derive_seed(run.seed, "spectral_pair_" + std::to_string(i));
      Problem q = build_problem(sub, h);
      pairs.push_back({q.g, q.truth});
    }
    Dataset data = make_dataset(std::move(pairs), train_pairs - train_pairs / 5, derive_seed(run.seed, "split"));
    auto result = train(m, data, tc, spec);
    m = result.final_model;
    run.write("loss_history.csv", history_csv(result.initial, result.history));
  } else {
    c.reject_unused();
  }
  run.write("model.json", serialize_spectral(m));
  write_reconstruction(run, p, predict(m, p.g));
  return kExitOk;
}

int cmd_ir_demo(Run& run) {
  Config& c = run.cfg;
  IrDemoConfig ir;
  ir.phantom.image_shape = c.shape("phantom", "shape", ir.phantom.image_shape);
  ir.phantom.levels = c.reals("phantom", "levels", ir.phantom.levels);
  ir.phantom.min_shapes = c.count("phantom", "min_shapes", ir.phantom.min_shapes);
  ir.phantom.max_shapes = c.count("phantom", "max_shapes", ir.phantom.max_shapes);
  std::vector<std::string> kinds;
  for (auto k : ir.phantom.kinds) kinds.push_back(to_string(k));
  ir.phantom.kinds.clear();
  for (const auto& k : c.words("phantom", "kinds", kinds)) ir.phantom.kinds.push_back(shape_kind_from_string(k));
  ir.psf_extent = c.count("degradation", "psf_extent", ir.psf_extent);
  ir.psf_sigma = c.real("degradation", "psf_sigma", ir.psf_sigma);
  ir.noise_sigma = c.real("degradation", "noise_sigma", ir.noise_sigma);
  ir.downsample_factor = c.count("degradation", "factor", ir.downsample_factor);
  ir.count = c.count("chain", "phantoms", ir.count);
  ir.denoise_depth = c.count("chain", "denoise_depth", ir.denoise_depth);
  ir.denoise_lambda = c.real("chain", "denoise_lambda", ir.denoise_lambda);
  ir.deconv_kind = deconvolver_kind_from_string(c.text("chain", "deconvolver", to_string(ir.deconv_kind)));
  ir.deconv_depth = c.count("chain", "deconv_depth", ir.deconv_depth);
  ir.deconv_lambda = c.real("chain", "deconv_lambda", ir.deconv_lambda);
  const std::size_t save_images = c.count("chain", "save_images", 3);
  c.reject_unused();
  ir.phantom_seed = derive_seed(run.seed, "phantom");
  ir.noise_seed = derive_seed(run.seed, "noise");
  validate(ir.phantom);

  IrDemoModels models = build_ir_models(ir);
  run.write("denoiser.json", serialize_model(models.denoiser));
  run.write("deconvolver.json", std::visit(
                                    [](const auto& m) {
                                      if constexpr (std::is_same_v<std::decay_t<decltype(m)>, UnrolledModel>)
                                        return serialize_model(m);
                                      else
                                        return serialize_spectral(m);
                                    },
                                    models.deconvolver));
  auto cases = run_ir_suite(ir, models);

  CsvTable per({"phantom", "phantom_seed", "noise_seed", "mse_observed", "mse_restored", "accuracy_observed",
                "accuracy_restored"});
  CsvTable seg({"phantom", "source", "level", "precision", "recall", "truth_pixels"});
  double mo = 0.0, mr = 0.0, ao = 0.0, ar = 0.0;
  std::size_t improved = 0;
  std::string levels;
  for (std::size_t i = 0; i < ir.phantom.levels.size(); ++i) levels += (i ? " " : "") + format_double(ir.phantom.levels[i]);
  const double span = ir.phantom.levels.back() - ir.phantom.levels.front();
  const double lo = ir.phantom.levels.front() - 0.25 * span, hi = ir.phantom.levels.back() + 0.25 * span;

  for (std::size_t i = 0; i < cases.size(); ++i) {
    const IrCase& k = cases[i];
    per.add_row({std::to_string(i), std::to_string(k.phantom_seed), std::to_string(k.noise_seed),
                 format_double(k.mse_observed), format_double(k.mse_restored), format_double(k.acc_observed),
                 format_double(k.acc_restored)});
    for (const auto& [source, labels] : {std::pair{"observed", &k.observed_seg}, std::pair{"restored", &k.chain.seg}}) {
      SegReport r = seg_metrics(*labels, k.phantom.labels);
      for (std::size_t l = 0; l < r.precision.size(); ++l) {
        std::size_t row = 0;
        for (auto v : r.confusion[l]) row += v;
        seg.add_row({std::to_string(i), source, std::to_string(l), format_double(r.precision[l]),
                     format_double(r.recall[l]), std::to_string(row)});
      }
    }
    mo += k.mse_observed;
    mr += k.mse_restored;
    ao += k.acc_observed;
    ar += k.acc_restored;
    improved += k.acc_restored > k.acc_observed;
    if (i < save_images) {
      std::map<std::string, std::string> fields{{"levels", levels},
                                                {"phantom_seed", std::to_string(k.phantom_seed)},
                                                {"noise_seed", std::to_string(k.noise_seed)},
                                                {"psf_extent", std::to_string(ir.psf_extent)},
                                                {"psf_sigma", format_double(ir.psf_sigma)},
                                                {"noise_sigma", format_double(ir.noise_sigma)},
                                                {"downsample_factor", std::to_string(ir.downsample_factor)}};
      char stem[32];
      std::snprintf(stem, sizeof stem, "images/phantom_%03zu_", i);
      write_image(run.out / (std::string(stem) + "truth.pgm"), k.phantom.truth, lo, hi, fields);
      write_image(run.out / (std::string(stem) + "observed.pgm"), k.observed, lo, hi, fields);
      write_image(run.out / (std::string(stem) + "denoised.pgm"), upsample_nearest(k.chain.denoised, ir.downsample_factor),
                  lo, hi, fields);
      write_image(run.out / (std::string(stem) + "restored.pgm"), k.chain.restored, lo, hi, fields);
      write_labels(run.out / (std::string(stem) + "seg.pgm"), k.chain.seg, fields);
      write_labels(run.out / (std::string(stem) + "labels.pgm"), k.phantom.labels, fields);
    }
  }
  const double n = static_cast<double>(std::max<std::size_t>(cases.size(), 1));
  CsvTable sum({"phantoms", "mean_mse_observed", "mean_mse_restored", "mean_accuracy_observed",
                "mean_accuracy_restored", "phantoms_improved"});
  sum.add_row({std::to_string(cases.size()), format_double(mo / n), format_double(mr / n), format_double(ao / n),
               format_double(ar / n), std::to_string(improved)});
  run.write("metrics.csv", per.str());
  run.write("seg_metrics.csv", seg.str());
  run.write("summary.csv", sum.str());
  run.say("mean mse " + format_double(mo / n) + " -> " + format_double(mr / n) + "; accuracy improved on " +
          std::to_string(improved) + "/" + std::to_string(cases.size()) + " phantoms");
  return kExitOk;
}

int cmd_gradcheck(Run& run) {
  LinearOp h = build_operator(run, {"dense", {5}, 6});
  UnrolledModel m = build_unrolled(run, h, {"ista", 3, 0.05, false, "auto", {"recurrence_per_layer", "bias", "theta"}});
  Config& c = run.cfg;
  const std::size_t want = c.count("gradcheck", "probes", 30);
  const std::size_t per_instance = c.count("gradcheck", "probes_per_instance", 5);
  const std::size_t batch_size = c.count("gradcheck", "batch", 2);
  const std::size_t max_instances = c.count("gradcheck", "max_instances", 200);
  GradCheckOptions opt;
  opt.step = c.real("gradcheck", "step", opt.step);
  opt.kink_margin = c.real("gradcheck", "kink_margin", opt.kink_margin);
  const double tol = c.real("gradcheck", "tolerance", 1e-5);
  const LossSpec spec{c.real("gradcheck", "weight_decay", 0.01)};
  c.reject_unused();
  if (per_instance == 0 || batch_size == 0) throw ConfigError("[gradcheck] probes_per_instance and batch must be positive");

  std::mt19937_64 rng(derive_seed(run.seed, "gradcheck"));
  std::normal_distribution<double> normal(0.0, 1.0);
  CsvTable t({"instance", "coordinate", "analytic", "numeric", "rel_error"});
  std::size_t taken = 0, rejected = 0, instance = 0;
  double worst = 0.0;
  for (; taken < want && instance < max_instances; ++instance) {
    std::vector<Example> batch;
    for (std::size_t b = 0; b < batch_size; ++b) {
      SignalGrid g(m.input_shape), f(m.output_shape);
      for (double& v : g.data()) v = normal(rng);
      for (double& v : f.data()) v = normal(rng);
      batch.push_back({g, f});
    }
    opt.probes = std::min(per_instance, want - taken);
    opt.seed = derive_seed(run.seed, "probe_" + std::to_string(instance));
    auto r = gradient_check(m, batch, spec, opt);
    if (r.near_kink) {
      ++rejected;
      continue;
    }
    for (const auto& p : r.probes) {
      t.add_row({std::to_string(instance), std::to_string(p.coordinate), format_double(p.analytic),
                 format_double(p.numeric), format_double(p.rel_error)});
      worst = std::max(worst, p.rel_error);
    }
    taken += r.probes.size();
  }
  run.write("gradcheck.csv", t.str());
  run.say(std::to_string(taken) + " probes, " + std::to_string(rejected) + " instances rejected near kinks, worst " +
          format_double(worst));
  if (taken < want) throw CheckFailed("only " + std::to_string(taken) + " probes away from kinks");
  if (worst > tol) throw CheckFailed("gradient mismatch " + format_double(worst) + " exceeds " + format_double(tol));
  return kExitOk;
}

using Command = int (*)(Run&);

struct Verb {
  const char* name;
  const char* help;
  Command fn;
};

constexpr Verb kVerbs[] = {
    {"adjoint-test", "check <Hx, y> = <x, H^t y> on seeded pairs", cmd_adjoint_test},
    {"solve", "reconstruct with tikhonov, gd, gd_reg, ista or fista", cmd_solve},
    {"unroll", "build a physics-initialized unrolled network and run it", cmd_unroll},
    {"train", "train an unrolled network on a seeded deconvolution dataset", cmd_train},
    {"spectral", "filter in the Fourier or singular basis", cmd_spectral},
    {"ir-demo", "phantom suite through denoise, deconvolve and segment", cmd_ir_demo},
    {"gradcheck", "compare backprop gradients with central differences", cmd_gradcheck},
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Inverse-problem solvers and unrolled networks"};
  app.require_subcommand(1);
  std::string config_path, out_dir = "out";
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  for (const Verb& v : kVerbs) {
    CLI::App* sub = app.add_subcommand(v.name, v.help);
    sub->add_option("--config", config_path, "experiment config file");
    sub->add_option("--seed", seed, "global seed (overrides [run] seed)");
    sub->add_option("--out", out_dir, "output directory")->capture_default_str();
    sub->add_flag("--quiet", quiet, "no summary on stdout");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }
  const Verb* verb = nullptr;
  for (const Verb& v : kVerbs)
    if (app.got_subcommand(v.name)) verb = &v;

  try {
    Run run;
    run.command = verb->name;
    run.out = out_dir;
    run.quiet = quiet;
    run.log = &out;
    if (!config_path.empty()) run.cfg = Config::parse(read_file(config_path));
    if (run.cfg.has("run", "command") && run.cfg.text("run", "command", "") != run.command)
      throw ConfigError("config was written for '" + run.cfg.text("run", "command", "") + "', not '" + run.command + "'");
    run.cfg.text("run", "command", run.command);
    if (seed) run.cfg.set("run", "seed", std::to_string(*seed));
    run.seed = run.cfg.u64("run", "seed", 0);
    fs::create_directories(run.out);
    int code = verb->fn(run);
    run.write("config.ini", run.cfg.echo());
    return code;
  } catch (const CheckFailed& e) {
    err << "invnet " << verb->name << ": check failed: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    err << "invnet " << verb->name << ": I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "invnet " << verb->name << ": I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    err << "invnet " << verb->name << ": invalid configuration: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DimensionError& e) {
    err << "invnet " << verb->name << ": invalid configuration: " << e.what() << "\n";
    return kExitValidation;
  } catch (const Error& e) {
    err << "invnet " << verb->name << ": numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  }
}

}  // namespace invnet
