#include <doctest.h>

#include <random>

#include "invnet/errors.hpp"
#include "invnet/iterative.hpp"
#include "invnet/training.hpp"
#include "support/oracles.hpp"

using namespace invnet;

namespace {

// K=1 model f = W g with a trainable dense block initialized to `w`.
UnrolledModel linear_model(const Eigen::MatrixXd& w) {
  auto m = build_from_physics(make_dense(w.transpose()), UnrollScheme::Gd, 1, 1.0, 0.0);
  m.layers[0].recurrence.reset();
  return promote_trainable(m, Promotion::Bias);
}

std::vector<Example> examples_for(const UnrolledModel& m, std::mt19937_64& rng, std::size_t n, double noise) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto g = oracle::random_grid(rng, m.input_shape);
    auto f = predict(m, g);
    f += noise * oracle::random_grid(rng, m.output_shape);
    out.push_back({g, f});
  }
  return out;
}

UnrolledModel trainable_ista(const LinearOp& h, double lambda) {
  auto m = build_from_physics(h, UnrollScheme::Ista, 3, std::nullopt, lambda, std::nullopt, false);
  return promote_trainable(
      promote_trainable(promote_trainable(m, Promotion::RecurrencePerLayer), Promotion::Bias), Promotion::Theta);
}

// 1-D circular deconvolution data: piecewise-constant signals through a 5-tap blur.
Dataset deconv_data(std::mt19937_64& rng, const LinearOp& h, std::size_t count, double sigma) {
  std::normal_distribution<double> noise(0.0, sigma);
  std::uniform_real_distribution<double> level(-1.0, 1.0);
  std::vector<Example> pairs;
  for (std::size_t i = 0; i < count; ++i) {
    SignalGrid f({32});
    double v = level(rng);
    for (std::size_t j = 0; j < 32; ++j) {
      if (j % 8 == 0) v = level(rng);
      f[j] = v;
    }
    auto g = h.apply(f);
    for (double& x : g.data()) x += noise(rng);
    pairs.push_back({g, f});
  }
  return make_dataset(std::move(pairs), count * 4 / 5, 7);
}

LinearOp blur32() { return make_conv2d(SignalGrid({5}, {0.1, 0.2, 0.4, 0.2, 0.1}), {32}); }

}  // namespace

TEST_CASE("loss examples") {
  std::mt19937_64 rng(301);
  auto m = linear_model(oracle::random_matrix(rng, 4, 3));
  auto exact = examples_for(m, rng, 3, 0.0);
  CHECK(loss(m, exact, {}) == 0.0);

  auto zero = linear_model(Eigen::MatrixXd::Zero(4, 3));
  double sum_f = 0.0;
  for (const auto& e : exact) sum_f += e.f.squared_norm();
  CHECK(loss(zero, exact, {}) == doctest::Approx(sum_f).epsilon(1e-15));

  // K=2 ISTA model on a random batch against per-example recomputation
  auto h = make_dense(oracle::random_matrix(rng, 5, 4) / 2.0);
  auto k2 = build_from_physics(h, UnrollScheme::Ista, 2, std::nullopt, 0.1);
  std::vector<Example> batch;
  double expect = 0.0;
  for (int i = 0; i < 3; ++i) {
    Example e{oracle::random_grid(rng, {5}), oracle::random_grid(rng, {4})};
    IterConfig cfg;
    cfg.lambda = 0.1;
    cfg.max_iters = 2;
    expect += (ista_run(h, e.g, cfg).final() - e.f).squared_norm();
    batch.push_back(e);
  }
  CHECK(loss(k2, batch, {}) == doctest::Approx(expect).epsilon(1e-12));

  // weight decay adds lambda_W * |params|^2
  auto p = trainable_values(m);
  double sq = 0.0;
  for (double v : p) sq += v * v;
  CHECK(loss(m, exact, {0.3}) == doctest::Approx(0.3 * sq).epsilon(1e-14));

  CHECK_THROWS_AS(loss(m, std::vector<Example>{}, {}), ConfigError);
}

TEST_CASE("decay-only gradient") {
  std::mt19937_64 rng(303);
  auto m = linear_model(oracle::random_matrix(rng, 4, 3));
  auto exact = examples_for(m, rng, 4, 0.0);
  auto g = grad(m, exact, {0.25});
  auto flat = flatten(m, g);
  auto p = trainable_values(m);
  REQUIRE(flat.size() == p.size());
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(flat[i] == doctest::Approx(0.5 * p[i]).epsilon(1e-12));
}

TEST_CASE("scalar linear layer gradient is 2(wg - f)g") {
  Eigen::MatrixXd w(1, 1);
  w << 1.7;
  auto m = linear_model(w);
  std::vector<Example> b{{SignalGrid({1}, {0.8}), SignalGrid({1}, {2.0})}};
  auto flat = flatten(m, grad(m, b, {}));
  REQUIRE(flat.size() == 1);
  CHECK(flat[0] == doctest::Approx(2 * (1.7 * 0.8 - 2.0) * 0.8).epsilon(1e-15));
}

TEST_CASE("gradient agrees with central differences away from kinks") {
  std::mt19937_64 rng(305);
  std::size_t accepted = 0, rejected = 0;
  double worst = 0.0;
  for (int trial = 0; accepted < 30 && trial < 200; ++trial) {
    LinearOp h = trial % 2 == 0 ? make_dense(oracle::random_matrix(rng, 6, 5) / std::sqrt(6.0))
                                : make_conv2d(oracle::random_grid(rng, {3}), {8});
    auto m = trainable_ista(h, 0.05);
    std::vector<Example> batch;
    for (int i = 0; i < 2; ++i)
      batch.push_back({oracle::random_grid(rng, m.input_shape), oracle::random_grid(rng, m.output_shape)});
    GradCheckOptions opt;
    opt.probes = 5;
    opt.seed = static_cast<std::uint64_t>(trial);
    auto r = gradient_check(m, batch, {0.01}, opt);
    if (r.near_kink) {
      ++rejected;
      continue;
    }
    accepted += r.probes.size();
    worst = std::max(worst, r.max_rel_error);
    for (const auto& p : r.probes) CHECK(p.rel_error <= 1e-5);
  }
  CHECK(accepted >= 30);
  MESSAGE("probes " << accepted << ", rejected instances " << rejected << ", worst " << worst);
}

TEST_CASE("theta and relu gradients") {
  // one relu layer: f = max(w g - theta, 0), loss (f - t)^2; active branch
  Eigen::MatrixXd w(1, 1);
  w << 2.0;
  auto m = linear_model(w);
  m.layers[0].activation = Activation::Relu;
  m.layers[0].theta = 0.5;
  m = promote_trainable(m, Promotion::Theta);
  std::vector<Example> b{{SignalGrid({1}, {1.0}), SignalGrid({1}, {1.0})}};
  auto flat = flatten(m, grad(m, b, {}));
  // residual r = 1.5 - 1 = 0.5; d/dw = 2 r g = 1; d/dtheta = -2 r = -1
  REQUIRE(flat.size() == 2);
  CHECK(flat[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(flat[1] == doctest::Approx(-1.0).epsilon(1e-15));
  // dead zone: no gradient
  b[0].g = SignalGrid({1}, {0.1});
  flat = flatten(m, grad(m, b, {}));
  CHECK(flat[0] == 0.0);
  CHECK(flat[1] == 0.0);
}

TEST_CASE("gradient requires trainable parameters") {
  std::mt19937_64 rng(307);
  auto m = build_from_physics(make_dense(oracle::random_matrix(rng, 3, 3)), UnrollScheme::Gd, 2, 0.1, 0.0);
  std::vector<Example> b{{oracle::random_grid(rng, {3}), oracle::random_grid(rng, {3})}};
  CHECK_THROWS_AS(grad(m, b, {}), ConfigError);
  auto data = make_dataset(b, 1, 0);
  CHECK_THROWS_AS(train(m, data, TrainConfig{}, LossSpec{}), ConfigError);
}

TEST_CASE("zero learning rate leaves the model unchanged") {
  std::mt19937_64 rng(309);
  auto h = blur32();
  auto data = deconv_data(rng, h, 10, 0.02);
  auto m = promote_trainable(build_from_physics(h, UnrollScheme::Gd, 3, std::nullopt, 0.0), Promotion::RecurrenceAll);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 4;
  auto run = train(m, data, cfg, {});
  CHECK(run.final_model.blocks == m.blocks);
  REQUIRE(run.history.size() == 4);
  for (const auto& e : run.history) {
    CHECK(e.train == run.initial.train);
    CHECK(e.test == run.initial.test);
  }
}

TEST_CASE("seeded training is deterministic and improves the physics init") {
  std::mt19937_64 rng(311);
  auto h = blur32();
  auto data = deconv_data(rng, h, 30, 0.02);
  auto m = promote_trainable(build_from_physics(h, UnrollScheme::Gd, 3, std::nullopt, 0.0), Promotion::RecurrenceAll);
  for (auto opt : {Optimizer::PlainSgd, Optimizer::MomentumSgd}) {
    TrainConfig cfg;
    cfg.optimizer = opt;
    cfg.learning_rate = 2e-3;
    cfg.momentum = 0.5;
    cfg.epochs = 8;
    cfg.batch_size = 4;
    cfg.seed = 11;
    auto a = train(m, data, cfg, {});
    auto b = train(m, data, cfg, {});
    REQUIRE(a.history.size() == 8);
    for (std::size_t e = 0; e < 8; ++e) {
      CHECK(a.history[e].train == b.history[e].train);
      CHECK(a.history[e].test == b.history[e].test);
    }
    CHECK(a.history.back().train <= a.initial.train);
    CHECK(batch_loss(a.final_model, data.pairs, data.test, {}, nullptr) == a.history[a.best_epoch - 1].test);
  }
}

TEST_CASE("linear model converges to the least-squares optimum") {
  std::mt19937_64 rng(313);
  Eigen::MatrixXd truth = oracle::random_matrix(rng, 3, 4);
  auto target = linear_model(truth);
  auto pairs = examples_for(target, rng, 12, 0.0);
  auto data = make_dataset(pairs, 12, 1);
  auto start = linear_model(Eigen::MatrixXd::Zero(3, 4));
  TrainConfig cfg;
  cfg.optimizer = Optimizer::MomentumSgd;
  cfg.learning_rate = 0.01;
  cfg.momentum = 0.8;
  cfg.epochs = 400;
  cfg.batch_size = 12;
  auto run = train(start, data, cfg, {});
  // consistent noiseless data: optimum loss is 0
  CHECK(run.history.back().train <= 1e-6);
}

TEST_CASE("decay-only training shrinks parameters monotonically") {
  std::mt19937_64 rng(315);
  auto m = linear_model(oracle::random_matrix(rng, 3, 3));
  // zero inputs and targets: the data term vanishes for every parameter value
  std::vector<Example> pairs(4, Example{SignalGrid({3}), SignalGrid({3})});
  auto data = make_dataset(pairs, 4, 2);
  double prev = std::numeric_limits<double>::infinity();
  auto cur = m;
  for (int step = 0; step < 5; ++step) {
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cur = train(cur, data, cfg, {0.5}).last_model;
    double n = 0.0;
    for (double v : trainable_values(cur)) n += v * v;
    CHECK(n < prev);
    prev = n;
  }
}

TEST_CASE("divergence is reported with its epoch") {
  std::mt19937_64 rng(317);
  auto h = blur32();
  auto data = deconv_data(rng, h, 10, 0.02);
  auto m = promote_trainable(build_from_physics(h, UnrollScheme::Gd, 3, std::nullopt, 0.0), Promotion::RecurrenceAll);
  TrainConfig cfg;
  cfg.learning_rate = 1e3;
  cfg.epochs = 50;
  try {
    train(m, data, cfg, {});
    FAIL("expected divergence");
  } catch (const TrainingDivergedError& e) {
    CHECK(e.epoch() >= 1);
    CHECK(e.epoch() <= 50);
  }
}

TEST_CASE("metrics") {
  auto truth = SignalGrid({4}, {0.0, 1.0, -0.5, 0.25});
  auto same = image_metrics(truth, truth);
  CHECK(same.mse == 0.0);
  CHECK(std::isinf(same.psnr));
  auto shifted = truth;
  for (double& v : shifted.data()) v += 0.1;
  auto m = image_metrics(shifted, truth);
  CHECK(m.mse == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(m.psnr == doctest::Approx(20.0).epsilon(1e-12));

  auto rep = aggregate({{0.1, 10.0}, {0.3, 20.0}, {0.2, 15.0}});
  CHECK(rep.mse == doctest::Approx(0.2));
  CHECK(rep.psnr == doctest::Approx(15.0));
}

TEST_CASE("dataset validation") {
  std::vector<Example> pairs(5, Example{SignalGrid({2}), SignalGrid({3})});
  auto d = make_dataset(pairs, 3, 9);
  CHECK(d.train.size() == 3);
  CHECK(d.test.size() == 2);
  auto bad = d;
  bad.test.push_back(bad.train[0]);
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = d;
  bad.pairs[1].g = SignalGrid({4});
  CHECK_THROWS_AS(validate(bad), DimensionError);
  CHECK_THROWS_AS(make_dataset(pairs, 6, 0), ConfigError);
  TrainConfig cfg;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
}
