#include <doctest.h>

#include <random>

#include "invnet/analytic.hpp"
#include "invnet/errors.hpp"
#include "invnet/iterative.hpp"
#include "invnet/unrolled.hpp"
#include "support/oracles.hpp"

using namespace invnet;

namespace {

struct Instance {
  LinearOp h;
  LinearOp d;
  SignalGrid g;
};

// Alternates dense and circular-convolution forward operators.
Instance make_instance(std::mt19937_64& rng, int i) {
  if (i % 2 == 0) {
    Eigen::MatrixXd hm = oracle::random_matrix(rng, 8, 6) / std::sqrt(8.0);
    return {make_dense(hm), make_dense(oracle::random_matrix(rng, 5, 6)), SignalGrid::from_vector({8}, oracle::random_vector(rng, 8))};
  }
  auto h = make_conv2d(oracle::random_grid(rng, {5}), {16});
  Eigen::MatrixXd dm = Eigen::MatrixXd::Identity(16, 16);
  for (int r = 0; r < 16; ++r) dm(r, (r + 1) % 16) = -1.0;
  return {h, make_dense(dm), oracle::random_grid(rng, {16})};
}

Trajectory reference(UnrollScheme s, const Instance& in, const IterConfig& cfg) {
  switch (s) {
    case UnrollScheme::Gd: return gd_run(in.h, in.g, cfg);
    case UnrollScheme::GdReg: return gd_regularized_run(in.h, in.g, cfg);
    case UnrollScheme::Ista: return ista_run(in.h, in.g, cfg);
  }
  return {};
}

double rel(const SignalGrid& a, const SignalGrid& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

UnrolledModel hand_model(Activation act, double theta) {
  Eigen::MatrixXd w0(2, 2), w(2, 2);
  w0 << 1, 2, 0, 1;
  w << 0.5, 0, 0.25, 0.5;
  LayerSpec l;
  l.bias.fixed = make_dense(w0);
  l.recurrence = MapRef{std::nullopt, make_dense(w), std::nullopt};
  l.activation = act;
  l.theta = theta;
  UnrolledModel m;
  m.scheme = "custom";
  m.layers.assign(2, l);
  m.input_shape = {2};
  m.output_shape = {2};
  return m;
}

}  // namespace

TEST_CASE("single gd layer is the scaled back-projection") {
  std::mt19937_64 rng(201);
  auto in = make_instance(rng, 0);
  auto m = build_from_physics(in.h, UnrollScheme::Gd, 1, 0.3, 0.0);
  auto expect = in.h.adjoint_apply(in.g);
  expect *= 0.3;
  CHECK(rel(predict(m, in.g), expect) <= 1e-15);
}

TEST_CASE("physics-built forward reproduces the iterative solvers") {
  std::mt19937_64 rng(203);
  double worst = 0.0;
  for (auto scheme : {UnrollScheme::Gd, UnrollScheme::GdReg, UnrollScheme::Ista}) {
    for (std::size_t k : {1u, 3u, 10u}) {
      for (int i = 0; i < 10; ++i) {
        auto in = make_instance(rng, i);
        IterConfig cfg;
        cfg.lambda = scheme == UnrollScheme::Gd ? 0.0 : 0.05;
        cfg.max_iters = k;
        if (scheme == UnrollScheme::GdReg) cfg.reg_op = in.d;
        auto traj = reference(scheme, in, cfg);
        auto m = build_from_physics(in.h, scheme, k, std::nullopt, cfg.lambda, cfg.reg_op);
        CHECK(m.alpha == traj.alpha);
        auto fr = forward(m, in.g);
        const double r = rel(fr.output, traj.final());
        worst = std::max(worst, r);
        CHECK(r <= 1e-12);
        // every intermediate layer matches the solver iterate
        for (std::size_t j = 0; j < k; ++j) CHECK(rel(fr.layers[j].output, traj.iterates[j + 1]) <= 1e-12);
      }
    }
  }
  MESSAGE("worst relative deviation " << worst);
}

TEST_CASE("nonzero initial state is honored") {
  std::mt19937_64 rng(205);
  auto in = make_instance(rng, 1);
  auto f0 = oracle::random_grid(rng, {16});
  IterConfig cfg;
  cfg.lambda = 0.02;
  cfg.max_iters = 4;
  auto traj = ista_run(in.h, in.g, cfg, f0);
  auto m = build_from_physics(in.h, UnrollScheme::Ista, 4, std::nullopt, 0.02);
  CHECK(rel(predict(m, in.g, f0), traj.final()) <= 1e-12);
}

TEST_CASE("deep gd approaches the least-squares solution") {
  std::mt19937_64 rng(207);
  Eigen::MatrixXd hm = oracle::random_matrix(rng, 8, 5) * 0.3;
  hm.topRows(5) += Eigen::MatrixXd::Identity(5, 5);
  auto h = make_dense(hm);
  auto g = SignalGrid::from_vector({8}, oracle::random_vector(rng, 8));
  auto ls = pseudo_inverse_solve(h, g, PseudoInverseSide::Left);
  auto m = build_from_physics(h, UnrollScheme::Gd, 400, std::nullopt, 0.0);
  CHECK((predict(m, g) - ls).max_abs() <= 1e-6);
}

TEST_CASE("depth monotonicity of the gd residual") {
  std::mt19937_64 rng(209);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd hm = oracle::random_matrix(rng, 10, 6) * 0.2;
    hm.topRows(6) += Eigen::MatrixXd::Identity(6, 6);
    auto h = make_dense(hm);
    auto g = SignalGrid::from_vector({10}, oracle::random_vector(rng, 10));
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= 12; ++k) {
      auto m = build_from_physics(h, UnrollScheme::Gd, k, std::nullopt, 0.0);
      const double res = (g - h.apply(predict(m, g))).norm();
      CHECK(res <= prev * (1 + 1e-12));
      prev = res;
    }
  }
}

TEST_CASE("zero recurrence gives a memoryless model") {
  std::mt19937_64 rng(211);
  auto in = make_instance(rng, 0);
  auto m = build_from_physics(in.h, UnrollScheme::Gd, 3, 0.5, 0.0);
  for (auto& l : m.layers) l.recurrence.reset();
  auto a = predict(m, in.g);
  auto b = predict(m, in.g, oracle::random_grid(rng, {6}));
  CHECK(a == b);
  auto expect = in.h.adjoint_apply(in.g);
  expect *= 0.5;
  CHECK(rel(a, expect) <= 1e-15);
}

TEST_CASE("two tied layers match the hand-computed recursion") {
  auto g = SignalGrid({2}, {1, -1});
  // f1 = W0 g = (-1,-1); f2 = W0 g + W f1 = (-1,-1) + (-0.5,-0.75)
  auto lin = predict(hand_model(Activation::Identity, 0.0), g);
  CHECK(lin[0] == doctest::Approx(-1.5).epsilon(1e-15));
  CHECK(lin[1] == doctest::Approx(-1.75).epsilon(1e-15));
  // theta 0.6: f1 = (-0.4,-0.4); z2 = (-1,-1) + (-0.2,-0.3); f2 = (-0.6,-0.7)
  auto st = predict(hand_model(Activation::SoftThreshold, 0.6), g);
  CHECK(st[0] == doctest::Approx(-0.6).epsilon(1e-14));
  CHECK(st[1] == doctest::Approx(-0.7).epsilon(1e-14));
  // relu with theta 0.5 on g = (1,1): z1 = (3,1) -> (2.5,0.5); z2 = (3,1) + (1.25,0.875)
  auto rl = predict(hand_model(Activation::Relu, 0.5), SignalGrid({2}, {1, 1}));
  CHECK(rl[0] == doctest::Approx(3.75).epsilon(1e-15));
  CHECK(rl[1] == doctest::Approx(1.375).epsilon(1e-15));
}

TEST_CASE("stored states replay the output exactly") {
  std::mt19937_64 rng(213);
  for (int i = 0; i < 4; ++i) {
    auto in = make_instance(rng, i);
    auto m = build_from_physics(in.h, UnrollScheme::Ista, 6, std::nullopt, 0.05);
    if (i >= 2) m = promote_trainable(promote_trainable(m, Promotion::Theta), Promotion::Bias);
    auto fr = forward(m, in.g);
    CHECK(replay(m, fr) == fr.output);
    CHECK(predict(m, in.g) == fr.output);
    for (std::size_t k = 0; k < fr.layers.size(); ++k) {
      CHECK(fr.layers[k].pre_activation == fr.layers[k].bias_term + fr.layers[k].recurrence_term);
      if (k > 0) CHECK(fr.layers[k].input == fr.layers[k - 1].output);
    }
  }
}

TEST_CASE("promotion leaves the forward output unchanged") {
  std::mt19937_64 rng(215);
  for (int i = 0; i < 6; ++i) {
    auto in = make_instance(rng, i);
    auto tied = build_from_physics(in.h, UnrollScheme::Ista, 4, std::nullopt, 0.05, std::nullopt, true);
    auto untied = build_from_physics(in.h, UnrollScheme::Ista, 4, std::nullopt, 0.05, std::nullopt, false);
    const auto base = predict(tied, in.g);
    for (auto p : {Promotion::RecurrenceAll, Promotion::Bias, Promotion::Theta}) {
      auto m = promote_trainable(tied, p);
      CHECK(rel(predict(m, in.g), base) <= 1e-14);
    }
    auto all = promote_trainable(
        promote_trainable(promote_trainable(untied, Promotion::RecurrencePerLayer), Promotion::Bias), Promotion::Theta);
    CHECK(rel(predict(all, in.g), base) <= 1e-14);
    // block layout follows operator structure
    const auto expect_kind = i % 2 == 0 ? BlockKind::Dense : BlockKind::Kernel;
    for (const auto& e : parameter_census(all))
      if (e.role != BlockRole::Theta) CHECK(e.kind == expect_kind);
  }
}

TEST_CASE("parameter census") {
  std::mt19937_64 rng(217);
  auto h = make_dense(oracle::random_matrix(rng, 16, 16) / 4.0);
  auto per_layer = promote_trainable(build_from_physics(h, UnrollScheme::Gd, 3, 0.1, 0.0, std::nullopt, false),
                                     Promotion::RecurrencePerLayer);
  auto census = parameter_census(per_layer);
  REQUIRE(census.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(census[k].layers == std::vector<std::size_t>{k});
    CHECK(census[k].role == BlockRole::Recurrence);
  }

  auto four = build_from_physics(h, UnrollScheme::Gd, 4, 0.1, 0.0, std::nullopt, false);
  four = promote_trainable(promote_trainable(four, Promotion::RecurrencePerLayer), Promotion::Bias);
  CHECK(trainable_parameter_count(four) == 4 * 16 * 16 + 16 * 16);

  auto tied = promote_trainable(build_from_physics(h, UnrollScheme::Ista, 4, 0.1, 0.1), Promotion::RecurrenceAll);
  auto tc = parameter_census(tied);
  REQUIRE(tc.size() == 1);
  CHECK(tc[0].layers == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(trainable_parameter_count(tied) == 256);

  // circular convolution keeps a kernel: 5-tap blur, gram extent 9
  auto conv = make_conv2d(oracle::random_grid(rng, {5}), {32});
  auto cm = promote_trainable(build_from_physics(conv, UnrollScheme::Gd, 2, 0.1, 0.0), Promotion::RecurrenceAll);
  REQUIRE(parameter_census(cm).size() == 1);
  CHECK(parameter_census(cm)[0].size == 9);
}

TEST_CASE("configuration and shape errors") {
  std::mt19937_64 rng(219);
  auto in = make_instance(rng, 0);
  CHECK_THROWS_AS(build_from_physics(in.h, UnrollScheme::GdReg, 3, 0.1, 0.1), ConfigError);
  CHECK_THROWS_AS(build_from_physics(in.h, UnrollScheme::Gd, 0, 0.1, 0.0), ConfigError);
  CHECK_THROWS_AS(build_from_physics(in.h, UnrollScheme::Gd, 2, -0.1, 0.0), ConfigError);
  auto gd = build_from_physics(in.h, UnrollScheme::Gd, 3, 0.1, 0.0);
  CHECK_THROWS_AS(promote_trainable(gd, Promotion::Theta), ConfigError);
  CHECK_THROWS_AS(promote_trainable(gd, Promotion::RecurrencePerLayer), ConfigError);
  CHECK_THROWS_AS(predict(gd, SignalGrid({7})), DimensionError);
  CHECK_THROWS_AS(predict(gd, in.g, SignalGrid({8})), DimensionError);
  CHECK_THROWS_AS(activation_from_string("tanh"), ConfigError);

  auto bad = gd;
  bad.layers[1].recurrence = MapRef{std::nullopt, make_identity({6}), std::nullopt};
  CHECK_THROWS_AS(validate(bad), ConfigError);  // tied but different maps
  bad.tied = false;
  CHECK_NOTHROW(validate(bad));
  bad.layers[1].recurrence = MapRef{std::nullopt, make_identity({5}), std::nullopt};
  CHECK_THROWS_AS(validate(bad), DimensionError);
}

TEST_CASE("serialization round trip is bit-exact") {
  std::mt19937_64 rng(221);
  std::vector<UnrolledModel> models;
  auto conv = make_conv2d(oracle::random_grid(rng, {3, 3}), {6, 6});
  auto m1 = build_from_physics(conv, UnrollScheme::Ista, 3, std::nullopt, 0.05, std::nullopt, false);
  m1 = promote_trainable(promote_trainable(m1, Promotion::RecurrencePerLayer), Promotion::Theta);
  models.push_back(m1);
  auto radon = make_radon({6, 6}, uniform_angles(4), 8);
  models.push_back(build_from_physics(radon, UnrollScheme::Gd, 2, std::nullopt, 0.0));
  auto dense = make_dense(oracle::random_matrix(rng, 5, 4));
  auto m3 = build_from_physics(dense, UnrollScheme::GdReg, 3, 0.1 / 3.0, 0.7, make_diagonal({1, 2, 3, 4}));
  models.push_back(promote_trainable(m3, Promotion::Bias));

  for (const auto& m : models) {
    const std::string text = serialize_model(m);
    auto back = deserialize_model(text);
    CHECK(serialize_model(back) == text);
    CHECK(back.blocks == m.blocks);
    CHECK(back.alpha == m.alpha);
    for (std::size_t k = 0; k < m.depth(); ++k) CHECK(layer_theta(back, k) == layer_theta(m, k));
    auto g = oracle::random_grid(rng, m.input_shape);
    CHECK(predict(back, g) == predict(m, g));
  }
  CHECK_THROWS_AS(deserialize_model("{\"format\":\"something-else\"}"), IoError);
  CHECK_THROWS_AS(deserialize_model("not json"), IoError);
}
