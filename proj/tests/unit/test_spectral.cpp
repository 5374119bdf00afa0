#include <doctest.h>

#include <algorithm>
#include <random>

#include "invnet/analytic.hpp"
#include "invnet/errors.hpp"
#include "invnet/spectral.hpp"
#include "support/oracles.hpp"

using namespace invnet;

namespace {

double rel(const SignalGrid& a, const SignalGrid& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

void check_orthonormal(const Eigen::MatrixXd& m) {
  const auto n = m.cols();
  CHECK((m.transpose() * m - Eigen::MatrixXd::Identity(n, n)).norm() <= 1e-10);
}

// Random circular convolution: rank 1 or 2, odd kernel, n in 16..64 samples.
LinearOp random_circular(std::mt19937_64& rng, int i) {
  const std::size_t sizes1[] = {16, 24, 32, 48, 64};
  if (i % 2 == 0) return make_conv2d(oracle::random_grid(rng, {5}), {sizes1[i / 2 % 5]});
  const std::size_t side = i % 4 == 1 ? 4 : 8;
  return make_conv2d(oracle::random_grid(rng, {3, 3}), {side, side});
}

Dataset noiseless_blur_data(std::mt19937_64& rng, const LinearOp& h, std::size_t n) {
  std::vector<Example> pairs;
  std::uniform_real_distribution<double> level(-1.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    SignalGrid f(h.domain_shape());
    double v = level(rng);
    for (std::size_t j = 0; j < f.size(); ++j) {
      if (j % 4 == 0) v = level(rng);
      f[j] = v;
    }
    pairs.push_back({h.apply(f), f});
  }
  return make_dataset(std::move(pairs), n * 3 / 4, 5);
}

}  // namespace

TEST_CASE("svd_decompose examples") {
  auto id = svd_decompose(make_identity({4}));
  for (int i = 0; i < 4; ++i) CHECK(id.delta[i] == doctest::Approx(1.0).epsilon(1e-14));

  auto dg = svd_decompose(make_diagonal({3, 1}));
  CHECK(dg.delta[0] == doctest::Approx(9.0).epsilon(1e-14));
  CHECK(dg.delta[1] == doctest::Approx(1.0).epsilon(1e-14));

  std::mt19937_64 rng(401);
  auto kernel = oracle::random_grid(rng, {5});
  auto conv = svd_decompose(make_conv2d(kernel, {16}));
  auto t = oracle::kernel_transfer(kernel, {16});
  std::vector<double> expect;
  for (auto c : t) expect.push_back(std::norm(c));
  std::sort(expect.rbegin(), expect.rend());
  for (int i = 0; i < 16; ++i) CHECK(conv.delta[i] == doctest::Approx(expect[i]).epsilon(1e-10));
}

TEST_CASE("svd_decompose reconstruction and orthonormality") {
  std::mt19937_64 rng(403);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd hm = oracle::random_matrix(rng, 5, 7);
    for (auto side : {GramSide::Range, GramSide::Domain}) {
      auto f = svd_decompose(make_dense(hm), side);
      const Eigen::MatrixXd gram = side == GramSide::Range ? Eigen::MatrixXd(hm * hm.transpose())
                                                           : Eigen::MatrixXd(hm.transpose() * hm);
      check_orthonormal(f.u);
      check_orthonormal(f.v);
      CHECK((gram - f.u * f.delta.asDiagonal() * f.v.transpose()).norm() <= 1e-8 * gram.norm());
      for (Eigen::Index i = 0; i + 1 < f.delta.size(); ++i) CHECK(f.delta[i] >= f.delta[i + 1]);
      CHECK(f.delta.minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("unitary dft matches the naive transform and preserves energy") {
  std::mt19937_64 rng(405);
  for (const Shape& s : {Shape{12}, Shape{4, 6}}) {
    auto x = oracle::random_grid(rng, s);
    std::vector<Complex> xc(x.values().begin(), x.values().end());
    auto fast = unitary_dft(xc, s, false);
    auto naive = oracle::dft(x.values(), s);
    const double norm = std::sqrt(static_cast<double>(x.size()));
    double e = 0.0;
    for (std::size_t i = 0; i < fast.size(); ++i) {
      CHECK(std::abs(fast[i] - naive[i] / norm) <= 1e-12);
      e += std::norm(fast[i]);
    }
    CHECK(std::sqrt(e) == doctest::Approx(x.norm()).epsilon(1e-12));
    auto back = unitary_dft(fast, s, true);
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(std::abs(back[i] - xc[i]) <= 1e-12);
  }
}

TEST_CASE("unit filter reproduces the adjoint stage") {
  std::mt19937_64 rng(407);
  for (int i = 0; i < 4; ++i) {
    auto h = random_circular(rng, i);
    auto g = oracle::random_grid(rng, h.codomain_shape());
    auto m = build_spectral_model(h, SpectralMode::Fourier);
    CHECK(rel(predict(m, g), h.adjoint_apply(g)) <= 1e-12);
    auto s = build_spectral_model(h, SpectralMode::Svd);
    CHECK(rel(predict(s, g), h.adjoint_apply(g)) <= 1e-10);
  }
  auto dense = make_dense(oracle::random_matrix(rng, 4, 4));
  CHECK_THROWS_AS(build_spectral_model(dense, SpectralMode::Fourier), ConfigError);
  CHECK_THROWS_AS(build_spectral_model(make_conv2d(SignalGrid({3}, {1, 2, 1}), {8}, Boundary::ZeroPad),
                                       SpectralMode::Fourier),
                  ConfigError);
}

TEST_CASE("inverse filter recovers noiseless data") {
  std::mt19937_64 rng(409);
  auto h = make_conv2d(SignalGrid({3}, {0.1, 0.8, 0.1}), {32});
  auto m = build_spectral_model(h, SpectralMode::Fourier);
  std::vector<double> inv;
  for (double s : m.spectrum) inv.push_back(1.0 / s);
  set_filter(m, inv);
  auto f = oracle::random_grid(rng, {32});
  CHECK(rel(predict(m, h.apply(f)), f) <= 1e-8);
}

TEST_CASE("tikhonov spectrum examples") {
  auto delta = make_conv2d(SignalGrid({1}, {1.0}), {8});
  auto spec = tikhonov_spectrum(delta, 1.0);
  for (double v : spec) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
  auto m = build_spectral_model(delta, SpectralMode::Fourier);
  set_filter(m, spec);
  auto g = SignalGrid({8}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto out = predict(m, g);
  for (std::size_t i = 0; i < 8; ++i) CHECK(out[i] == doctest::Approx(g[i] / 2).epsilon(1e-12));

  // large lambda: output * lambda tends to H^t g
  std::mt19937_64 rng(411);
  auto h = random_circular(rng, 0);
  auto gg = oracle::random_grid(rng, h.codomain_shape());
  auto big = build_spectral_model(h, SpectralMode::Fourier);
  set_filter(big, tikhonov_spectrum(h, 1e8));
  auto scaled_out = predict(big, gg);
  scaled_out *= 1e8;
  CHECK(rel(scaled_out, h.adjoint_apply(gg)) <= 1e-6);

  CHECK_THROWS_AS(tikhonov_spectrum(h, 0.0), ConfigError);
}

TEST_CASE("fourier chain with the tikhonov spectrum equals the dense solution") {
  std::mt19937_64 rng(413);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    auto h = random_circular(rng, i);
    auto g = oracle::random_grid(rng, h.codomain_shape());
    const double lambda = i % 3 == 0 ? 0.01 : (i % 3 == 1 ? 0.1 : 1.0);
    auto m = build_spectral_model(h, SpectralMode::Fourier);
    set_filter(m, tikhonov_spectrum(h, lambda));
    auto dense = tikhonov_solve(h, g, {TikhonovVariant::A, lambda});
    const double r = rel(predict(m, g), dense);
    worst = std::max(worst, r);
    CHECK(r <= 1e-8);
    // independent dense oracle built from the convolution definition
    const auto& p = *h.conv();
    Eigen::MatrixXd hm = oracle::circular_conv_matrix(p.kernel, p.image_shape);
    auto ref = oracle::normal_equations(hm, Eigen::MatrixXd::Identity(hm.cols(), hm.cols()), g.vec(), lambda);
    CHECK(oracle::rel_diff(predict(m, g).vec(), ref) <= 1e-8);
  }
  MESSAGE("worst relative deviation " << worst);
}

TEST_CASE("svd chain reproduces tikhonov on arbitrary dense operators") {
  std::mt19937_64 rng(415);
  for (int trial = 0; trial < 6; ++trial) {
    const Eigen::Index rows = 4 + trial, cols = 6;
    auto h = make_dense(oracle::random_matrix(rng, rows, cols));
    auto g = oracle::random_grid(rng, {static_cast<std::size_t>(rows)});
    auto m = build_spectral_model(h, SpectralMode::Svd);
    set_filter(m, tikhonov_filter(m, 0.2));
    CHECK(rel(predict(m, g), tikhonov_solve(h, g, {TikhonovVariant::A, 0.2})) <= 1e-8);
  }
}

TEST_CASE("analysis stages preserve energy") {
  std::mt19937_64 rng(417);
  for (int i = 0; i < 4; ++i) {
    auto h = random_circular(rng, i);
    auto x = oracle::random_grid(rng, h.domain_shape());
    for (auto mode : {SpectralMode::Fourier, SpectralMode::Svd}) {
      auto m = build_spectral_model(h, mode);
      double e = 0.0;
      for (auto c : analysis(m, x)) e += std::norm(c);
      CHECK(std::abs(std::sqrt(e) - x.norm()) <= 1e-10 * x.norm());
    }
  }
}

TEST_CASE("trainability is confined to the filter") {
  std::mt19937_64 rng(419);
  auto h = random_circular(rng, 1);
  for (auto mode : {SpectralMode::Fourier, SpectralMode::Svd}) {
    auto m = build_spectral_model(h, mode);
    auto census = parameter_census(m);
    REQUIRE(census.size() == 1);
    CHECK(census[0].role == BlockRole::Filter);
    // a real signal of n samples has n real spectral degrees of freedom
    CHECK(census[0].size == h.domain_size());
  }
}

TEST_CASE("filter gradients match central differences") {
  std::mt19937_64 rng(421);
  for (int i = 0; i < 4; ++i) {
    auto h = random_circular(rng, i);
    for (auto mode : {SpectralMode::Fourier, SpectralMode::Svd}) {
      auto m = build_spectral_model(h, mode);
      auto p = trainable_values(m);
      for (double& v : p) v += 0.3 * std::normal_distribution<double>()(rng);
      set_trainable_values(m, p);
      std::vector<Example> pool;
      for (int k = 0; k < 2; ++k)
        pool.push_back({oracle::random_grid(rng, m.input_shape), oracle::random_grid(rng, m.output_shape)});
      const std::vector<std::size_t> idx{0, 1};
      std::vector<double> g;
      batch_loss(m, pool, idx, {0.05}, &g);
      REQUIRE(g.size() == p.size());
      for (std::size_t c = 0; c < p.size(); c += std::max<std::size_t>(1, p.size() / 7)) {
        auto q = p;
        q[c] += 1e-6;
        auto mp = m;
        set_trainable_values(mp, q);
        const double up = batch_loss(mp, pool, idx, {0.05}, nullptr);
        q[c] -= 2e-6;
        set_trainable_values(mp, q);
        const double down = batch_loss(mp, pool, idx, {0.05}, nullptr);
        const double fd = (up - down) / 2e-6;
        CHECK(std::abs(fd - g[c]) <= 1e-5 * std::max({std::abs(fd), std::abs(g[c]), 1e-4}));
      }
      // rank-1 mirror of frequency k is (n - k) mod n
      if (mode == SpectralMode::Fourier && h.domain_shape().size() == 1) {
        for (std::size_t k = 0; k < m.filter_im.size(); ++k) {
          CHECK(m.filter_im[k] == doctest::Approx(-m.filter_im[(m.filter_im.size() - k) % m.filter_im.size()]));
        }
      }
    }
  }
}

TEST_CASE("complex filters must be conjugate symmetric") {
  auto m = build_spectral_model(make_conv2d(SignalGrid({3}, {1, 2, 1}), {6}), SpectralMode::Fourier);
  std::vector<Complex> ok(6, 1.0), bad(6, 1.0);
  ok[1] = {1.0, 0.5};
  ok[5] = {1.0, -0.5};
  CHECK_NOTHROW(set_filter(m, std::span<const Complex>(ok)));
  bad[1] = {1.0, 0.5};
  CHECK_THROWS_AS(set_filter(m, std::span<const Complex>(bad)), ConfigError);
  CHECK_THROWS_AS(set_filter(m, std::vector<double>(5, 1.0)), DimensionError);
}

TEST_CASE("spectral serialization round trip") {
  std::mt19937_64 rng(423);
  auto h = random_circular(rng, 3);
  for (auto mode : {SpectralMode::Fourier, SpectralMode::Svd}) {
    auto m = build_spectral_model(h, mode);
    auto p = trainable_values(m);
    for (double& v : p) v *= 1.0 + 0.1 * std::normal_distribution<double>()(rng);
    set_trainable_values(m, p);
    const auto text = serialize_spectral(m);
    auto back = deserialize_spectral(text);
    CHECK(serialize_spectral(back) == text);
    CHECK(back.filter_re == m.filter_re);
    CHECK(back.psf_hash == m.psf_hash);
    auto g = oracle::random_grid(rng, m.input_shape);
    CHECK(predict(back, g) == predict(m, g));
    CHECK(text.find("\"spectral\"") != std::string::npos);
  }
  auto other = build_spectral_model(random_circular(rng, 3), SpectralMode::Fourier);
  CHECK(other.psf_hash != build_spectral_model(h, SpectralMode::Fourier).psf_hash);
  CHECK(build_spectral_model(h, SpectralMode::Svd).psf_hash == build_spectral_model(h, SpectralMode::Fourier).psf_hash);
  CHECK_THROWS_AS(deserialize_spectral("{}"), IoError);
}

TEST_CASE("fixed plus trainable two-stage model") {
  std::mt19937_64 rng(425);
  auto h = make_conv2d(oracle::random_grid(rng, {5}), {16});
  auto g = oracle::random_grid(rng, {16});

  TwoStageOptions id;
  id.init = BInit::Identity;
  auto mi = fixed_plus_trainable(h, id);
  CHECK(rel(predict(mi, g), h.adjoint_apply(g)) <= 1e-15);
  REQUIRE(parameter_census(mi).size() == 1);
  CHECK(parameter_census(mi)[0].size == 256);

  TwoStageOptions tk;
  tk.lambda = 0.05;
  auto mt = fixed_plus_trainable(h, tk);
  CHECK(rel(predict(mt, g), tikhonov_solve(h, g, {TikhonovVariant::A, 0.05})) <= 1e-8);

  TwoStageOptions kern = id;
  kern.kernel_extent = Shape{7};
  auto mk = fixed_plus_trainable(h, kern);
  CHECK(rel(predict(mk, g), h.adjoint_apply(g)) <= 1e-15);
  CHECK(trainable_parameter_count(mk) == 7);
  kern.init = BInit::Tikhonov;
  CHECK_THROWS_AS(fixed_plus_trainable(h, kern), ConfigError);

  CHECK_THROWS_AS(predict(mt, SignalGrid({15})), DimensionError);

  // a round trip keeps the fixed H^t stage
  auto back = deserialize_model(serialize_model(mt));
  CHECK(predict(back, g) == predict(mt, g));
}

TEST_CASE("training the two-stage and spectral models does not worsen test error") {
  std::mt19937_64 rng(427);
  auto h = make_conv2d(SignalGrid({5}, {0.05, 0.2, 0.5, 0.2, 0.05}), {16});
  auto data = noiseless_blur_data(rng, h, 40);

  TwoStageOptions tk;
  tk.lambda = 0.1;
  auto two = fixed_plus_trainable(h, tk);
  TrainConfig cfg;
  cfg.learning_rate = 0.02;
  cfg.epochs = 20;
  cfg.batch_size = 5;
  cfg.seed = 3;
  auto run = train(two, data, cfg, {});
  CHECK(evaluate(run.final_model, data).mse <= evaluate(two, data).mse);

  auto spec = build_spectral_model(h, SpectralMode::Fourier);
  set_filter(spec, tikhonov_spectrum(h, 0.1));
  auto srun = train(spec, data, cfg, {});
  CHECK(evaluate(srun.final_model, data).mse <= evaluate(spec, data).mse);
  CHECK(srun.history.back().train < srun.initial.train);
}
