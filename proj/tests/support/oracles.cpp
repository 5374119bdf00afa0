#include "oracles.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace oracle {

using invnet::Shape;
using invnet::SignalGrid;

Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

SignalGrid random_grid(std::mt19937_64& rng, const Shape& shape) {
  return SignalGrid::from_vector(shape, random_vector(rng, static_cast<Eigen::Index>(invnet::shape_size(shape))));
}

std::vector<Complex> dft(const std::vector<double>& x, const Shape& shape) {
  const std::size_t rows = shape.size() == 2 ? shape[0] : 1;
  const std::size_t cols = shape.back();
  std::vector<Complex> out(rows * cols);
  for (std::size_t u = 0; u < rows; ++u) {
    for (std::size_t v = 0; v < cols; ++v) {
      Complex acc = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const double phase = -2.0 * std::numbers::pi *
                               (static_cast<double>(u * r) / static_cast<double>(rows) +
                                static_cast<double>(v * c) / static_cast<double>(cols));
          acc += x[r * cols + c] * std::polar(1.0, phase);
        }
      }
      out[u * cols + v] = acc;
    }
  }
  return out;
}

namespace {

Eigen::MatrixXd conv_matrix(const SignalGrid& kernel, const Shape& image_shape, bool circular) {
  const long rows = image_shape.size() == 2 ? static_cast<long>(image_shape[0]) : 1;
  const long cols = static_cast<long>(image_shape.back());
  const long kr = kernel.rank() == 2 ? static_cast<long>(kernel.shape()[0]) : 1;
  const long kc = static_cast<long>(kernel.shape().back());
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(rows * cols, rows * cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c)
      for (long a = 0; a < kr; ++a)
        for (long b = 0; b < kc; ++b) {
          long sr = r - a + kr / 2, sc = c - b + kc / 2;
          if (circular) {
            sr = ((sr % rows) + rows) % rows;
            sc = ((sc % cols) + cols) % cols;
          } else if (sr < 0 || sr >= rows || sc < 0 || sc >= cols) {
            continue;
          }
          m(r * cols + c, sr * cols + sc) += kernel[static_cast<std::size_t>(a * kc + b)];
        }
  return m;
}

}  // namespace

Eigen::MatrixXd circular_conv_matrix(const SignalGrid& kernel, const Shape& image_shape) {
  return conv_matrix(kernel, image_shape, true);
}

Eigen::MatrixXd zero_pad_conv_matrix(const SignalGrid& kernel, const Shape& image_shape) {
  return conv_matrix(kernel, image_shape, false);
}

std::vector<Complex> kernel_transfer(const SignalGrid& kernel, const Shape& image_shape) {
  const long rows = image_shape.size() == 2 ? static_cast<long>(image_shape[0]) : 1;
  const long cols = static_cast<long>(image_shape.back());
  const long kr = kernel.rank() == 2 ? static_cast<long>(kernel.shape()[0]) : 1;
  const long kc = static_cast<long>(kernel.shape().back());
  std::vector<double> embedded(static_cast<std::size_t>(rows * cols), 0.0);
  for (long a = 0; a < kr; ++a)
    for (long b = 0; b < kc; ++b) {
      const long r = ((a - kr / 2) % rows + rows) % rows;
      const long c = ((b - kc / 2) % cols + cols) % cols;
      embedded[static_cast<std::size_t>(r * cols + c)] += kernel[static_cast<std::size_t>(a * kc + b)];
    }
  return dft(embedded, image_shape);
}

Eigen::VectorXd normal_equations(const Eigen::MatrixXd& h, const Eigen::MatrixXd& d,
                                 const Eigen::VectorXd& g, double lambda) {
  const Eigen::MatrixXd a = h.transpose() * h + lambda * d.transpose() * d;
  return a.inverse() * (h.transpose() * g);
}

double l1_min_by_sign_enumeration(const Eigen::MatrixXd& h, const Eigen::VectorXd& g, double lambda,
                                  int max_support, Eigen::VectorXd* argmin) {
  const int n = static_cast<int>(h.cols());
  auto objective = [&](const Eigen::VectorXd& f) {
    return 0.5 * (g - h * f).squaredNorm() + lambda * f.lpNorm<1>();
  };
  Eigen::VectorXd best_f = Eigen::VectorXd::Zero(n);
  double best = objective(best_f);

  std::vector<int> support;
  auto visit = [&](auto&& self, int start) -> void {
    if (!support.empty()) {
      const int k = static_cast<int>(support.size());
      Eigen::MatrixXd hs(h.rows(), k);
      for (int j = 0; j < k; ++j) hs.col(j) = h.col(support[static_cast<std::size_t>(j)]);
      const Eigen::MatrixXd gram = hs.transpose() * hs;
      Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
      if (lu.rank() == k) {
        const Eigen::VectorXd rhs0 = hs.transpose() * g;
        for (int pattern = 0; pattern < (1 << k); ++pattern) {
          Eigen::VectorXd signs(k);
          for (int j = 0; j < k; ++j) signs[j] = (pattern >> j) & 1 ? -1.0 : 1.0;
          const Eigen::VectorXd fs = lu.solve(rhs0 - lambda * signs);
          bool consistent = true;
          for (int j = 0; j < k; ++j) consistent = consistent && fs[j] * signs[j] > 0.0;
          if (!consistent) continue;
          Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
          for (int j = 0; j < k; ++j) f[support[static_cast<std::size_t>(j)]] = fs[j];
          const double v = objective(f);
          if (v < best) {
            best = v;
            best_f = f;
          }
        }
      }
    }
    if (static_cast<int>(support.size()) == max_support) return;
    for (int j = start; j < n; ++j) {
      support.push_back(j);
      self(self, j + 1);
      support.pop_back();
    }
  };
  visit(visit, 0);
  if (argmin) *argmin = best_f;
  return best;
}

double rel_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

}  // namespace oracle

namespace oracle {

SparseRecovery certified_sparse_recovery(std::mt19937_64& rng, double lambda) {
  SparseRecovery s;
  s.lambda = lambda;
  std::uniform_int_distribution<int> pick(0, 7);
  for (;;) {
    ++s.draws;
    s.h = random_matrix(rng, 6, 8) / std::sqrt(6.0);
    Eigen::VectorXd truth = Eigen::VectorXd::Zero(8);
    const int a = pick(rng);
    int b = pick(rng);
    while (b == a) b = pick(rng);
    truth[a] = 1.5;
    truth[b] = -1.0;
    s.g = s.h * truth + 0.01 * random_vector(rng, 6);
    s.optimum = l1_min_by_sign_enumeration(s.h, s.g, lambda, 3, &s.argmin);
    const Eigen::VectorXd corr = s.h.transpose() * (s.g - s.h * s.argmin);
    bool kkt = true;
    for (Eigen::Index i = 0; i < corr.size(); ++i) {
      if (s.argmin[i] != 0.0) {
        kkt = kkt && std::abs(corr[i] - lambda * (s.argmin[i] > 0 ? 1.0 : -1.0)) <= 1e-9;
      } else {
        kkt = kkt && std::abs(corr[i]) <= lambda;
      }
    }
    if (kkt) return s;
  }
}

}  // namespace oracle
