#pragma once

#include <cstddef>
#include <span>

#include "invnet/operators.hpp"

namespace invnet::conv {

/// 2-D geometry; rank-1 signals use rows == 1.
struct Geometry {
  std::size_t rows = 1;
  std::size_t cols = 1;
  std::size_t krows = 1;
  std::size_t kcols = 1;
  Boundary boundary = Boundary::Circular;
};

Geometry make_geometry(const Shape& image_shape, const Shape& kernel_shape, Boundary boundary);

/// out[r,c] = sum_{a,b} k[a,b] x[r - (a - kr/2), c - (b - kc/2)]
void forward(const Geometry& g, std::span<const double> kernel, std::span<const double> x,
             std::span<double> out);
/// Correlation with the same kernel; exact adjoint of forward.
void adjoint(const Geometry& g, std::span<const double> kernel, std::span<const double> y,
             std::span<double> out);
/// Accumulates d<dy, forward(k, x)>/dk into grad.
void accumulate_kernel_grad(const Geometry& g, std::span<const double> dy,
                            std::span<const double> x, std::span<double> grad);

}  // namespace invnet::conv
