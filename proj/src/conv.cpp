#include "invnet/conv.hpp"

#include "invnet/errors.hpp"

namespace invnet::conv {

Geometry make_geometry(const Shape& image_shape, const Shape& kernel_shape, Boundary boundary) {
  if (image_shape.size() != kernel_shape.size() || image_shape.empty() || image_shape.size() > 2) {
    throw ConfigError("convolution needs rank-1 or rank-2 image and kernel of equal rank, got image " +
                      shape_to_string(image_shape) + " and kernel " + shape_to_string(kernel_shape));
  }
  Geometry g;
  g.boundary = boundary;
  if (image_shape.size() == 1) {
    g.cols = image_shape[0];
    g.kcols = kernel_shape[0];
  } else {
    g.rows = image_shape[0];
    g.cols = image_shape[1];
    g.krows = kernel_shape[0];
    g.kcols = kernel_shape[1];
  }
  if (g.krows % 2 == 0 || g.kcols % 2 == 0) {
    throw ConfigError("convolution kernel extents must be odd, got " + shape_to_string(kernel_shape));
  }
  if (g.krows > g.rows || g.kcols > g.cols) {
    throw ConfigError("convolution kernel " + shape_to_string(kernel_shape) +
                      " exceeds image " + shape_to_string(image_shape));
  }
  return g;
}

namespace {

using Index = std::ptrdiff_t;

inline Index wrap(Index i, Index n) {
  i %= n;
  return i < 0 ? i + n : i;
}

// Calls fn(out_index, in_index, kernel_index) for every contributing triple
// of forward(): out[r,c] += k[a,b] * x[r - (a - cr), c - (b - cc)].
template <typename Fn>
void for_each_tap(const Geometry& g, Fn&& fn) {
  const Index rows = static_cast<Index>(g.rows), cols = static_cast<Index>(g.cols);
  const Index kr = static_cast<Index>(g.krows), kc = static_cast<Index>(g.kcols);
  const Index cr = kr / 2, cc = kc / 2;
  const bool circ = g.boundary == Boundary::Circular;
  for (Index a = 0; a < kr; ++a) {
    for (Index b = 0; b < kc; ++b) {
      const Index dr = a - cr, dc = b - cc;
      const auto kidx = static_cast<std::size_t>(a * kc + b);
      for (Index r = 0; r < rows; ++r) {
        Index sr = r - dr;
        if (circ) {
          sr = wrap(sr, rows);
        } else if (sr < 0 || sr >= rows) {
          continue;
        }
        for (Index c = 0; c < cols; ++c) {
          Index sc = c - dc;
          if (circ) {
            sc = wrap(sc, cols);
          } else if (sc < 0 || sc >= cols) {
            continue;
          }
          fn(static_cast<std::size_t>(r * cols + c), static_cast<std::size_t>(sr * cols + sc), kidx);
        }
      }
    }
  }
}

}  // namespace

void forward(const Geometry& g, std::span<const double> kernel, std::span<const double> x,
             std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for_each_tap(g, [&](std::size_t o, std::size_t i, std::size_t k) { out[o] += kernel[k] * x[i]; });
}

void adjoint(const Geometry& g, std::span<const double> kernel, std::span<const double> y,
             std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for_each_tap(g, [&](std::size_t o, std::size_t i, std::size_t k) { out[i] += kernel[k] * y[o]; });
}

void accumulate_kernel_grad(const Geometry& g, std::span<const double> dy,
                            std::span<const double> x, std::span<double> grad) {
  for_each_tap(g, [&](std::size_t o, std::size_t i, std::size_t k) { grad[k] += dy[o] * x[i]; });
}

}  // namespace invnet::conv
