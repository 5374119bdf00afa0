#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace invnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Flat row-major sample vector with shape metadata. Every image, sinogram
/// and 1-D signal in the library is a SignalGrid.
///
/// Invariants: product(shape) == size(), all extents positive, all samples
/// finite. Construction enforces them.
class SignalGrid {
 public:
  SignalGrid() = default;
  explicit SignalGrid(Shape shape);  // zero-filled
  SignalGrid(Shape shape, std::vector<double> data);

  static SignalGrid zeros(const Shape& shape) { return SignalGrid(shape); }
  static SignalGrid filled(const Shape& shape, double value);
  static SignalGrid from_vector(const Shape& shape, const Eigen::VectorXd& v);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rank() const noexcept { return shape_.size(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  Eigen::Map<const Eigen::VectorXd> vec() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }
  Eigen::Map<Eigen::VectorXd> vec() {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }

  /// Throws ConfigError if any sample is NaN or infinite.
  void check_finite() const;

  double norm() const;
  double squared_norm() const;
  double l1_norm() const;
  double max_abs() const;

  SignalGrid& operator+=(const SignalGrid& other);
  SignalGrid& operator-=(const SignalGrid& other);
  SignalGrid& operator*=(double s);

  friend SignalGrid operator+(SignalGrid a, const SignalGrid& b) { return a += b; }
  friend SignalGrid operator-(SignalGrid a, const SignalGrid& b) { return a -= b; }
  friend SignalGrid operator*(double s, SignalGrid a) { return a *= s; }

  bool operator==(const SignalGrid& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

double dot(const SignalGrid& a, const SignalGrid& b);

/// Throws DimensionError naming both shapes unless they are equal.
void require_shape(const Shape& expected, const Shape& actual, const char* context);

}  // namespace invnet
