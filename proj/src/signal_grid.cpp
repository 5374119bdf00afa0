#include "invnet/signal_grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "invnet/errors.hpp"

namespace invnet {

std::size_t shape_size(const Shape& shape) {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ConfigError("signal grid shape must have at least one extent");
  for (auto e : shape) {
    if (e == 0) throw ConfigError("signal grid extents must be positive, got " + shape_to_string(shape));
  }
}

}  // namespace

SignalGrid::SignalGrid(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), 0.0);
}

SignalGrid::SignalGrid(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("signal grid shape " + shape_to_string(shape_) + " holds " +
                         std::to_string(shape_size(shape_)) + " samples, data has " +
                         std::to_string(data_.size()));
  }
  check_finite();
}

SignalGrid SignalGrid::filled(const Shape& shape, double value) {
  SignalGrid out(shape);
  std::fill(out.data_.begin(), out.data_.end(), value);
  out.check_finite();
  return out;
}

SignalGrid SignalGrid::from_vector(const Shape& shape, const Eigen::VectorXd& v) {
  return SignalGrid(shape, std::vector<double>(v.data(), v.data() + v.size()));
}

void SignalGrid::check_finite() const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw ConfigError("non-finite sample at index " + std::to_string(i));
    }
  }
}

double SignalGrid::squared_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return s;
}

double SignalGrid::norm() const { return std::sqrt(squared_norm()); }

double SignalGrid::l1_norm() const {
  double s = 0.0;
  for (double v : data_) s += std::abs(v);
  return s;
}

double SignalGrid::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

SignalGrid& SignalGrid::operator+=(const SignalGrid& other) {
  require_shape(shape_, other.shape_, "grid addition");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

SignalGrid& SignalGrid::operator-=(const SignalGrid& other) {
  require_shape(shape_, other.shape_, "grid subtraction");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

SignalGrid& SignalGrid::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

double dot(const SignalGrid& a, const SignalGrid& b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot product of " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void require_shape(const Shape& expected, const Shape& actual, const char* context) {
  if (expected != actual) {
    throw DimensionError(std::string(context) + ": expected shape " + shape_to_string(expected) +
                         ", got " + shape_to_string(actual));
  }
}

}  // namespace invnet
