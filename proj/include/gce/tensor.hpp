#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace gce {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Every numeric quantity in the library (node and edge features, MLP
/// weights, scalars) lives in a Tensor. Matrix operations require rank 2;
/// scalars are stored as 1x1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor scalar(double value);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor column(std::span<const double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const;
  std::size_t cols() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool flag) noexcept { requires_grad_ = flag; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  // Value of a single-element tensor.
  double item() const;

  bool all_finite() const noexcept;

 private:
  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
};

// Same shape and identical bit patterns.
bool bitwise_equal(const Tensor& a, const Tensor& b) noexcept;

double max_abs_diff(const Tensor& a, const Tensor& b);

namespace kernels {

// c = a * b
Tensor matmul(const Tensor& a, const Tensor& b);
// c = a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// c = a^T * b
Tensor matmul_tn(const Tensor& a, const Tensor& b);

void add_inplace(Tensor& dst, const Tensor& src);

}  // namespace kernels

}  // namespace gce
