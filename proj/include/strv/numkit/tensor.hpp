#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace strv::numkit {

// Dense row-major tensor of doubles. Most of the library works with rank-2
// tensors (matrices); scalars are 1x1 and vectors are 1xn rows.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> values);
  static Tensor row(std::span<const double> values);
  static Tensor scalar(double value);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix view accessors; valid for rank-2 tensors.
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double item() const;

  void fill(double value);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  std::size_t cols_ = 0;
};

// out = a * b for matrices; out must be preallocated as (a.rows, b.cols).
void matmul_into(const Tensor& a, const Tensor& b, Tensor& out);
// out += a^T * b
void matmul_at_b_acc(const Tensor& a, const Tensor& b, Tensor& out);
// out += a * b^T
void matmul_a_bt_acc(const Tensor& a, const Tensor& b, Tensor& out);

Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace strv::numkit
