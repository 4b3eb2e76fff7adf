#include "strv/numkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "strv/errors.hpp"

namespace strv::numkit {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw ContractViolation("tensor shape must have rank >= 1");
  std::size_t n = 1;
  for (auto d : shape) {
    if (d == 0) throw ContractViolation("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ContractViolation(std::string(what) + ": expected a rank-2 tensor");
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill), cols_(shape_.back()) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != element_count(shape_)) {
    throw ContractViolation("tensor data length does not match shape");
  }
  cols_ = shape_.back();
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Tensor({rows, cols}, fill);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, value); }

std::size_t Tensor::rows() const { return cols_ == 0 ? 0 : data_.size() / cols_; }
std::size_t Tensor::cols() const { return cols_; }

double Tensor::item() const {
  if (data_.size() != 1) throw ContractViolation("item() on a tensor with more than one element");
  return data_[0];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void matmul_into(const Tensor& a, const Tensor& b, Tensor& out) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t n = a.rows(), m = a.cols(), p = b.cols();
  if (b.rows() != m) throw ContractViolation("matmul: inner dimensions differ");
  if (out.rank() != 2 || out.rows() != n || out.cols() != p) {
    throw ContractViolation("matmul: output has the wrong shape");
  }
  out.fill(0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = od + i * p;
    for (std::size_t k = 0; k < m; ++k) {
      const double aik = ad[i * m + k];
      if (aik == 0.0) continue;
      const double* brow = bd + k * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
    }
  }
}

void matmul_at_b_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  // a: n x m, b: n x p, out: m x p
  const std::size_t n = a.rows(), m = a.cols(), p = b.cols();
  if (b.rows() != n || out.rows() != m || out.cols() != p) {
    throw ContractViolation("matmul_at_b: shape mismatch");
  }
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* arow = ad + r * m;
    const double* brow = bd + r * p;
    for (std::size_t i = 0; i < m; ++i) {
      const double ai = arow[i];
      if (ai == 0.0) continue;
      double* orow = od + i * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += ai * brow[j];
    }
  }
}

void matmul_a_bt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  // a: n x p, b: m x p, out: n x m
  const std::size_t n = a.rows(), p = a.cols(), m = b.rows();
  if (b.cols() != p || out.rows() != n || out.cols() != m) {
    throw ContractViolation("matmul_a_bt: shape mismatch");
  }
  // Transposing b first keeps the inner loop a contiguous axpy.
  std::vector<double> bt(p * m);
  const double* bd = b.data().data();
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t t = 0; t < p; ++t) bt[t * m + j] = bd[j * p + t];
  const double* ad = a.data().data();
  double* od = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = ad + i * p;
    double* orow = od + i * m;
    for (std::size_t t = 0; t < p; ++t) {
      const double ait = arow[t];
      if (ait == 0.0) continue;
      const double* brow = bt.data() + t * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += ait * brow[j];
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  matmul_into(a, b, out);
  return out;
}

}  // namespace strv::numkit
