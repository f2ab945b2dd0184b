#include "xprompt/matrix.hpp"

#include <cmath>
#include <cstring>

#include "xprompt/errors.hpp"

namespace xprompt {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string());
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) {
      throw DimensionError("ragged row list passed to Matrix::from_rows");
    }
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) {
  for (double& x : data_) x = v;
}

bool Matrix::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

bool Matrix::bitwise_equal(const Matrix& other) const {
  if (!same_shape(other)) return false;
  if (data_.empty()) return true;
  return std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

// The kernels below fix the summation order: for each output element the
// contributions are added in increasing inner index.

void gemm_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t n = a.rows(), inner = a.cols(), p = b.cols();
  const double* ad = a.values().data();
  const double* bd = b.values().data();
  double* od = out.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = od + i * p;
    for (std::size_t k = 0; k < inner; ++k) {
      const double av = ad[i * inner + k];
      const double* brow = bd + k * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  }
}

void gemm_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t n = a.rows(), inner = a.cols(), p = b.rows();
  const double* ad = a.values().data();
  const double* bd = b.values().data();
  double* od = out.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = ad + i * inner;
    for (std::size_t j = 0; j < p; ++j) {
      const double* brow = bd + j * inner;
      double s = 0.0;
      for (std::size_t k = 0; k < inner; ++k) s += arow[k] * brow[k];
      od[i * p + j] += s;
    }
  }
}

void gemm_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  // a: inner x n, b: inner x p, out: n x p
  const std::size_t inner = a.rows(), n = a.cols(), p = b.cols();
  const double* ad = a.values().data();
  const double* bd = b.values().data();
  double* od = out.values().data();
  for (std::size_t k = 0; k < inner; ++k) {
    const double* arow = ad + k * n;
    const double* brow = bd + k * p;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = arow[i];
      double* orow = od + i * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace xprompt
