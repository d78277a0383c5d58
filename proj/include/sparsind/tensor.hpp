#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparsind {

// Thrown when operand shapes are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Thrown when a value lies outside an operation's domain (p < 1, s <= 0, empty input, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Dense real vector (64-bit).
class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t len, double fill = 0.0);
  Vector(std::initializer_list<double> values);
  explicit Vector(std::vector<double> values);

  static Vector ones(std::size_t len) { return Vector(len, 1.0); }

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& raw() const { return data_; }

  bool operator==(const Vector&) const = default;

 private:
  std::vector<double> data_;
};

/// Dense real matrix, row-major, 64-bit.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix ones(std::size_t rows, std::size_t cols) { return Matrix(rows, cols, 1.0); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& raw() const { return data_; }

  Vector column(std::size_t c) const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_string(const Matrix& m);

// Instrumentation: number of matrix-matrix products issued by this thread.
std::uint64_t matmul_count();
void reset_matmul_count();

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scaled(const Matrix& a, double c);
Vector matvec(const Matrix& a, const Vector& x);

// diag(v) * a
Matrix scale_rows(const Matrix& a, const Vector& v);
// a * diag(v)
Matrix scale_cols(const Matrix& a, const Vector& v);
// a with v added to every column (broadcast bias).
Matrix add_to_columns(const Matrix& a, const Vector& v);
// Stacks a on top of b (same column count).
Matrix vstack(const Matrix& a, const Matrix& b);

double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
double max_abs(const Vector& v);

/// (sum_ij |w_ij|^p)^(1/p); throws DomainError for p < 1.
double entrywise_p_norm(const Matrix& w, double p);

/// Largest singular value, by power iteration on w^T w. Also returns the
/// leading singular vectors when requested.
struct SpectralResult {
  double sigma = 0.0;
  Vector left;
  Vector right;
};
SpectralResult spectral_norm(const Matrix& w, int max_iters = 500, double tol = 1e-14);

Vector col_l2_norms(const Matrix& x);

struct RowStats {
  Vector median;
  Vector mean;
};
/// Per-row median and mean (rows are channels, columns are samples). The
/// median of an even-length row is the mean of the two central order statistics.
RowStats row_stats(const Matrix& y);

double median(std::vector<double> values);

Vector hadamard(const Vector& a, const Vector& b);
Vector elementwise_exp(const Vector& v);
Vector elementwise_log(const Vector& v);

bool all_finite(std::span<const double> values);
void require_finite(std::span<const double> values, const std::string& what);

}  // namespace sparsind
