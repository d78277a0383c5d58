#include "sparsind/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sparsind {

namespace {

thread_local std::uint64_t g_matmul_count = 0;

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

}  // namespace

Vector::Vector(std::size_t len, double fill) : data_(len, fill) {}

Vector::Vector(std::initializer_list<double> values) : data_(values) {}

Vector::Vector(std::vector<double> values) : data_(std::move(values)) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                     std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Vector Matrix::column(std::size_t c) const {
  Vector v(rows_);
  for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
  return v;
}

std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

std::uint64_t matmul_count() { return g_matmul_count; }
void reset_matmul_count() { g_matmul_count = 0; }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a) + " x " + shape_string(b));
  }
  ++g_matmul_count;
  Matrix c(a.rows(), b.cols());
  // i-k-j order keeps the inner loop contiguous in both b and c.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto crow = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix c(a.rows(), a.cols());
  auto av = a.values();
  auto bv = b.values();
  auto cv = c.values();
  for (std::size_t i = 0; i < cv.size(); ++i) cv[i] = av[i] * bv[i];
  return c;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix c = a;
  auto bv = b.values();
  auto cv = c.values();
  for (std::size_t i = 0; i < cv.size(); ++i) cv[i] += bv[i];
  return c;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  Matrix c = a;
  auto bv = b.values();
  auto cv = c.values();
  for (std::size_t i = 0; i < cv.size(); ++i) cv[i] -= bv[i];
  return c;
}

Matrix scaled(const Matrix& a, double c) {
  Matrix out = a;
  for (double& v : out.values()) v *= c;
  return out;
}

Vector matvec(const Matrix& a, const Vector& x) {
  if (a.cols() != x.size()) {
    throw ShapeError("matvec: " + shape_string(a) + " with vector of length " +
                     std::to_string(x.size()));
  }
  Vector y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double acc = 0.0;
    auto r = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) acc += r[j] * x[j];
    y[i] = acc;
  }
  return y;
}

Matrix scale_rows(const Matrix& a, const Vector& v) {
  if (a.rows() != v.size()) {
    throw ShapeError("scale_rows: " + shape_string(a) + " with vector of length " +
                     std::to_string(v.size()));
  }
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (double& x : out.row(i)) x *= v[i];
  return out;
}

Matrix scale_cols(const Matrix& a, const Vector& v) {
  if (a.cols() != v.size()) {
    throw ShapeError("scale_cols: " + shape_string(a) + " with vector of length " +
                     std::to_string(v.size()));
  }
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) r[j] *= v[j];
  }
  return out;
}

Matrix add_to_columns(const Matrix& a, const Vector& v) {
  if (a.rows() != v.size()) {
    throw ShapeError("add_to_columns: " + shape_string(a) + " with vector of length " +
                     std::to_string(v.size()));
  }
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (double& x : out.row(i)) x += v[i];
  return out;
}

Matrix vstack(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("vstack: column counts differ " + shape_string(a) + " / " + shape_string(b));
  }
  std::vector<double> data(a.raw());
  data.insert(data.end(), b.raw().begin(), b.raw().end());
  return Matrix(a.rows() + b.rows(), a.cols(), std::move(data));
}

double frobenius_norm(const Matrix& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v * v;
  return std::sqrt(acc);
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs(const Vector& v) {
  double m = 0.0;
  for (double x : v.values()) m = std::max(m, std::abs(x));
  return m;
}

double entrywise_p_norm(const Matrix& w, double p) {
  if (!(p >= 1.0)) throw DomainError("entrywise_p_norm: p must be >= 1, got " + std::to_string(p));
  if (p == 1.0) {
    double acc = 0.0;
    for (double v : w.values()) acc += std::abs(v);
    return acc;
  }
  if (p == 2.0) return frobenius_norm(w);
  // Factor out the largest magnitude so |w|^p neither overflows nor underflows.
  const double scale = max_abs(w);
  if (scale == 0.0) return 0.0;
  double acc = 0.0;
  for (double v : w.values()) acc += std::pow(std::abs(v) / scale, p);
  return scale * std::pow(acc, 1.0 / p);
}

SpectralResult spectral_norm(const Matrix& w, int max_iters, double tol) {
  SpectralResult res;
  res.left = Vector(w.rows());
  res.right = Vector(w.cols());
  if (w.empty() || max_abs(w) == 0.0) return res;

  // Deterministic start: column sums of |w| (nonzero since w != 0), then power iteration.
  Vector v(w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) v[j] += std::abs(w(i, j)) + 1e-3 * (j + 1);
  auto normalize = [](Vector& x) {
    double n = 0.0;
    for (double e : x.values()) n += e * e;
    n = std::sqrt(n);
    for (double& e : x.values()) e /= n;
    return n;
  };
  normalize(v);
  const Matrix wt = transpose(w);
  double sigma = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Vector u = matvec(w, v);
    const double s = normalize(u);
    Vector next = matvec(wt, u);
    normalize(next);
    v = std::move(next);
    if (std::abs(s - sigma) <= tol * s) {
      sigma = s;
      break;
    }
    sigma = s;
  }
  Vector u = matvec(w, v);
  res.sigma = normalize(u);
  res.left = std::move(u);
  res.right = std::move(v);
  return res;
}

Vector col_l2_norms(const Matrix& x) {
  if (x.empty()) throw DomainError("col_l2_norms: empty matrix");
  Vector out(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) out[j] += r[j] * r[j];
  }
  for (double& v : out.values()) v = std::sqrt(v);
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw DomainError("median: empty sample");
  const std::size_t n = values.size();
  const std::size_t mid = n / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[mid];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lower + upper);
}

RowStats row_stats(const Matrix& y) {
  if (y.rows() == 0 || y.cols() == 0) throw DomainError("row_stats: empty matrix");
  RowStats stats{Vector(y.rows()), Vector(y.rows())};
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    double sum = 0.0;
    for (double v : r) sum += v;
    stats.mean[i] = sum / static_cast<double>(y.cols());
    stats.median[i] = median(std::vector<double>(r.begin(), r.end()));
  }
  return stats;
}

Vector hadamard(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw ShapeError("hadamard: vector lengths " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  Vector c(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] * b[i];
  return c;
}

Vector elementwise_exp(const Vector& v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::exp(v[i]);
  return out;
}

Vector elementwise_log(const Vector& v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0.0)) throw DomainError("log of non-positive entry at index " + std::to_string(i));
    out[i] = std::log(v[i]);
  }
  return out;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(std::span<const double> values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw DomainError(what + ": non-finite entry at flat index " + std::to_string(i));
    }
  }
}

}  // namespace sparsind
