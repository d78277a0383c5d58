#pragma once

// Reference implementations used only by tests. Deliberately naive.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "sparsind/tensor.hpp"

namespace oracle {

using sparsind::Matrix;
using sparsind::Vector;

inline Matrix product(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double acc = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += static_cast<long double>(a(i, k)) * b(k, j);
      c(i, j) = static_cast<double>(acc);
    }
  return c;
}

// Y = W X + b, bias broadcast across columns.
inline Matrix affine(const Matrix& w, const Vector* b, const Matrix& x) {
  Matrix y = product(w, x);
  if (b)
    for (std::size_t i = 0; i < y.rows(); ++i)
      for (std::size_t k = 0; k < y.cols(); ++k) y(i, k) += (*b)[i];
  return y;
}

inline double max_abs(const Matrix& a) {
  double m = 0;
  for (double v : a.values()) m = std::max(m, std::fabs(v));
  return m;
}

inline double max_rel_diff(const Matrix& a, const Matrix& ref) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.values()[i] - ref.values()[i]));
  const double s = oracle::max_abs(ref);
  return s == 0 ? m : m / s;
}

// Kendall tau-a over two score lists (O(n^2)).
inline double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
  long long conc = 0, disc = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double x = (a[i] - a[j]) * (b[i] - b[j]);
      if (x > 0) ++conc;
      else if (x < 0) ++disc;
    }
  const long long total = static_cast<long long>(a.size()) * (a.size() - 1) / 2;
  return total == 0 ? 1.0 : static_cast<double>(conc - disc) / static_cast<double>(total);
}

// Median by full sort.
inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace oracle
