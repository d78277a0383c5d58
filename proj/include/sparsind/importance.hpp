#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "sparsind/tensor.hpp"

namespace sparsind {

/// Calibration batch: columns are input vectors (d_in x n_samples).
struct CalibSet {
  Matrix x;

  std::size_t dim() const { return x.rows(); }
  std::size_t samples() const { return x.cols(); }
};

/// Diagonal of the empirical input second moment E[x x^T], used as a
/// curvature proxy. Entries are non-negative.
struct HessianDiag {
  std::string layer_name;
  Vector d;
};

enum class Metric { kMagnitude, kWanda, kWandaFast };

Metric parse_metric(const std::string& text);
std::string metric_name(Metric m);

Matrix score_magnitude(const Matrix& w);

/// d[j] = (1/n) sum_k x[j,k]^2.
HessianDiag hessian_diag(const CalibSet& calib, std::string layer_name = {});

/// score[i][j] = |w[i][j]| * sqrt(d[j]).
Matrix score_activation(const Matrix& w, const HessianDiag& d);

/// Cached-diagonal update for inputs rescaled by diag(s): d'[j] = s[j]^2 d[j].
/// O(d_in); issues no matrix products.
HessianDiag fast_refresh(const HessianDiag& d, const Vector& s);

/// Classical path: materialise diag(s) X and recompute the diagonal from it.
HessianDiag classical_refresh(const CalibSet& calib, const Vector& s, std::string layer_name = {});

struct BenchmarkResult {
  std::size_t d_in = 0;
  std::size_t n_samples = 0;
  std::size_t iters = 0;
  double classical_total_s = 0.0;
  double fast_total_s = 0.0;
  double classical_per_iter_s = 0.0;
  double fast_per_iter_s = 0.0;
  double speedup = 0.0;
  std::uint64_t fast_matmuls = 0;       // matrix products issued on the fast path
  std::uint64_t classical_matmuls = 0;  // ... and on the classical path
  double max_rel_diff = 0.0;            // agreement of the two refreshed diagonals
};

/// Times `iters` refreshes of a random d_in x n calibration set under a fresh
/// random scaling per iteration, for both paths. Each path is run `repeats`
/// times and the fastest run is reported.
BenchmarkResult benchmark_refresh(std::size_t d_in, std::size_t n_samples, std::size_t iters,
                                  std::uint64_t seed = 0, int repeats = 3);

}  // namespace sparsind
