#include "sparsind/importance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <vector>

#include "sparsind/rng.hpp"

namespace sparsind {

Metric parse_metric(const std::string& text) {
  if (text == "magnitude") return Metric::kMagnitude;
  if (text == "wanda") return Metric::kWanda;
  if (text == "wanda-fast") return Metric::kWandaFast;
  throw std::invalid_argument("unknown metric '" + text + "' (magnitude|wanda|wanda-fast)");
}

std::string metric_name(Metric m) {
  switch (m) {
    case Metric::kMagnitude:
      return "magnitude";
    case Metric::kWanda:
      return "wanda";
    case Metric::kWandaFast:
      return "wanda-fast";
  }
  return "?";
}

Matrix score_magnitude(const Matrix& w) {
  Matrix s = w;
  for (double& v : s.values()) v = std::abs(v);
  return s;
}

HessianDiag hessian_diag(const CalibSet& calib, std::string layer_name) {
  if (calib.x.rows() == 0 || calib.x.cols() == 0) {
    throw DomainError("hessian_diag: empty calibration set");
  }
  HessianDiag h{std::move(layer_name), Vector(calib.x.rows())};
  const double inv_n = 1.0 / static_cast<double>(calib.x.cols());
  for (std::size_t j = 0; j < calib.x.rows(); ++j) {
    double acc = 0.0;
    for (double v : calib.x.row(j)) acc += v * v;
    h.d[j] = acc * inv_n;
  }
  return h;
}

Matrix score_activation(const Matrix& w, const HessianDiag& d) {
  if (d.d.size() != w.cols()) {
    throw ShapeError("score_activation: diagonal length " + std::to_string(d.d.size()) +
                     " vs weight " + shape_string(w));
  }
  Vector root(d.d.size());
  for (std::size_t j = 0; j < root.size(); ++j) root[j] = std::sqrt(d.d[j]);
  Matrix s(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    auto wr = w.row(i);
    auto sr = s.row(i);
    for (std::size_t j = 0; j < w.cols(); ++j) sr[j] = std::abs(wr[j]) * root[j];
  }
  return s;
}

HessianDiag fast_refresh(const HessianDiag& d, const Vector& s) {
  if (s.size() != d.d.size()) {
    throw ShapeError("fast_refresh: scale length " + std::to_string(s.size()) +
                     " vs diagonal length " + std::to_string(d.d.size()));
  }
  HessianDiag out{d.layer_name, Vector(d.d.size())};
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (!(s[j] > 0.0)) {
      throw DomainError("fast_refresh: scale must be positive, s[" + std::to_string(j) +
                        "] = " + std::to_string(s[j]));
    }
    out.d[j] = s[j] * s[j] * d.d[j];
  }
  return out;
}

HessianDiag classical_refresh(const CalibSet& calib, const Vector& s, std::string layer_name) {
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (!(s[j] > 0.0)) throw DomainError("classical_refresh: scale must be positive");
  }
  return hessian_diag(CalibSet{scale_rows(calib.x, s)}, std::move(layer_name));
}

BenchmarkResult benchmark_refresh(std::size_t d_in, std::size_t n_samples, std::size_t iters,
                                  std::uint64_t seed, int repeats) {
  if (d_in == 0 || n_samples == 0 || iters == 0) {
    throw DomainError("benchmark_refresh: dims and iters must be >= 1");
  }
  using clock = std::chrono::steady_clock;
  Rng rng(seed);
  const CalibSet calib{rng.normal_matrix(d_in, n_samples)};
  std::vector<Vector> scales;
  scales.reserve(iters);
  for (std::size_t i = 0; i < iters; ++i) {
    Vector s(d_in);
    for (double& v : s.values()) v = std::exp(rng.uniform(-1.0, 1.0));
    scales.push_back(std::move(s));
  }

  BenchmarkResult res;
  res.d_in = d_in;
  res.n_samples = n_samples;
  res.iters = iters;
  res.classical_total_s = std::numeric_limits<double>::infinity();
  res.fast_total_s = std::numeric_limits<double>::infinity();

  // Results are folded into a checksum so the refreshes cannot be elided.
  volatile double sink = 0.0;
  std::vector<HessianDiag> classical(iters);
  std::vector<HessianDiag> fast(iters);

  for (int rep = 0; rep < std::max(1, repeats); ++rep) {
    reset_matmul_count();
    auto t0 = clock::now();
    for (std::size_t i = 0; i < iters; ++i) classical[i] = classical_refresh(calib, scales[i]);
    auto t1 = clock::now();
    res.classical_matmuls = matmul_count();
    res.classical_total_s =
        std::min(res.classical_total_s, std::chrono::duration<double>(t1 - t0).count());

    reset_matmul_count();
    t0 = clock::now();
    // Cached once per session; not part of the per-refresh cost.
    const HessianDiag cached = hessian_diag(calib);
    t1 = clock::now();
    for (std::size_t i = 0; i < iters; ++i) fast[i] = fast_refresh(cached, scales[i]);
    auto t2 = clock::now();
    res.fast_matmuls = matmul_count();
    res.fast_total_s = std::min(res.fast_total_s, std::chrono::duration<double>(t2 - t1).count());
    (void)t0;

    double acc = 0.0;
    for (std::size_t i = 0; i < iters; ++i) acc += classical[i].d[0] + fast[i].d[0];
    sink = sink + acc;
  }
  (void)sink;

  for (std::size_t i = 0; i < iters; ++i) {
    for (std::size_t j = 0; j < d_in; ++j) {
      const double a = classical[i].d[j];
      const double b = fast[i].d[j];
      const double denom = std::max(std::abs(a), std::abs(b));
      if (denom > 0.0) res.max_rel_diff = std::max(res.max_rel_diff, std::abs(a - b) / denom);
    }
  }
  res.classical_per_iter_s = res.classical_total_s / static_cast<double>(iters);
  res.fast_per_iter_s = res.fast_total_s / static_cast<double>(iters);
  res.speedup = res.fast_total_s > 0.0 ? res.classical_total_s / res.fast_total_s
                                       : std::numeric_limits<double>::infinity();
  return res;
}

}  // namespace sparsind
