#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "sparsind/importance.hpp"
#include "sparsind/masking.hpp"
#include "sparsind/rng.hpp"

using namespace sparsind;

namespace {

std::vector<double> flat(const Matrix& m) { return {m.values().begin(), m.values().end()}; }

}  // namespace

TEST(Magnitude, Examples) {
  EXPECT_EQ(score_magnitude(Matrix{{-3, 2}}), (Matrix{{3, 2}}));
  EXPECT_EQ(score_magnitude(Matrix(2, 2)), Matrix(2, 2));
  Rng rng(1);
  const Matrix w = rng.normal_matrix(4, 4);
  EXPECT_EQ(score_magnitude(w), score_magnitude(scaled(w, -1)));
}

TEST(HessianDiag, Examples) {
  EXPECT_EQ(hessian_diag(CalibSet{Matrix{{2}, {0}}}).d, (Vector{4, 0}));
  EXPECT_EQ(hessian_diag(CalibSet{Matrix{{1, -1}, {1, 1}}}).d[0], 1.0);
  EXPECT_THROW(hessian_diag(CalibSet{Matrix()}), DomainError);
}

TEST(HessianDiag, MatchesFullCovarianceDiagonal) {
  Rng rng(2);
  const Matrix x = rng.normal_matrix(3, 5);
  const Matrix cov = oracle::product(x, transpose(x));
  const Vector d = hessian_diag(CalibSet{x}).d;
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(d[j], cov(j, j) / 5.0, 1e-12);
}

TEST(ScoreActivation, Examples) {
  Rng rng(3);
  const Matrix w = rng.normal_matrix(3, 4);
  EXPECT_EQ(score_activation(w, HessianDiag{"", Vector::ones(4)}), score_magnitude(w));
  EXPECT_EQ(score_activation(Matrix{{1, 1}}, HessianDiag{"", Vector{4, 1}}), (Matrix{{2, 1}}));
  EXPECT_THROW(score_activation(w, HessianDiag{"", Vector(3)}), ShapeError);
}

TEST(ScoreActivation, RankingMatchesColumnNormScore) {
  Rng rng(4);
  const Matrix w = rng.normal_matrix(6, 8);
  const Matrix x = rng.normal_matrix(8, 20);
  // Oracle: |w_ij| * ||x_j||, with row norms of X computed directly.
  Matrix ref(6, 8);
  for (std::size_t j = 0; j < 8; ++j) {
    double s = 0;
    for (std::size_t k = 0; k < 20; ++k) s += x(j, k) * x(j, k);
    for (std::size_t i = 0; i < 6; ++i) ref(i, j) = std::fabs(w(i, j)) * std::sqrt(s);
  }
  EXPECT_EQ(oracle::kendall_tau(flat(score_activation(w, hessian_diag(CalibSet{x}))), flat(ref)),
            1.0);
}

TEST(FastRefresh, Examples) {
  const HessianDiag d{"l", Vector{1, 4}};
  EXPECT_EQ(fast_refresh(d, Vector::ones(2)).d, d.d);
  EXPECT_EQ(fast_refresh(d, Vector{2, 0.5}).d, (Vector{4, 1}));
  EXPECT_THROW(fast_refresh(d, Vector{1, 0}), DomainError);
  EXPECT_THROW(fast_refresh(d, Vector{1, -2}), DomainError);
  EXPECT_THROW(fast_refresh(d, Vector{1}), ShapeError);
}

TEST(FastRefresh, Composes) {
  Rng rng(5);
  const HessianDiag d{"", rng.uniform_vector(10, 0.1, 3)};
  const Vector s1 = rng.uniform_vector(10, 0.2, 5), s2 = rng.uniform_vector(10, 0.2, 5);
  const Vector a = fast_refresh(fast_refresh(d, s1), s2).d;
  const Vector b = fast_refresh(d, hadamard(s1, s2)).d;
  for (std::size_t j = 0; j < 10; ++j) EXPECT_NEAR(a[j], b[j], 1e-12 * b[j]);
}

TEST(FastRefresh, AgreesWithClassicalRecompute) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = rng.normal_matrix(32, 16);
    const Vector s = rng.uniform_vector(32, 0.1, 10);
    const Vector fast = fast_refresh(hessian_diag(CalibSet{x}), s).d;
    const Vector classical = classical_refresh(CalibSet{x}, s).d;
    for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(fast[j], classical[j], 1e-12 * classical[j]);
    const Matrix w = rng.normal_matrix(8, 32);
    const auto p = SparsityPattern::unstructured(0.5);
    EXPECT_EQ(make_mask(score_activation(w, HessianDiag{"", fast}), p).bits,
              make_mask(score_activation(w, HessianDiag{"", classical}), p).bits);
  }
}

TEST(ScoreActivation, LayerConstantDoesNotChangeMask) {
  Rng rng(7);
  const Matrix w = rng.normal_matrix(8, 16);
  const Vector d = rng.uniform_vector(16, 0.1, 4);
  Vector cd = d;
  for (double& v : cd.values()) v *= 37.5;
  for (const auto& p : {SparsityPattern::unstructured(0.5), SparsityPattern::nm(2, 4)}) {
    EXPECT_EQ(make_mask(score_activation(w, HessianDiag{"", d}), p).bits,
              make_mask(score_activation(w, HessianDiag{"", cd}), p).bits);
  }
}

TEST(Benchmark, FastPathIssuesNoMatrixProducts) {
  const BenchmarkResult r = benchmark_refresh(256, 32, 8, 1, 1);
  EXPECT_EQ(r.fast_matmuls, 0u);
  EXPECT_LE(r.max_rel_diff, 1e-12);
  EXPECT_GT(r.classical_total_s, 0.0);
}

TEST(Benchmark, SpeedupGrowsWithSamples) {
  double prev = 0;
  for (std::size_t n : {32, 128, 512}) {
    const BenchmarkResult r = benchmark_refresh(2048, n, 32, 2, 5);
    EXPECT_GT(r.speedup, prev) << "n = " << n;
    prev = r.speedup;
  }
}

TEST(Metric, Parse) {
  EXPECT_EQ(parse_metric("wanda-fast"), Metric::kWandaFast);
  EXPECT_EQ(metric_name(parse_metric("magnitude")), "magnitude");
  EXPECT_ANY_THROW(parse_metric("sparsegpt"));
}
