#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "sparsind/rng.hpp"
#include "sparsind/tensor.hpp"

using namespace sparsind;

TEST(Matmul, IdentityTimesColumn) {
  EXPECT_EQ(matmul(Matrix{{1, 0}, {0, 1}}, Matrix{{3}, {4}}), (Matrix{{3}, {4}}));
}

TEST(Matmul, HandExample) {
  EXPECT_EQ(matmul(Matrix{{1, 2}, {3, 4}}, Matrix{{5}, {6}}), (Matrix{{17}, {39}}));
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  try {
    matmul(Matrix(2, 3), Matrix(2, 2));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2x2"), std::string::npos) << msg;
  }
}

TEST(Matmul, IdentityIsExact) {
  Rng rng(3);
  const Matrix a = rng.normal_matrix(5, 7);
  EXPECT_EQ(matmul(Matrix::identity(5), a), a);
  EXPECT_EQ(matmul(a, Matrix::identity(7)), a);
}

TEST(Matmul, MatchesNaiveOracle) {
  Rng rng(4);
  const Matrix a = rng.normal_matrix(9, 13);
  const Matrix b = rng.normal_matrix(13, 6);
  EXPECT_LE(oracle::max_rel_diff(matmul(a, b), oracle::product(a, b)), 1e-14);
}

TEST(Matmul, CountsProducts) {
  reset_matmul_count();
  matmul(Matrix(2, 2), Matrix(2, 2));
  matmul(Matrix(2, 2), Matrix(2, 1));
  EXPECT_EQ(matmul_count(), 2u);
}

TEST(Hadamard, Examples) {
  EXPECT_EQ(hadamard(Matrix{{2, 3}}, Matrix{{1, 0}}), (Matrix{{2, 0}}));
  EXPECT_EQ(hadamard(Matrix{{-1, 2}}, Matrix{{-1, 2}}), (Matrix{{1, 4}}));
  EXPECT_THROW(hadamard(Matrix(1, 2), Matrix(2, 1)), ShapeError);
}

TEST(Hadamard, OnesAndZeros) {
  Rng rng(5);
  const Matrix a = rng.normal_matrix(4, 6);
  EXPECT_EQ(hadamard(a, Matrix::ones(4, 6)), a);
  EXPECT_EQ(hadamard(a, Matrix(4, 6)), Matrix(4, 6));
}

TEST(PNorm, Examples) {
  EXPECT_DOUBLE_EQ(entrywise_p_norm(Matrix{{3, 4}}, 2), 5.0);
  EXPECT_DOUBLE_EQ(entrywise_p_norm(Matrix{{1, -1}, {1, -1}}, 1), 4.0);
  for (double p : {1.0, 1.5, 2.0, 7.0}) EXPECT_EQ(entrywise_p_norm(Matrix{{0, 0}}, p), 0.0);
  EXPECT_THROW(entrywise_p_norm(Matrix{{1}}, 0.5), DomainError);
}

TEST(PNorm, AbsolutelyHomogeneous) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = rng.normal_matrix(5, 5, 10.0);
    const double c = rng.uniform(-50, 50);
    const double p = rng.uniform(1, 6);
    const double lhs = entrywise_p_norm(scaled(a, c), p);
    const double rhs = std::fabs(c) * entrywise_p_norm(a, p);
    EXPECT_LE(std::fabs(lhs - rhs), 1e-12 * rhs);
  }
}

TEST(PNorm, LargeEntriesDoNotOverflow) {
  EXPECT_NEAR(entrywise_p_norm(Matrix{{1e200, 1e200}}, 4) / (1e200 * std::pow(2.0, 0.25)), 1.0,
              1e-14);
}

TEST(SpectralNorm, MatchesKnownSingularValue) {
  // diag(3, 1) rotated: sigma_max = 3.
  const double c = std::cos(0.3), s = std::sin(0.3);
  const Matrix r{{c, -s}, {s, c}};
  const Matrix a = matmul(r, Matrix{{3, 0}, {0, 1}});
  EXPECT_NEAR(spectral_norm(a).sigma, 3.0, 1e-12);
}

TEST(ColNorms, Example) {
  EXPECT_EQ(col_l2_norms(Matrix{{3, 0}, {4, 0}}), (Vector{5, 0}));
  EXPECT_THROW(col_l2_norms(Matrix()), DomainError);
}

TEST(RowStats, Examples) {
  RowStats st = row_stats(Matrix{{1, 2, 100}});
  EXPECT_EQ(st.median[0], 2.0);
  EXPECT_NEAR(st.mean[0], 103.0 / 3.0, 1e-13);
  st = row_stats(Matrix{{5}});
  EXPECT_EQ(st.median[0], 5.0);
  EXPECT_EQ(st.mean[0], 5.0);
  st = row_stats(Matrix{{4, 1, 3, 2}});
  EXPECT_EQ(st.median[0], 2.5);
  EXPECT_THROW(row_stats(Matrix()), DomainError);
}

TEST(RowStats, MatchesSortOracle) {
  Rng rng(8);
  const Matrix y = rng.normal_matrix(6, 11);
  const RowStats st = row_stats(y);
  for (std::size_t i = 0; i < 6; ++i) {
    std::vector<double> row(y.row(i).begin(), y.row(i).end());
    EXPECT_EQ(st.median[i], oracle::median(row));
    const Matrix y_even = rng.normal_matrix(1, 10);
    std::vector<double> even(y_even.row(0).begin(), y_even.row(0).end());
    EXPECT_EQ(row_stats(y_even).median[0], oracle::median(even));
  }
}

TEST(Helpers, ScaleRowsCols) {
  const Matrix a{{1, 2}, {3, 4}};
  EXPECT_EQ(scale_rows(a, Vector{2, 3}), (Matrix{{2, 4}, {9, 12}}));
  EXPECT_EQ(scale_cols(a, Vector{2, 3}), (Matrix{{2, 6}, {6, 12}}));
  EXPECT_EQ(add_to_columns(a, Vector{1, -1}), (Matrix{{2, 3}, {2, 3}}));
  EXPECT_THROW(scale_rows(a, Vector{1}), ShapeError);
}

TEST(Helpers, RequireFinite) {
  EXPECT_NO_THROW(require_finite(std::vector<double>{1, 2}, "x"));
  EXPECT_THROW(require_finite(std::vector<double>{1, NAN}, "x"), DomainError);
}
