#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <variant>

#include "sparsind/tensor.hpp"

namespace sparsind {

class PatternError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Unstructured {
  double rate = 0.0;  // fraction of entries zeroed, per layer
};

struct NM {
  std::size_t n = 2;  // kept per group
  std::size_t m = 4;  // group length along a row
};

struct SparsityPattern {
  std::variant<Unstructured, NM> variant;

  static SparsityPattern unstructured(double rate);
  static SparsityPattern nm(std::size_t n, std::size_t m);
  /// "0.5" -> Unstructured(0.5), "2:4" -> NM(2, 4).
  static SparsityPattern parse(const std::string& text);

  bool is_nm() const { return std::holds_alternative<NM>(variant); }
  std::string to_string() const;
  // Number of zeros the pattern produces on a rows x cols weight.
  std::size_t zero_count(std::size_t rows, std::size_t cols) const;
};

struct Mask {
  std::string layer_name;
  Matrix bits;  // entries exactly 0 or 1
};

/// Keeps the highest-scoring entries: the top (1 - rate) fraction per layer for
/// Unstructured, the top n of each m-wide row group for NM. Equal scores keep
/// the lower row-major index first.
Mask make_mask(const Matrix& scores, const SparsityPattern& pattern, std::string layer_name = {});

Matrix apply_mask(const Matrix& w, const Mask& mask);

/// True iff the bits are binary and satisfy the pattern's count/group constraints.
bool mask_satisfies(const Matrix& bits, const SparsityPattern& pattern);

std::size_t count_zeros(const Matrix& bits);

}  // namespace sparsind
