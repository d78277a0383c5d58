#include "sparsind/masking.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

namespace sparsind {

namespace {

// Order for "keep first": higher score wins, then lower flat index.
struct KeepOrder {
  std::span<const double> scores;
  bool operator()(std::size_t a, std::size_t b) const {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  }
};

void validate_pattern(const SparsityPattern& p) {
  if (const auto* u = std::get_if<Unstructured>(&p.variant)) {
    if (!(u->rate >= 0.0 && u->rate <= 1.0)) {
      throw PatternError("unstructured rate must lie in [0, 1], got " + std::to_string(u->rate));
    }
  } else {
    const auto& nm = std::get<NM>(p.variant);
    if (nm.n == 0 || nm.m == 0 || nm.n >= nm.m) {
      throw PatternError("N:M pattern needs 0 < n < m, got " + std::to_string(nm.n) + ":" +
                         std::to_string(nm.m));
    }
  }
}

std::size_t parse_size(const std::string& text, const std::string& whole) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw PatternError("cannot parse sparsity pattern '" + whole + "'");
  }
  return v;
}

}  // namespace

SparsityPattern SparsityPattern::unstructured(double rate) {
  SparsityPattern p{Unstructured{rate}};
  validate_pattern(p);
  return p;
}

SparsityPattern SparsityPattern::nm(std::size_t n, std::size_t m) {
  SparsityPattern p{NM{n, m}};
  validate_pattern(p);
  return p;
}

SparsityPattern SparsityPattern::parse(const std::string& text) {
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    return nm(parse_size(text.substr(0, colon), text), parse_size(text.substr(colon + 1), text));
  }
  double rate = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), rate);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw PatternError("cannot parse sparsity pattern '" + text + "'");
  }
  return unstructured(rate);
}

std::string SparsityPattern::to_string() const {
  std::ostringstream os;
  if (const auto* u = std::get_if<Unstructured>(&variant)) {
    os << u->rate;
  } else {
    const auto& p = std::get<NM>(variant);
    os << p.n << ":" << p.m;
  }
  return os.str();
}

std::size_t SparsityPattern::zero_count(std::size_t rows, std::size_t cols) const {
  if (const auto* u = std::get_if<Unstructured>(&variant)) {
    return static_cast<std::size_t>(std::floor(u->rate * static_cast<double>(rows * cols)));
  }
  const auto& p = std::get<NM>(variant);
  if (cols % p.m != 0) {
    throw PatternError("N:M group length " + std::to_string(p.m) + " does not divide " +
                       std::to_string(cols) + " columns");
  }
  return rows * (cols / p.m) * (p.m - p.n);
}

Mask make_mask(const Matrix& scores, const SparsityPattern& pattern, std::string layer_name) {
  validate_pattern(pattern);
  require_finite(scores.values(), "make_mask scores");
  Mask mask{std::move(layer_name), Matrix(scores.rows(), scores.cols(), 0.0)};
  auto bits = mask.bits.values();
  const KeepOrder order{scores.values()};

  if (const auto* u = std::get_if<Unstructured>(&pattern.variant)) {
    (void)u;
    const std::size_t total = scores.size();
    const std::size_t keep = total - pattern.zero_count(scores.rows(), scores.cols());
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (keep < total) std::nth_element(idx.begin(), idx.begin() + keep, idx.end(), order);
    for (std::size_t i = 0; i < keep; ++i) bits[idx[i]] = 1.0;
    return mask;
  }

  const auto& nm = std::get<NM>(pattern.variant);
  (void)pattern.zero_count(scores.rows(), scores.cols());  // validates divisibility
  std::vector<std::size_t> group(nm.m);
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    for (std::size_t g = 0; g < scores.cols(); g += nm.m) {
      const std::size_t base = r * scores.cols() + g;
      std::iota(group.begin(), group.end(), base);
      std::nth_element(group.begin(), group.begin() + nm.n, group.end(), order);
      for (std::size_t i = 0; i < nm.n; ++i) bits[group[i]] = 1.0;
    }
  }
  return mask;
}

Matrix apply_mask(const Matrix& w, const Mask& mask) {
  if (w.rows() != mask.bits.rows() || w.cols() != mask.bits.cols()) {
    throw ShapeError("apply_mask: weight " + shape_string(w) + " vs mask " +
                     shape_string(mask.bits) +
                     (mask.layer_name.empty() ? "" : " for layer '" + mask.layer_name + "'"));
  }
  return hadamard(w, mask.bits);
}

std::size_t count_zeros(const Matrix& bits) {
  return static_cast<std::size_t>(
      std::count(bits.values().begin(), bits.values().end(), 0.0));
}

bool mask_satisfies(const Matrix& bits, const SparsityPattern& pattern) {
  for (double b : bits.values()) {
    if (b != 0.0 && b != 1.0) return false;
  }
  if (std::holds_alternative<Unstructured>(pattern.variant)) {
    return count_zeros(bits) == pattern.zero_count(bits.rows(), bits.cols());
  }
  const auto& nm = std::get<NM>(pattern.variant);
  if (bits.cols() % nm.m != 0) return false;
  for (std::size_t r = 0; r < bits.rows(); ++r) {
    auto row = bits.row(r);
    for (std::size_t g = 0; g < bits.cols(); g += nm.m) {
      const auto ones = std::count(row.begin() + g, row.begin() + g + nm.m, 1.0);
      if (static_cast<std::size_t>(ones) != nm.n) return false;
    }
  }
  return true;
}

}  // namespace sparsind
