#pragma once

// Central finite differences over every induction parameter, masks held fixed.

#include <cmath>
#include <functional>
#include <vector>

#include "sparsind/induction.hpp"

namespace gradcheck {

using sparsind::Transforms;

// Visits every scalar parameter (log scales, shifts, attention log scales) in
// a fixed order.
inline void for_each_param(Transforms& t, const std::function<void(double&)>& fn) {
  for (auto& [name, ss] : t.linear) {
    for (double& v : ss.log_scale.values()) fn(v);
    for (double& v : ss.delta.values()) fn(v);
  }
  for (auto& [name, a] : t.attention)
    for (double& v : a.log_scale.values()) fn(v);
}

inline std::vector<double> flatten(const Transforms& t) {
  std::vector<double> out;
  Transforms copy = t;
  for_each_param(copy, [&](double& v) { out.push_back(v); });
  return out;
}

inline std::vector<double> finite_difference(const std::function<double(const Transforms&)>& f,
                                             const Transforms& at, double h = 1e-5) {
  std::vector<double> out;
  Transforms probe = at;
  for_each_param(probe, [&](double& v) {
    const double keep = v;
    v = keep + h;
    const double up = f(probe);
    v = keep - h;
    const double down = f(probe);
    v = keep;
    out.push_back((up - down) / (2 * h));
  });
  return out;
}

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0 ? 0.0 : std::sqrt(diff) / scale;
}

}  // namespace gradcheck
