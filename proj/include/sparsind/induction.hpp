#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sparsind/masking.hpp"
#include "sparsind/model.hpp"
#include "sparsind/tensor.hpp"

namespace sparsind {

/// Per-input-channel scale and shift for one linear layer. The scale is
/// stored as its logarithm so s = exp(log_scale) is positive by construction.
struct ScaleShift {
  std::string layer_name;
  Vector log_scale;
  Vector delta;

  static ScaleShift identity(std::string layer_name, std::size_t d_in);
  // Throws DomainError unless every s[j] > 0.
  static ScaleShift from_scale(std::string layer_name, const Vector& s, Vector delta);
  Vector scale() const { return elementwise_exp(log_scale); }
  bool is_identity() const;
};

/// Inverse Q/K scaling for one attention pair (length d_k).
struct AttnScale {
  std::string pair_name;
  Vector log_scale;

  static AttnScale identity(std::string pair_name, std::size_t d_k);
  static AttnScale from_scale(std::string pair_name, const Vector& s);
  Vector scale() const { return elementwise_exp(log_scale); }
  bool is_identity() const;
};

/// Induction parameters for a whole model, keyed by layer name. The same shape
/// doubles as the gradient container.
struct Transforms {
  std::map<std::string, ScaleShift> linear;
  std::map<std::string, AttnScale> attention;

  static Transforms identity(const Model& model);
  Transforms zeros_like() const;
};

// Keyed by prunable weight name (see Model::prunable_weights).
using MaskSet = std::map<std::string, Mask>;

class InductionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InductionConfig {
  double lr = 0.05;
  std::size_t epochs = 3;
  std::size_t steps_per_epoch = 16;
  // Steps between mask refreshes; 0 freezes the initial masks.
  std::size_t mask_refresh_period = 8;
  bool optimize_delta = true;
  bool optimize_attention = true;
  // Lets bias-free layers learn a shift by creating a zero bias to carry W*delta.
  bool materialize_bias = false;
  int max_backtracks = 30;
  double lr_growth = 1.25;
  std::size_t threads = 1;
};

struct Evaluation {
  double total = 0.0;
  // Named summands, used to locate a non-finite term.
  std::vector<std::pair<std::string, double>> terms;
};

/// Objective over Transforms with a mask-refresh rule. Implemented by the
/// distribution-level and feature-level stages.
class InductionProblem {
 public:
  virtual ~InductionProblem() = default;
  virtual MaskSet refresh_masks(const Transforms& t) const = 0;
  // Objective under fixed masks; fills grad (same layout as t) when non-null.
  virtual Evaluation evaluate(const Transforms& t, const MaskSet& masks, Transforms* grad) const = 0;
};

/// Which parameter groups move. Frozen entries keep their initial values.
struct ParamFilter {
  std::map<std::string, bool> shift_enabled;  // per linear layer
  bool scales_enabled = true;
  bool attention_enabled = true;
};

struct TracePoint {
  std::size_t step = 0;
  double objective = 0.0;
  bool refreshed = false;  // objective measured under freshly refreshed masks
};

struct InductionResult {
  Transforms transforms;  // best parameters seen
  MaskSet masks;          // masks the best objective was measured under
  double initial_objective = 0.0;
  double best_objective = 0.0;
  std::size_t best_step = 0;
  std::vector<TracePoint> trace;
};

/// Gradient descent with per-group step sizes (scales, shifts, attention) and
/// halving-on-increase backtracking. Masks are refreshed every
/// mask_refresh_period steps; the returned parameters are the best seen at
/// a refresh point (or any step when masks are frozen), so
/// best_objective <= initial_objective always holds.
InductionResult run_induction(const InductionProblem& problem, Transforms init,
                              const ParamFilter& filter, const InductionConfig& cfg,
                              const MaskSet* frozen_masks = nullptr);

/// Runs fn(i) for i in [0, count) on up to `threads` workers.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace sparsind
