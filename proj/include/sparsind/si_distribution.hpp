#pragma once

#include <string>
#include <vector>

#include "sparsind/importance.hpp"
#include "sparsind/induction.hpp"
#include "sparsind/masking.hpp"
#include "sparsind/model.hpp"

namespace sparsind {

/// Linear layer rewritten for inputs diag(s)^-1 (x - delta):
/// weight W diag(s), bias b + W delta, so W~ X~ + b~ == W X + b.
struct ReparamLinear {
  Linear layer;
  InputTransform input;
};

ReparamLinear reparam_linear(const Linear& layer, const ScaleShift& t);

/// Wq rows scaled by s_a, Wk rows by 1/s_a; the logit map is unchanged.
AttentionQK reparam_attention(const AttentionQK& pair, const AttnScale& a);

struct LinearGrad {
  Vector log_scale;
  Vector delta;
};

/// Mean over calibration columns of ||(W~ - W~ . M) X~||^2 for the
/// reparameterised layer. When grad is non-null it receives the derivatives
/// with respect to log s and delta, with the mask held fixed.
double preadapt_objective(const Linear& layer, const ScaleShift& t, const Mask& mask,
                          const CalibSet& calib, LinearGrad* grad = nullptr);

/// The same objective for an attention pair, treating each scaled projection
/// as a bias-free linear layer on the pair's input. grad receives d/d log s_a.
double preadapt_attention_objective(const AttentionQK& pair, const AttnScale& a,
                                    const Mask& mask_q, const Mask& mask_k, const CalibSet& calib,
                                    Vector* grad = nullptr);

/// Scores for every prunable weight under the given transforms, as the masks
/// are refreshed during induction: linear layers score W against the refreshed
/// diagonal s^2 . diag(H) (fast path for wanda-fast, recomputed from diag(s) X
/// for wanda, unit diagonal for magnitude); attention projections score the
/// row-scaled projections against their input diagonal.
class MaskRefresher {
 public:
  MaskRefresher(const Model& model, const ForwardTrace& dense_trace, SparsityPattern pattern,
                Metric metric);

  Matrix scores(const std::string& prunable_name, const Transforms& t) const;
  MaskSet masks(const Transforms& t) const;
  const SparsityPattern& pattern() const { return pattern_; }
  Metric metric() const { return metric_; }

 private:
  const Model* model_;
  const ForwardTrace* trace_;
  SparsityPattern pattern_;
  Metric metric_;
  std::map<std::string, HessianDiag> cached_;
};

/// True when a shift on this layer's input can be folded into existing
/// weights: no attention pair reads the same hidden state.
bool shift_absorbable(const Model& model, const std::string& linear_name);

/// Parameter filter for the given model and config (shift only on layers with
/// a bias, or any layer when materialize_bias is set, and only where the shift
/// is absorbable).
ParamFilter make_param_filter(const Model& model, const InductionConfig& cfg);

class DistributionProblem final : public InductionProblem {
 public:
  DistributionProblem(const Model& model, const CalibSet& calib, SparsityPattern pattern,
                      Metric metric, std::size_t threads = 1);

  MaskSet refresh_masks(const Transforms& t) const override;
  Evaluation evaluate(const Transforms& t, const MaskSet& masks, Transforms* grad) const override;

  const ForwardTrace& dense_trace() const { return trace_; }

 private:
  const Model* model_;
  ForwardTrace trace_;
  MaskRefresher refresher_;
  std::size_t threads_;
};

/// Minimises the summed pre-adaptation objective over (log s, delta, log s_a)
/// with the backbone frozen. `masks` are the starting masks and must cover every
/// prunable weight; they stay fixed when mask_refresh_period is 0.
InductionResult optimize_distribution(const Model& model, const MaskSet& masks,
                                      const CalibSet& calib, const SparsityPattern& pattern,
                                      Metric metric, const InductionConfig& cfg,
                                      const Transforms* init = nullptr);

class AbsorbError : public std::runtime_error {
 public:
  AbsorbError(const std::string& what, std::vector<std::string> edges);
  const std::vector<std::string>& edges() const { return edges_; }

 private:
  std::vector<std::string> edges_;
};

/// Folds the transforms into the weights. Each linear layer's compensating
/// input transform moves into the producing linear layer (rows scaled by 1/s,
/// bias shifted), the Q/K projections reading the same hidden state are
/// column-scaled by s, and a transform on the raw input is recorded as the
/// model's input transform. A nonzero shift that would have to pass through
/// an attention pair cannot be folded; all such edges are reported.
Model absorb(const Model& model, const Transforms& t);

/// Applies masks (keyed by prunable weight name) to a model's weights.
Model apply_masks(const Model& model, const MaskSet& masks);

}  // namespace sparsind
