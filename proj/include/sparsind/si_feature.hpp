#pragma once

#include <set>
#include <string>

#include "sparsind/importance.hpp"
#include "sparsind/induction.hpp"
#include "sparsind/model.hpp"
#include "sparsind/si_distribution.hpp"

namespace sparsind {

/// Monotone map applied to channel means in the robust initialisation.
struct MonotoneMap {
  enum class Kind { kIdentity, kAffine } kind = Kind::kIdentity;
  double a = 1.0;  // affine: a * x + b, a > 0
  double b = 0.0;

  static MonotoneMap identity() { return {}; }
  static MonotoneMap affine(double a, double b);
  /// "identity" or "affine:a,b".
  static MonotoneMap parse(const std::string& text);
  double operator()(double x) const { return kind == Kind::kIdentity ? x : a * x + b; }
  std::string to_string() const;
};

enum class NormMode { kEntrywise, kSpectral };

struct FeatureLossConfig {
  double lambda = 0.01;  // reconstruction/regulariser balance (0 allowed for ablation)
  double alpha = 1e-3;   // regulariser strength
  double p = 2.0;        // entrywise norm order
  NormMode norm = NormMode::kEntrywise;
  MonotoneMap g;
  double eps_init = 1e-4;
  // Weight of the summed pre-adaptation objective added to the loss.
  double distribution_weight = 0.0;

  void validate() const;
};

struct RobustStats {
  std::string layer_name;
  Vector m;   // per-output-channel median of W x
  Vector mu;  // per-output-channel mean of W x
};

RobustStats robust_stats(const Linear& layer, const CalibSet& calib, std::string layer_name = {});

/// s_i = max((m_i - g(mu_i))^2, eps_init) over the pre-transform outputs W x.
Vector init_scales(const Linear& layer, const CalibSet& calib, const FeatureLossConfig& cfg);

/// Initial transforms for the feature stage: a linear layer's input scales
/// come from init_scales of the nearest upstream linear layer (all ones when
/// there is none); shifts and attention scales start at identity.
Transforms initial_feature_transforms(const Model& model, const CalibSet& calib,
                                      const FeatureLossConfig& cfg);

struct FeatureLoss {
  double total = 0.0;
  double mse = 0.0;
  double reg = 0.0;
};

/// Regulariser exp(-alpha * sum of norms) over the given weights.
double regularizer(const std::vector<const Matrix*>& weights, const FeatureLossConfig& cfg);

/// mse: mean squared difference of the two models' outputs over all entries;
/// reg: exp(-alpha * sum over induced layers of ||W||_p) on model_sparse's
/// weights (both projections for an attention pair); total = mse + lambda reg.
FeatureLoss feature_loss(const Model& model_dense, const Model& model_sparse, const CalibSet& calib,
                         const std::set<std::string>& induced_layers, const FeatureLossConfig& cfg);

/// Feature-level objective over transforms. The sparse path evaluates each
/// linear layer as (W~ . M) X~ + b~ with its own reparameterisation, which
/// matches the absorbed-then-masked model; the regulariser uses each induced
/// layer's reparameterised weight (W diag(s), diag(s_a) Wq, diag(s_a)^-1 Wk).
class FeatureProblem final : public InductionProblem {
 public:
  FeatureProblem(const Model& model, const CalibSet& calib, SparsityPattern pattern, Metric metric,
                 std::set<std::string> induced_layers, FeatureLossConfig cfg,
                 std::size_t threads = 1);

  MaskSet refresh_masks(const Transforms& t) const override;
  Evaluation evaluate(const Transforms& t, const MaskSet& masks, Transforms* grad) const override;

  FeatureLoss loss(const Transforms& t, const MaskSet& masks) const;
  const Matrix& dense_output() const { return dense_trace_.output; }

 private:
  double regularizer_term(const Transforms& t, Transforms* grad, double scale) const;

  const Model* model_;
  CalibSet calib_;
  ForwardTrace dense_trace_;
  std::set<std::string> induced_;
  FeatureLossConfig cfg_;
  DistributionProblem distribution_;
};

/// Minimises the feature loss over the induction parameters, starting from
/// initial_feature_transforms unless `init` is given.
InductionResult optimize_features(const Model& model, const MaskSet& masks, const CalibSet& calib,
                                  const SparsityPattern& pattern, Metric metric,
                                  const std::set<std::string>& induced_layers,
                                  const FeatureLossConfig& cfg, const InductionConfig& opt_cfg,
                                  const Transforms* init = nullptr);

/// All layer names (linear layers and attention pairs) in topology order.
std::set<std::string> all_layers(const Model& model);

}  // namespace sparsind
