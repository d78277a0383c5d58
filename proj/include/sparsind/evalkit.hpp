#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "sparsind/importance.hpp"
#include "sparsind/induction.hpp"
#include "sparsind/masking.hpp"
#include "sparsind/model.hpp"
#include "sparsind/si_feature.hpp"

namespace sparsind {

struct DistortionReport {
  std::string layer_name;
  double frob = 0.0;  // ||Delta Y||_F over the batch
  double rel = 0.0;   // frob / ||Y||_F, 0 when Y == 0
  bool zero_reference = false;  // ||Y||_F == 0, rel reported as 0
  Vector per_sample;  // column norms of Delta Y
};

/// Delta Y = (W - W_hat) X. Y is the dense product W X.
DistortionReport distortion(const Matrix& w, const Matrix& w_hat, const CalibSet& calib,
                            std::string layer_name = {});

struct SparsityReport {
  std::string layer_name;
  std::size_t zeros = 0;
  std::size_t total = 0;
  double rate = 0.0;
  bool pattern_ok = false;
};

SparsityReport sparsity_report(const Mask& mask, const SparsityPattern& pattern);

struct HistogramBin {
  double low = 0.0;
  double high = 0.0;
  std::size_t count = 0;
};

/// Equal-width bins over [min, max]; every bin is half-open except the last,
/// which includes max. Constant scores yield a single bin.
std::vector<HistogramBin> score_histogram(const Matrix& scores, std::size_t bins);

enum class SiStage { kOff, kDistribution, kFeature, kBoth };
SiStage parse_si_stage(const std::string& text);
std::string si_stage_name(SiStage s);

struct SiConfig {
  SiStage stage = SiStage::kDistribution;
  InductionConfig opt;
  FeatureLossConfig feature;
};

/// Masks from a metric on an untransformed model (the plain pruning path).
MaskSet compute_masks(const Model& model, const CalibSet& calib, const SparsityPattern& pattern,
                      Metric metric);

struct InductionOutcome {
  Transforms transforms;
  MaskSet masks;
  std::vector<TracePoint> trace;
  double initial_objective = 0.0;
  double best_objective = 0.0;
};

/// Runs the configured induction stage(s). For kOff returns identity
/// transforms and the plain masks.
InductionOutcome run_si(const Model& model, const CalibSet& calib, const SparsityPattern& pattern,
                        Metric metric, const SiConfig& cfg);

struct PipelineRow {
  std::string layer;
  std::string kind;  // linear | projection | logits | total | model_output
  DistortionReport no_si;
  DistortionReport si;
  double ratio = 1.0;
};

struct PipelineComparison {
  std::vector<PipelineRow> rows;
  DistortionReport total_no_si;
  DistortionReport total_si;
  double ratio = 1.0;  // total_si.frob / total_no_si.frob (1 when both are 0)
  double absorbed_max_rel = 0.0;  // dense absorbed vs dense original outputs
  InductionOutcome induction;
};

/// Prunes a copy of the model with and without induction and compares
/// distortion. Linear layers are measured in their own reparameterised frame,
/// (W~ - W~ . M) X~, on their dense-model inputs; the total aggregates the
/// linear layers (sqrt of summed squares). Attention pairs add per-projection
/// and logit-map rows, and the end-to-end output of the absorbed, masked model
/// is reported as "model_output".
PipelineComparison compare_pipelines(const Model& model, const CalibSet& calib,
                                     const SparsityPattern& pattern, Metric metric,
                                     const std::optional<SiConfig>& si);

void write_comparison_csv(std::ostream& out, const PipelineComparison& cmp);
void write_histogram_csv(std::ostream& out, const std::string& label,
                         const std::vector<HistogramBin>& bins, bool header = true);
void write_sparsity_csv(std::ostream& out, const std::vector<SparsityReport>& reports);

/// Shortest decimal that round-trips the double.
std::string format_double(double v);

}  // namespace sparsind
