#include "sparsind/evalkit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "sparsind/si_distribution.hpp"

namespace sparsind {

namespace {

DistortionReport report_from_delta(std::string name, const Matrix& delta, const Matrix& reference) {
  DistortionReport r;
  r.layer_name = std::move(name);
  r.frob = frobenius_norm(delta);
  const double ref = frobenius_norm(reference);
  r.zero_reference = ref == 0.0;
  r.rel = r.zero_reference ? 0.0 : r.frob / ref;
  r.per_sample = Vector(delta.cols());
  for (std::size_t i = 0; i < delta.rows(); ++i) {
    auto row = delta.row(i);
    for (std::size_t k = 0; k < delta.cols(); ++k) r.per_sample[k] += row[k] * row[k];
  }
  for (double& v : r.per_sample.values()) v = std::sqrt(v);
  return r;
}

double safe_ratio(double num, double den) {
  if (den == 0.0) return num == 0.0 ? 1.0 : INFINITY;
  return num / den;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

DistortionReport distortion(const Matrix& w, const Matrix& w_hat, const CalibSet& calib,
                            std::string layer_name) {
  if (w.rows() != w_hat.rows() || w.cols() != w_hat.cols()) {
    throw ShapeError("distortion: weight " + shape_string(w) + " vs pruned " + shape_string(w_hat));
  }
  if (calib.x.rows() != w.cols()) {
    throw ShapeError("distortion: weight " + shape_string(w) + " vs calibration " +
                     shape_string(calib.x));
  }
  return report_from_delta(std::move(layer_name), matmul(subtract(w, w_hat), calib.x),
                           matmul(w, calib.x));
}

SparsityReport sparsity_report(const Mask& mask, const SparsityPattern& pattern) {
  SparsityReport r;
  r.layer_name = mask.layer_name;
  r.zeros = count_zeros(mask.bits);
  r.total = mask.bits.size();
  r.rate = r.total == 0 ? 0.0 : static_cast<double>(r.zeros) / static_cast<double>(r.total);
  r.pattern_ok = mask_satisfies(mask.bits, pattern);
  return r;
}

std::vector<HistogramBin> score_histogram(const Matrix& scores, std::size_t bins) {
  if (bins == 0) throw DomainError("score_histogram: bins must be >= 1");
  if (scores.empty()) throw DomainError("score_histogram: empty scores");
  const auto [lo_it, hi_it] = std::minmax_element(scores.values().begin(), scores.values().end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (lo == hi) return {{lo, hi, scores.size()}};

  std::vector<HistogramBin> out(bins);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].low = lo + width * static_cast<double>(b);
    out[b].high = b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1);
  }
  for (double v : scores.values()) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    if (b >= bins) b = bins - 1;
    // Guard the computed index against rounding at the edges.
    while (b > 0 && v < out[b].low) --b;
    while (b + 1 < bins && v >= out[b + 1].low) ++b;
    ++out[b].count;
  }
  return out;
}

SiStage parse_si_stage(const std::string& text) {
  if (text == "off") return SiStage::kOff;
  if (text == "distribution") return SiStage::kDistribution;
  if (text == "feature") return SiStage::kFeature;
  if (text == "both") return SiStage::kBoth;
  throw std::invalid_argument("unknown SI stage '" + text + "' (off|distribution|feature|both)");
}

std::string si_stage_name(SiStage s) {
  switch (s) {
    case SiStage::kOff:
      return "off";
    case SiStage::kDistribution:
      return "distribution";
    case SiStage::kFeature:
      return "feature";
    case SiStage::kBoth:
      return "both";
  }
  return "?";
}

MaskSet compute_masks(const Model& model, const CalibSet& calib, const SparsityPattern& pattern,
                      Metric metric) {
  const ForwardTrace trace = forward_trace(model, calib.x);
  const MaskRefresher refresher(model, trace, pattern, metric);
  return refresher.masks(Transforms::identity(model));
}

InductionOutcome run_si(const Model& model, const CalibSet& calib, const SparsityPattern& pattern,
                        Metric metric, const SiConfig& cfg) {
  const MaskSet plain = compute_masks(model, calib, pattern, metric);
  InductionOutcome out;
  if (cfg.stage == SiStage::kOff) {
    out.transforms = Transforms::identity(model);
    out.masks = plain;
    return out;
  }
  InductionResult res;
  if (cfg.stage == SiStage::kDistribution) {
    res = optimize_distribution(model, plain, calib, pattern, metric, cfg.opt);
  } else {
    FeatureLossConfig fcfg = cfg.feature;
    if (cfg.stage == SiStage::kBoth && fcfg.distribution_weight == 0.0) fcfg.distribution_weight = 1.0;
    res = optimize_features(model, plain, calib, pattern, metric, all_layers(model), fcfg, cfg.opt);
  }
  out.transforms = std::move(res.transforms);
  out.masks = std::move(res.masks);
  out.trace = std::move(res.trace);
  out.initial_objective = res.initial_objective;
  out.best_objective = res.best_objective;
  return out;
}

PipelineComparison compare_pipelines(const Model& model, const CalibSet& calib,
                                     const SparsityPattern& pattern, Metric metric,
                                     const std::optional<SiConfig>& si) {
  PipelineComparison cmp;
  const ForwardTrace trace = forward_trace(model, calib.x);
  const MaskSet plain = compute_masks(model, calib, pattern, metric);
  if (si && si->stage != SiStage::kOff) {
    cmp.induction = run_si(model, calib, pattern, metric, *si);
  } else {
    cmp.induction.transforms = Transforms::identity(model);
    cmp.induction.masks = plain;
  }
  const Transforms& t = cmp.induction.transforms;
  const MaskSet& induced = cmp.induction.masks;

  double sq_no = 0.0, sq_si = 0.0, sq_ref_no = 0.0, sq_ref_si = 0.0;
  auto make_row = [](std::string layer, std::string kind, DistortionReport a, DistortionReport b) {
    PipelineRow row{std::move(layer), std::move(kind), std::move(a), std::move(b), 1.0};
    row.ratio = safe_ratio(row.si.frob, row.no_si.frob);
    return row;
  };

  for (const auto& name : model.topology()) {
    const Layer& l = model.layer(name);
    const Matrix& x = trace.inputs.at(name);
    if (l.is_linear()) {
      const Matrix& w = l.linear().weight;
      DistortionReport a = distortion(w, apply_mask(w, plain.at(name)), CalibSet{x}, name);
      const ReparamLinear r = reparam_linear(l.linear(), t.linear.at(name));
      const Matrix x_t = r.input.apply(x);
      const Matrix& wt = r.layer.weight;
      DistortionReport b = distortion(wt, apply_mask(wt, induced.at(name)), CalibSet{x_t}, name);
      sq_no += a.frob * a.frob;
      sq_si += b.frob * b.frob;
      const double ref_no = frobenius_norm(matmul(w, x));
      const double ref_si = frobenius_norm(matmul(wt, x_t));
      sq_ref_no += ref_no * ref_no;
      sq_ref_si += ref_si * ref_si;
      cmp.rows.push_back(make_row(name, "linear", std::move(a), std::move(b)));
    } else {
      const AttentionQK& pair = l.attention();
      const AttentionQK scaled_pair = reparam_attention(pair, t.attention.at(name));
      const std::string qn = name + ".wq";
      const std::string kn = name + ".wk";
      cmp.rows.push_back(make_row(
          qn, "projection", distortion(pair.wq, apply_mask(pair.wq, plain.at(qn)), CalibSet{x}, qn),
          distortion(scaled_pair.wq, apply_mask(scaled_pair.wq, induced.at(qn)), CalibSet{x}, qn)));
      cmp.rows.push_back(make_row(
          kn, "projection", distortion(pair.wk, apply_mask(pair.wk, plain.at(kn)), CalibSet{x}, kn),
          distortion(scaled_pair.wk, apply_mask(scaled_pair.wk, induced.at(kn)), CalibSet{x}, kn)));

      const Matrix dense_logits = attention_logits(pair, x);
      const AttentionQK pruned_plain{apply_mask(pair.wq, plain.at(qn)), apply_mask(pair.wk, plain.at(kn))};
      const AttentionQK pruned_si{apply_mask(scaled_pair.wq, induced.at(qn)),
                                  apply_mask(scaled_pair.wk, induced.at(kn))};
      const std::string ln = name + ".logits";
      cmp.rows.push_back(make_row(
          ln, "logits",
          report_from_delta(ln, subtract(dense_logits, attention_logits(pruned_plain, x)), dense_logits),
          report_from_delta(ln, subtract(dense_logits, attention_logits(pruned_si, x)), dense_logits)));
    }
  }

  cmp.total_no_si.layer_name = "total";
  cmp.total_no_si.frob = std::sqrt(sq_no);
  cmp.total_no_si.zero_reference = sq_ref_no == 0.0;
  cmp.total_no_si.rel = sq_ref_no == 0.0 ? 0.0 : std::sqrt(sq_no / sq_ref_no);
  cmp.total_si.layer_name = "total";
  cmp.total_si.frob = std::sqrt(sq_si);
  cmp.total_si.zero_reference = sq_ref_si == 0.0;
  cmp.total_si.rel = sq_ref_si == 0.0 ? 0.0 : std::sqrt(sq_si / sq_ref_si);
  cmp.ratio = safe_ratio(cmp.total_si.frob, cmp.total_no_si.frob);
  cmp.rows.push_back(make_row("total", "total", cmp.total_no_si, cmp.total_si));

  // End to end: the pruned plain model and the absorbed, masked SI model.
  const Matrix dense_out = trace.output;
  const Model absorbed = absorb(model, t);
  const Matrix absorbed_out = forward(absorbed, calib.x);
  const double scale = max_abs(dense_out);
  const double diff = max_abs(subtract(absorbed_out, dense_out));
  cmp.absorbed_max_rel = scale == 0.0 ? diff : diff / scale;

  const Matrix out_plain = forward(apply_masks(model, plain), calib.x);
  const Matrix out_si = forward(apply_masks(absorbed, induced), calib.x);
  cmp.rows.push_back(make_row("model_output", "model_output",
                              report_from_delta("model_output", subtract(dense_out, out_plain), dense_out),
                              report_from_delta("model_output", subtract(dense_out, out_si), dense_out)));
  return cmp;
}

void write_comparison_csv(std::ostream& out, const PipelineComparison& cmp) {
  out << "layer,kind,no_si_frob,no_si_rel,si_frob,si_rel,ratio,zero_reference\n";
  for (const auto& r : cmp.rows) {
    out << r.layer << ',' << r.kind << ',' << format_double(r.no_si.frob) << ','
        << format_double(r.no_si.rel) << ',' << format_double(r.si.frob) << ','
        << format_double(r.si.rel) << ',' << format_double(r.ratio) << ','
        << ((r.no_si.zero_reference || r.si.zero_reference) ? 1 : 0) << '\n';
  }
}

void write_histogram_csv(std::ostream& out, const std::string& label,
                         const std::vector<HistogramBin>& bins, bool header) {
  if (header) out << "label,bin_low,bin_high,count\n";
  for (const auto& b : bins) {
    out << label << ',' << format_double(b.low) << ',' << format_double(b.high) << ',' << b.count
        << '\n';
  }
}

void write_sparsity_csv(std::ostream& out, const std::vector<SparsityReport>& reports) {
  out << "layer,zeros,total,rate,pattern_ok\n";
  for (const auto& r : reports) {
    out << r.layer_name << ',' << r.zeros << ',' << r.total << ',' << format_double(r.rate) << ','
        << (r.pattern_ok ? 1 : 0) << '\n';
  }
}

}  // namespace sparsind
