#include "sparsind/si_distribution.hpp"

#include <cmath>
#include <sstream>

namespace sparsind {

namespace {

Matrix complement(const Matrix& bits) {
  Matrix c(bits.rows(), bits.cols());
  auto in = bits.values();
  auto out = c.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 - in[i];
  return c;
}

void require_mask_shape(const Matrix& w, const Mask& mask, const std::string& name) {
  if (w.rows() != mask.bits.rows() || w.cols() != mask.bits.cols()) {
    throw ShapeError("layer '" + name + "': mask " + shape_string(mask.bits) + " vs weight " +
                     shape_string(w));
  }
}

double sum_squares(const Matrix& m) {
  double acc = 0.0;
  for (double v : m.values()) acc += v * v;
  return acc;
}

Vector reciprocal(const Vector& v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = 1.0 / v[i];
  return out;
}

// Distortion energy of a bias-free projection with a fixed input, plus the
// gradient with respect to the (already scaled) weight when requested.
double projection_energy(const Matrix& w_scaled, const Mask& mask, const Matrix& x,
                         Matrix* grad_w) {
  const Matrix pruned_part = hadamard(w_scaled, complement(mask.bits));
  const Matrix e = matmul(pruned_part, x);
  const double n = static_cast<double>(x.cols());
  if (grad_w) {
    *grad_w = hadamard(scaled(matmul(e, transpose(x)), 2.0 / n), complement(mask.bits));
  }
  return sum_squares(e) / n;
}

}  // namespace

ReparamLinear reparam_linear(const Linear& layer, const ScaleShift& t) {
  if (t.log_scale.size() != layer.d_in() || t.delta.size() != layer.d_in()) {
    throw ShapeError("layer '" + t.layer_name + "': transform length " +
                     std::to_string(t.log_scale.size()) + " vs input width " +
                     std::to_string(layer.d_in()));
  }
  const Vector s = t.scale();
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (!(s[j] > 0.0) || !std::isfinite(s[j])) {
      throw DomainError("layer '" + t.layer_name + "': scale must be positive and finite, s[" +
                        std::to_string(j) + "] = " + std::to_string(s[j]));
    }
  }
  ReparamLinear r{Linear{scale_cols(layer.weight, s), layer.bias}, InputTransform{s, t.delta}};
  bool has_shift = false;
  for (double v : t.delta.values()) has_shift = has_shift || v != 0.0;
  if (has_shift) {
    Vector b = layer.bias ? *layer.bias : Vector(layer.d_out());
    const Vector wd = matvec(layer.weight, t.delta);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += wd[i];
    r.layer.bias = std::move(b);
  }
  return r;
}

AttentionQK reparam_attention(const AttentionQK& pair, const AttnScale& a) {
  if (a.log_scale.size() != pair.d_k()) {
    throw ShapeError("pair '" + a.pair_name + "': scale length " +
                     std::to_string(a.log_scale.size()) + " vs d_k " + std::to_string(pair.d_k()));
  }
  const Vector s = a.scale();
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (!(s[j] > 0.0) || !std::isfinite(s[j])) {
      throw DomainError("pair '" + a.pair_name + "': scale must be positive and finite");
    }
  }
  return {scale_rows(pair.wq, s), scale_rows(pair.wk, reciprocal(s))};
}

double preadapt_objective(const Linear& layer, const ScaleShift& t, const Mask& mask,
                          const CalibSet& calib, LinearGrad* grad) {
  require_mask_shape(layer.weight, mask, t.layer_name);
  if (calib.x.rows() != layer.d_in() || calib.x.cols() == 0) {
    throw ShapeError("layer '" + t.layer_name + "': calibration batch " + shape_string(calib.x) +
                     " vs input width " + std::to_string(layer.d_in()));
  }
  const ReparamLinear r = reparam_linear(layer, t);
  const Matrix x_t = r.input.apply(calib.x);
  const Matrix keep_out = complement(mask.bits);
  const Matrix pruned_part = hadamard(r.layer.weight, keep_out);
  const Matrix e = matmul(pruned_part, x_t);
  const double n = static_cast<double>(calib.x.cols());
  const double value = sum_squares(e) / n;

  if (grad) {
    const Vector& s = r.input.scale;
    const Matrix g_w = hadamard(scaled(matmul(e, transpose(x_t)), 2.0 / n), keep_out);
    const Matrix g_x = scaled(matmul(transpose(pruned_part), e), 2.0 / n);
    grad->log_scale = Vector(s.size());
    grad->delta = Vector(s.size());
    for (std::size_t j = 0; j < s.size(); ++j) {
      double ds = 0.0;
      for (std::size_t i = 0; i < layer.d_out(); ++i) ds += g_w(i, j) * layer.weight(i, j);
      double gx_sum = 0.0;
      double gx_dot = 0.0;
      for (std::size_t k = 0; k < x_t.cols(); ++k) {
        gx_sum += g_x(j, k);
        gx_dot += g_x(j, k) * x_t(j, k);
      }
      ds -= gx_dot / s[j];
      grad->log_scale[j] = s[j] * ds;
      grad->delta[j] = -gx_sum / s[j];
    }
  }
  return value;
}

double preadapt_attention_objective(const AttentionQK& pair, const AttnScale& a,
                                    const Mask& mask_q, const Mask& mask_k, const CalibSet& calib,
                                    Vector* grad) {
  require_mask_shape(pair.wq, mask_q, a.pair_name + ".wq");
  require_mask_shape(pair.wk, mask_k, a.pair_name + ".wk");
  if (calib.x.rows() != pair.d_model() || calib.x.cols() == 0) {
    throw ShapeError("pair '" + a.pair_name + "': calibration batch " + shape_string(calib.x) +
                     " vs model width " + std::to_string(pair.d_model()));
  }
  const AttentionQK scaled_pair = reparam_attention(pair, a);
  Matrix gq, gk;
  const double value = projection_energy(scaled_pair.wq, mask_q, calib.x, grad ? &gq : nullptr) +
                       projection_energy(scaled_pair.wk, mask_k, calib.x, grad ? &gk : nullptr);
  if (grad) {
    const Vector s = a.scale();
    *grad = Vector(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      double ds = 0.0;
      for (std::size_t j = 0; j < pair.d_model(); ++j) {
        ds += gq(i, j) * pair.wq(i, j);
        ds -= gk(i, j) * pair.wk(i, j) / (s[i] * s[i]);
      }
      (*grad)[i] = s[i] * ds;
    }
  }
  return value;
}

MaskRefresher::MaskRefresher(const Model& model, const ForwardTrace& dense_trace,
                             SparsityPattern pattern, Metric metric)
    : model_(&model), trace_(&dense_trace), pattern_(std::move(pattern)), metric_(metric) {
  for (const auto& name : model.topology()) {
    const Matrix& x = dense_trace.inputs.at(name);
    cached_.emplace(name, metric == Metric::kMagnitude
                              ? HessianDiag{name, Vector::ones(x.rows())}
                              : hessian_diag(CalibSet{x}, name));
  }
}

Matrix MaskRefresher::scores(const std::string& prunable_name, const Transforms& t) const {
  if (model_->has_layer(prunable_name) && model_->layer(prunable_name).is_linear()) {
    const Linear& lin = model_->layer(prunable_name).linear();
    const HessianDiag& base = cached_.at(prunable_name);
    auto it = t.linear.find(prunable_name);
    if (it == t.linear.end()) return score_activation(lin.weight, base);
    const Vector s = it->second.scale();
    if (metric_ == Metric::kWanda) {
      return score_activation(
          lin.weight, classical_refresh(CalibSet{trace_->inputs.at(prunable_name)}, s, prunable_name));
    }
    return score_activation(lin.weight, fast_refresh(base, s));
  }

  const auto dot = prunable_name.rfind('.');
  const std::string pair_name = prunable_name.substr(0, dot);
  const bool is_q = prunable_name.substr(dot + 1) == "wq";
  const AttentionQK& pair = model_->layer(pair_name).attention();
  const HessianDiag& base = cached_.at(pair_name);
  auto it = t.attention.find(pair_name);
  if (it == t.attention.end()) return score_activation(is_q ? pair.wq : pair.wk, base);
  const AttentionQK scaled_pair = reparam_attention(pair, it->second);
  return score_activation(is_q ? scaled_pair.wq : scaled_pair.wk, base);
}

MaskSet MaskRefresher::masks(const Transforms& t) const {
  MaskSet out;
  for (const auto& name : model_->prunable_weights()) {
    out.emplace(name, make_mask(scores(name, t), pattern_, name));
  }
  return out;
}

bool shift_absorbable(const Model& model, const std::string& linear_name) {
  const auto& topo = model.topology();
  std::size_t pos = 0;
  while (pos < topo.size() && topo[pos] != linear_name) ++pos;
  if (pos == topo.size()) throw ModelError("layer '" + linear_name + "' not in topology");
  // An attention pair directly upstream reads the same hidden state.
  return pos == 0 || model.layer(topo[pos - 1]).is_linear();
}

ParamFilter make_param_filter(const Model& model, const InductionConfig& cfg) {
  ParamFilter f;
  f.attention_enabled = cfg.optimize_attention;
  for (const auto& name : model.topology()) {
    const Layer& l = model.layer(name);
    if (!l.is_linear()) continue;
    const bool carries_bias = l.linear().bias.has_value() || cfg.materialize_bias;
    f.shift_enabled[name] = cfg.optimize_delta && carries_bias && shift_absorbable(model, name);
  }
  return f;
}

DistributionProblem::DistributionProblem(const Model& model, const CalibSet& calib,
                                         SparsityPattern pattern, Metric metric,
                                         std::size_t threads)
    : model_(&model),
      trace_(forward_trace(model, calib.x)),
      refresher_(model, trace_, std::move(pattern), metric),
      threads_(threads) {}

MaskSet DistributionProblem::refresh_masks(const Transforms& t) const { return refresher_.masks(t); }

Evaluation DistributionProblem::evaluate(const Transforms& t, const MaskSet& masks,
                                         Transforms* grad) const {
  const auto& topo = model_->topology();
  std::vector<double> values(topo.size(), 0.0);
  parallel_for(topo.size(), threads_, [&](std::size_t idx) {
    const std::string& name = topo[idx];
    const Layer& l = model_->layer(name);
    const CalibSet calib{trace_.inputs.at(name)};
    if (l.is_linear()) {
      const ScaleShift& ss = t.linear.at(name);
      LinearGrad g;
      values[idx] = preadapt_objective(l.linear(), ss, masks.at(name), calib, grad ? &g : nullptr);
      if (grad) {
        ScaleShift& dst = grad->linear.at(name);
        dst.log_scale = std::move(g.log_scale);
        dst.delta = std::move(g.delta);
      }
    } else {
      Vector g;
      values[idx] = preadapt_attention_objective(l.attention(), t.attention.at(name),
                                                 masks.at(name + ".wq"), masks.at(name + ".wk"),
                                                 calib, grad ? &g : nullptr);
      if (grad) grad->attention.at(name).log_scale = std::move(g);
    }
  });
  Evaluation e;
  for (std::size_t i = 0; i < topo.size(); ++i) {
    e.total += values[i];
    e.terms.emplace_back(topo[i], values[i]);
  }
  return e;
}

InductionResult optimize_distribution(const Model& model, const MaskSet& masks,
                                      const CalibSet& calib, const SparsityPattern& pattern,
                                      Metric metric, const InductionConfig& cfg,
                                      const Transforms* init) {
  for (const auto& name : model.prunable_weights()) {
    if (!masks.count(name)) throw ModelError("no mask supplied for '" + name + "'");
  }
  if (masks.size() != model.prunable_weights().size()) {
    throw ModelError("mask set covers layers the model does not have");
  }
  const DistributionProblem problem(model, calib, pattern, metric, cfg.threads);
  Transforms start = init ? *init : Transforms::identity(model);
  return run_induction(problem, std::move(start), make_param_filter(model, cfg), cfg, &masks);
}

AbsorbError::AbsorbError(const std::string& what, std::vector<std::string> edges)
    : std::runtime_error(what), edges_(std::move(edges)) {}

Model absorb(const Model& model, const Transforms& t) {
  std::vector<Layer> layers;
  std::map<std::string, std::size_t> at;
  for (const auto& name : model.topology()) {
    at[name] = layers.size();
    layers.push_back(model.layer(name));
  }

  // Own reparameterisation first; bias updates use the original weights.
  for (const auto& [name, a] : t.attention) {
    if (a.is_identity()) continue;
    Layer& l = layers.at(at.at(name));
    l.attention() = reparam_attention(l.attention(), a);
  }
  for (const auto& [name, ss] : t.linear) {
    if (ss.is_identity()) continue;
    Layer& l = layers.at(at.at(name));
    l.linear() = reparam_linear(l.linear(), ss).layer;
  }

  std::vector<std::string> offending;
  std::optional<InputTransform> input = model.input_transform();
  const auto& topo = model.topology();
  for (std::size_t pos = 0; pos < topo.size(); ++pos) {
    auto it = t.linear.find(topo[pos]);
    if (it == t.linear.end() || it->second.is_identity()) continue;
    const Vector s = it->second.scale();
    const Vector& delta = it->second.delta;
    bool has_shift = false;
    for (double v : delta.values()) has_shift = has_shift || v != 0.0;

    std::vector<std::size_t> readers;  // attention pairs sharing this input
    std::optional<std::size_t> producer;
    for (std::size_t i = pos; i-- > 0;) {
      if (layers[at.at(topo[i])].is_linear()) {
        producer = at.at(topo[i]);
        break;
      }
      readers.push_back(at.at(topo[i]));
    }
    if (has_shift && !readers.empty()) {
      const std::string from = producer ? layers[*producer].name : std::string("<input>");
      for (std::size_t r : readers) {
        offending.push_back(from + " -> " + topo[pos] + " (shift read by attention pair '" +
                            layers[r].name + "')");
      }
      continue;
    }
    for (std::size_t r : readers) {
      AttentionQK& pair = layers[r].attention();
      pair.wq = scale_cols(pair.wq, s);
      pair.wk = scale_cols(pair.wk, s);
    }
    const Vector inv_s = reciprocal(s);
    if (producer) {
      Linear& p = layers[*producer].linear();
      p.weight = scale_rows(p.weight, inv_s);
      if (p.bias || has_shift) {
        Vector b = p.bias ? *p.bias : Vector(p.d_out());
        for (std::size_t i = 0; i < b.size(); ++i) b[i] = (b[i] - delta[i]) * inv_s[i];
        p.bias = std::move(b);
      }
    } else if (input) {
      // x -> S0^-1 (x - d0), then S^-1 (. - d)  ==  (S0 S)^-1 (x - d0 - S0 d)
      for (std::size_t i = 0; i < s.size(); ++i) {
        input->shift[i] += input->scale[i] * delta[i];
        input->scale[i] *= s[i];
      }
    } else {
      input = InputTransform{s, delta};
    }
  }
  if (!offending.empty()) {
    std::ostringstream os;
    os << "cannot absorb without extra runtime ops:";
    for (const auto& e : offending) os << " [" << e << "]";
    throw AbsorbError(os.str(), offending);
  }
  Model out(std::move(layers), topo);
  out.set_input_transform(std::move(input));
  return out;
}

Model apply_masks(const Model& model, const MaskSet& masks) {
  std::vector<Layer> layers;
  for (const auto& name : model.topology()) {
    Layer l = model.layer(name);
    if (l.is_linear()) {
      auto it = masks.find(name);
      if (it != masks.end()) l.linear().weight = apply_mask(l.linear().weight, it->second);
    } else {
      auto q = masks.find(name + ".wq");
      auto k = masks.find(name + ".wk");
      if (q != masks.end()) l.attention().wq = apply_mask(l.attention().wq, q->second);
      if (k != masks.end()) l.attention().wk = apply_mask(l.attention().wk, k->second);
    }
    layers.push_back(std::move(l));
  }
  Model out(std::move(layers), model.topology());
  out.set_input_transform(model.input_transform());
  return out;
}

}  // namespace sparsind
