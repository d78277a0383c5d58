#include "sparsind/si_feature.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace sparsind {

MonotoneMap MonotoneMap::affine(double a, double b) {
  if (!(a > 0.0)) throw DomainError("affine map needs a > 0, got " + std::to_string(a));
  return {Kind::kAffine, a, b};
}

MonotoneMap MonotoneMap::parse(const std::string& text) {
  if (text == "identity") return identity();
  const std::string prefix = "affine:";
  if (text.rfind(prefix, 0) == 0) {
    const std::string rest = text.substr(prefix.size());
    const auto comma = rest.find(',');
    if (comma != std::string::npos) {
      double a = 0.0, b = 0.0;
      const char* first = rest.data();
      auto ra = std::from_chars(first, first + comma, a);
      auto rb = std::from_chars(first + comma + 1, first + rest.size(), b);
      if (ra.ec == std::errc() && ra.ptr == first + comma && rb.ec == std::errc() &&
          rb.ptr == first + rest.size()) {
        return affine(a, b);
      }
    }
  }
  throw std::invalid_argument("cannot parse monotone map '" + text + "' (identity | affine:a,b)");
}

std::string MonotoneMap::to_string() const {
  if (kind == Kind::kIdentity) return "identity";
  std::ostringstream os;
  os.precision(17);
  os << "affine:" << a << "," << b;
  return os.str();
}

void FeatureLossConfig::validate() const {
  if (!(lambda >= 0.0)) throw DomainError("lambda must be >= 0");
  if (!(alpha > 0.0)) throw DomainError("alpha must be > 0");
  if (!(p >= 1.0)) throw DomainError("p must be >= 1");
  if (!(eps_init > 0.0)) throw DomainError("eps_init must be > 0");
  if (!(distribution_weight >= 0.0)) throw DomainError("distribution weight must be >= 0");
  if (g.kind == MonotoneMap::Kind::kAffine && !(g.a > 0.0)) throw DomainError("affine map needs a > 0");
}

RobustStats robust_stats(const Linear& layer, const CalibSet& calib, std::string layer_name) {
  if (calib.x.cols() == 0) throw DomainError("robust_stats: empty calibration set");
  const RowStats st = row_stats(matmul(layer.weight, calib.x));
  return {std::move(layer_name), st.median, st.mean};
}

Vector init_scales(const Linear& layer, const CalibSet& calib, const FeatureLossConfig& cfg) {
  cfg.validate();
  if (calib.x.cols() == 0) throw DomainError("init_scales: empty calibration set");
  const RobustStats st = robust_stats(layer, calib);
  Vector s(st.m.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double d = st.m[i] - cfg.g(st.mu[i]);
    s[i] = std::max(d * d, cfg.eps_init);
  }
  return s;
}

Transforms initial_feature_transforms(const Model& model, const CalibSet& calib,
                                      const FeatureLossConfig& cfg) {
  const ForwardTrace trace = forward_trace(model, calib.x);
  Transforms t = Transforms::identity(model);
  const auto& topo = model.topology();
  for (std::size_t pos = 0; pos < topo.size(); ++pos) {
    if (!model.layer(topo[pos]).is_linear()) continue;
    for (std::size_t i = pos; i-- > 0;) {
      const Layer& up = model.layer(topo[i]);
      if (!up.is_linear()) continue;
      const Vector s = init_scales(up.linear(), CalibSet{trace.inputs.at(topo[i])}, cfg);
      t.linear.at(topo[pos]).log_scale = elementwise_log(s);
      break;
    }
  }
  return t;
}

namespace {

// d||A|| / dA for the configured norm; zero when A == 0.
Matrix norm_gradient(const Matrix& a, const FeatureLossConfig& cfg, double* norm) {
  Matrix g(a.rows(), a.cols());
  if (cfg.norm == NormMode::kSpectral) {
    const SpectralResult sv = spectral_norm(a);
    *norm = sv.sigma;
    if (sv.sigma == 0.0) return g;
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) g(i, j) = sv.left[i] * sv.right[j];
    return g;
  }
  *norm = entrywise_p_norm(a, cfg.p);
  if (*norm == 0.0) return g;
  auto av = a.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double sign = av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0);
    gv[i] = cfg.p == 1.0 ? sign : sign * std::pow(std::abs(av[i]) / *norm, cfg.p - 1.0);
  }
  return g;
}

double weight_norm(const Matrix& w, const FeatureLossConfig& cfg) {
  return cfg.norm == NormMode::kSpectral ? spectral_norm(w).sigma : entrywise_p_norm(w, cfg.p);
}

// sum_ij g_ij * a_ij along one axis: rows (per output) or columns (per input).
Vector weighted_row_sums(const Matrix& g, const Matrix& a) {
  Vector out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out[i] += g(i, j) * a(i, j);
  return out;
}

Vector weighted_col_sums(const Matrix& g, const Matrix& a) {
  Vector out(a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] += g(i, j) * a(i, j);
  return out;
}

}  // namespace

double regularizer(const std::vector<const Matrix*>& weights, const FeatureLossConfig& cfg) {
  double sum = 0.0;
  for (const Matrix* w : weights) sum += weight_norm(*w, cfg);
  return std::exp(-cfg.alpha * sum);
}

FeatureLoss feature_loss(const Model& model_dense, const Model& model_sparse, const CalibSet& calib,
                         const std::set<std::string>& induced_layers, const FeatureLossConfig& cfg) {
  cfg.validate();
  if (model_dense.topology() != model_sparse.topology()) {
    throw ShapeError("feature_loss: models have different topologies");
  }
  const Matrix yd = forward(model_dense, calib.x);
  const Matrix ys = forward(model_sparse, calib.x);
  if (yd.rows() != ys.rows() || yd.cols() != ys.cols()) {
    throw ShapeError("feature_loss: outputs " + shape_string(yd) + " vs " + shape_string(ys));
  }
  FeatureLoss out;
  double acc = 0.0;
  for (std::size_t i = 0; i < yd.size(); ++i) {
    const double d = ys.values()[i] - yd.values()[i];
    acc += d * d;
  }
  out.mse = acc / static_cast<double>(yd.size());

  std::vector<const Matrix*> weights;
  for (const auto& name : induced_layers) {
    const Layer& l = model_sparse.layer(name);
    if (l.is_linear()) {
      weights.push_back(&l.linear().weight);
    } else {
      weights.push_back(&l.attention().wq);
      weights.push_back(&l.attention().wk);
    }
  }
  out.reg = regularizer(weights, cfg);
  out.total = out.mse + cfg.lambda * out.reg;
  return out;
}

FeatureProblem::FeatureProblem(const Model& model, const CalibSet& calib, SparsityPattern pattern,
                               Metric metric, std::set<std::string> induced_layers,
                               FeatureLossConfig cfg, std::size_t threads)
    : model_(&model),
      calib_(calib),
      dense_trace_(forward_trace(model, calib.x)),
      induced_(std::move(induced_layers)),
      cfg_(cfg),
      distribution_(model, calib, std::move(pattern), metric, threads) {
  cfg_.validate();
  for (const auto& name : induced_) {
    if (!model.has_layer(name)) throw ModelError("induced layer '" + name + "' not in model");
  }
}

MaskSet FeatureProblem::refresh_masks(const Transforms& t) const {
  return distribution_.refresh_masks(t);
}

double FeatureProblem::regularizer_term(const Transforms& t, Transforms* grad, double scale) const {
  struct Piece {
    std::string layer;
    Matrix a;      // reparameterised weight
    Matrix g;      // d||a|| / da
    int kind = 0;  // 0 linear, 1 query, 2 key
  };
  std::vector<Piece> pieces;
  double sum = 0.0;
  for (const auto& name : induced_) {
    const Layer& l = model_->layer(name);
    if (l.is_linear()) {
      Matrix a = scale_cols(l.linear().weight, t.linear.at(name).scale());
      double n = 0.0;
      Matrix g = grad ? norm_gradient(a, cfg_, &n) : Matrix();
      if (!grad) n = weight_norm(a, cfg_);
      sum += n;
      pieces.push_back({name, std::move(a), std::move(g), 0});
    } else {
      const AttentionQK sp = reparam_attention(l.attention(), t.attention.at(name));
      for (int kind = 1; kind <= 2; ++kind) {
        Matrix a = kind == 1 ? sp.wq : sp.wk;
        double n = 0.0;
        Matrix g = grad ? norm_gradient(a, cfg_, &n) : Matrix();
        if (!grad) n = weight_norm(a, cfg_);
        sum += n;
        pieces.push_back({name, std::move(a), std::move(g), kind});
      }
    }
  }
  const double reg = std::exp(-cfg_.alpha * sum);
  if (grad) {
    // d(scale * reg) = -scale * alpha * reg * d(sum of norms)
    const double coeff = -scale * cfg_.alpha * reg;
    for (const auto& p : pieces) {
      if (p.kind == 0) {
        const Vector d = weighted_col_sums(p.g, p.a);  // d norm / d log s
        Vector& dst = grad->linear.at(p.layer).log_scale;
        for (std::size_t j = 0; j < d.size(); ++j) dst[j] += coeff * d[j];
      } else {
        const Vector d = weighted_row_sums(p.g, p.a);
        const double sign = p.kind == 1 ? 1.0 : -1.0;
        Vector& dst = grad->attention.at(p.layer).log_scale;
        for (std::size_t i = 0; i < d.size(); ++i) dst[i] += coeff * sign * d[i];
      }
    }
  }
  return reg;
}

Evaluation FeatureProblem::evaluate(const Transforms& t, const MaskSet& masks,
                                    Transforms* grad) const {
  struct Cache {
    const std::string* name;
    const Linear* lin;
    Vector s;
    Matrix x_t;
    Matrix w_masked;
    const Matrix* bits;
  };
  std::vector<Cache> caches;
  if (grad) *grad = t.zeros_like();

  Matrix h = model_->input_transform() ? model_->input_transform()->apply(calib_.x) : calib_.x;
  for (const auto& name : model_->topology()) {
    const Layer& l = model_->layer(name);
    if (!l.is_linear()) continue;
    const ScaleShift& ss = t.linear.at(name);
    const ReparamLinear r = reparam_linear(l.linear(), ss);
    const Mask& mask = masks.at(name);
    Cache c{&name, &l.linear(), r.input.scale, r.input.apply(h), apply_mask(r.layer.weight, mask),
            &mask.bits};
    h = matmul(c.w_masked, c.x_t);
    if (r.layer.bias) h = add_to_columns(h, *r.layer.bias);
    caches.push_back(std::move(c));
  }

  const Matrix& yd = dense_trace_.output;
  const double count = static_cast<double>(yd.size());
  Matrix g_out(h.rows(), h.cols());
  double acc = 0.0;
  for (std::size_t i = 0; i < yd.size(); ++i) {
    const double d = h.values()[i] - yd.values()[i];
    acc += d * d;
    g_out.values()[i] = 2.0 * d / count;
  }
  const double mse = acc / count;

  if (grad) {
    for (std::size_t idx = caches.size(); idx-- > 0;) {
      const Cache& c = caches[idx];
      const Matrix& w = c.lin->weight;
      const Matrix g_w = hadamard(matmul(g_out, transpose(c.x_t)), *c.bits);
      const Matrix g_x = matmul(transpose(c.w_masked), g_out);
      Vector g_b(g_out.rows());
      for (std::size_t i = 0; i < g_out.rows(); ++i)
        for (double v : g_out.row(i)) g_b[i] += v;

      ScaleShift& dst = grad->linear.at(*c.name);
      for (std::size_t j = 0; j < c.s.size(); ++j) {
        double ds = 0.0;
        double gx_sum = 0.0;
        double gx_dot = 0.0;
        double wb = 0.0;
        for (std::size_t i = 0; i < w.rows(); ++i) {
          ds += g_w(i, j) * w(i, j);
          wb += g_b[i] * w(i, j);
        }
        for (std::size_t k = 0; k < c.x_t.cols(); ++k) {
          gx_sum += g_x(j, k);
          gx_dot += g_x(j, k) * c.x_t(j, k);
        }
        ds -= gx_dot / c.s[j];
        dst.log_scale[j] += c.s[j] * ds;
        dst.delta[j] += -gx_sum / c.s[j] + wb;
      }
      // X~ = S^-1 (h - delta), so dL/dh = S^-1 dL/dX~.
      g_out = g_x;
      for (std::size_t j = 0; j < c.s.size(); ++j)
        for (double& v : g_out.row(j)) v /= c.s[j];
    }
  }

  Evaluation e;
  e.terms.emplace_back("model_output", mse);
  const double reg = regularizer_term(t, grad, cfg_.lambda);
  e.terms.emplace_back("regularizer", cfg_.lambda * reg);
  e.total = mse + cfg_.lambda * reg;

  if (cfg_.distribution_weight > 0.0) {
    Transforms dist_grad;
    if (grad) dist_grad = t.zeros_like();
    const Evaluation d = distribution_.evaluate(t, masks, grad ? &dist_grad : nullptr);
    for (const auto& [name, v] : d.terms) e.terms.emplace_back(name, cfg_.distribution_weight * v);
    e.total += cfg_.distribution_weight * d.total;
    if (grad) {
      for (auto& [name, ss] : grad->linear) {
        const ScaleShift& g = dist_grad.linear.at(name);
        for (std::size_t j = 0; j < ss.log_scale.size(); ++j) {
          ss.log_scale[j] += cfg_.distribution_weight * g.log_scale[j];
          ss.delta[j] += cfg_.distribution_weight * g.delta[j];
        }
      }
      for (auto& [name, a] : grad->attention) {
        const AttnScale& g = dist_grad.attention.at(name);
        for (std::size_t j = 0; j < a.log_scale.size(); ++j) {
          a.log_scale[j] += cfg_.distribution_weight * g.log_scale[j];
        }
      }
    }
  }
  return e;
}

FeatureLoss FeatureProblem::loss(const Transforms& t, const MaskSet& masks) const {
  const Evaluation e = evaluate(t, masks, nullptr);
  FeatureLoss out;
  out.total = e.total;
  out.mse = e.terms.at(0).second;
  out.reg = cfg_.lambda > 0.0 ? e.terms.at(1).second / cfg_.lambda : regularizer_term(t, nullptr, 0.0);
  return out;
}

InductionResult optimize_features(const Model& model, const MaskSet& masks, const CalibSet& calib,
                                  const SparsityPattern& pattern, Metric metric,
                                  const std::set<std::string>& induced_layers,
                                  const FeatureLossConfig& cfg, const InductionConfig& opt_cfg,
                                  const Transforms* init) {
  for (const auto& name : model.prunable_weights()) {
    if (!masks.count(name)) throw ModelError("no mask supplied for '" + name + "'");
  }
  const FeatureProblem problem(model, calib, pattern, metric, induced_layers, cfg, opt_cfg.threads);
  Transforms start = init ? *init : initial_feature_transforms(model, calib, cfg);
  return run_induction(problem, std::move(start), make_param_filter(model, opt_cfg), opt_cfg, &masks);
}

std::set<std::string> all_layers(const Model& model) {
  return {model.topology().begin(), model.topology().end()};
}

}  // namespace sparsind
