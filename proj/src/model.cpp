#include "sparsind/model.hpp"

#include <cmath>
#include <set>

#include "sparsind/rng.hpp"

namespace sparsind {

std::size_t Layer::d_in() const {
  return is_linear() ? linear().d_in() : attention().d_model();
}

Matrix InputTransform::apply(const Matrix& x) const {
  if (scale.size() != x.rows() || shift.size() != x.rows()) {
    throw ShapeError("input transform of length " + std::to_string(scale.size()) +
                     " applied to batch " + shape_string(x));
  }
  Matrix out = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (double& v : out.row(i)) v = (v - shift[i]) / scale[i];
  return out;
}

Model::Model(std::vector<Layer> layers) : layers_(std::move(layers)) {
  for (const auto& l : layers_) topology_.push_back(l.name);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!index_.emplace(layers_[i].name, i).second) {
      throw ModelError("duplicate layer name '" + layers_[i].name + "'");
    }
  }
  validate();
}

Model::Model(std::vector<Layer> layers, std::vector<std::string> topology)
    : layers_(std::move(layers)), topology_(std::move(topology)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!index_.emplace(layers_[i].name, i).second) {
      throw ModelError("duplicate layer name '" + layers_[i].name + "'");
    }
  }
  validate();
}

void Model::validate() const {
  for (const auto& l : layers_) {
    if (l.name.empty()) throw ModelError("layer with empty name");
    if (l.is_linear()) {
      const auto& lin = l.linear();
      if (lin.weight.empty()) throw ModelError("layer '" + l.name + "': empty weight");
      if (lin.bias && lin.bias->size() != lin.weight.rows()) {
        throw ModelError("layer '" + l.name + "': bias length " + std::to_string(lin.bias->size()) +
                         " != weight rows " + std::to_string(lin.weight.rows()));
      }
    } else {
      const auto& att = l.attention();
      if (att.wq.empty()) throw ModelError("layer '" + l.name + "': empty projection");
      if (att.wq.rows() != att.wk.rows() || att.wq.cols() != att.wk.cols()) {
        throw ModelError("layer '" + l.name + "': wq " + shape_string(att.wq) + " and wk " +
                         shape_string(att.wk) + " differ in shape");
      }
    }
  }

  std::set<std::string> seen;
  std::size_t width = 0;
  std::string prev;
  for (const auto& name : topology_) {
    if (!index_.count(name)) throw ModelError("topology references unknown layer '" + name + "'");
    if (!seen.insert(name).second) throw ModelError("topology lists layer '" + name + "' twice");
    const Layer& l = layers_[index_.at(name)];
    if (width != 0 && l.d_in() != width) {
      throw ModelError("layer '" + name + "' expects input width " + std::to_string(l.d_in()) +
                       " but '" + prev + "' produces " + std::to_string(width));
    }
    if (width == 0) width = l.d_in();
    if (l.is_linear()) width = l.linear().d_out();
    prev = name;
  }
  if (input_transform_) {
    if (input_transform_->scale.size() != input_dim() ||
        input_transform_->shift.size() != input_dim()) {
      throw ModelError("input transform length does not match model input width");
    }
  }
}

const Layer& Model::layer(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ModelError("unknown layer '" + name + "'");
  return layers_[it->second];
}

Model Model::with_layer(Layer replacement) const {
  Model copy = *this;
  auto it = copy.index_.find(replacement.name);
  if (it == copy.index_.end()) throw ModelError("unknown layer '" + replacement.name + "'");
  copy.layers_[it->second] = std::move(replacement);
  copy.validate();
  return copy;
}

std::size_t Model::input_dim() const {
  if (topology_.empty()) throw ModelError("model has no layers");
  return layer(topology_.front()).d_in();
}

std::size_t Model::output_dim() const {
  std::size_t width = input_dim();
  for (const auto& name : topology_) {
    const Layer& l = layer(name);
    if (l.is_linear()) width = l.linear().d_out();
  }
  return width;
}

void Model::set_input_transform(std::optional<InputTransform> t) {
  input_transform_ = std::move(t);
  validate();
}

std::vector<std::string> Model::prunable_weights() const {
  std::vector<std::string> names;
  for (const auto& name : topology_) {
    if (layer(name).is_linear()) {
      names.push_back(name);
    } else {
      names.push_back(name + ".wq");
      names.push_back(name + ".wk");
    }
  }
  return names;
}

const Matrix& Model::weight(const std::string& prunable_name) const {
  if (has_layer(prunable_name) && layer(prunable_name).is_linear()) {
    return layer(prunable_name).linear().weight;
  }
  const auto dot = prunable_name.rfind('.');
  if (dot != std::string::npos) {
    const std::string base = prunable_name.substr(0, dot);
    const std::string proj = prunable_name.substr(dot + 1);
    if (has_layer(base) && layer(base).is_attention()) {
      if (proj == "wq") return layer(base).attention().wq;
      if (proj == "wk") return layer(base).attention().wk;
    }
  }
  throw ModelError("no prunable weight named '" + prunable_name + "'");
}

Matrix linear_forward(const Linear& layer, const Matrix& x) {
  Matrix y = matmul(layer.weight, x);
  if (layer.bias) y = add_to_columns(y, *layer.bias);
  return y;
}

Matrix attention_logits(const AttentionQK& pair, const Matrix& x) {
  const Matrix q = matmul(pair.wq, x);
  const Matrix k = matmul(pair.wk, x);
  return matmul(transpose(q), k);
}

ForwardTrace forward_trace(const Model& model, const Matrix& x) {
  if (x.rows() != model.input_dim()) {
    throw ModelError("layer '" + model.topology().front() + "': input has " +
                     std::to_string(x.rows()) + " rows, expected " +
                     std::to_string(model.input_dim()));
  }
  ForwardTrace trace;
  Matrix h = model.input_transform() ? model.input_transform()->apply(x) : x;
  for (const auto& name : model.topology()) {
    const Layer& l = model.layer(name);
    if (h.rows() != l.d_in()) {
      throw ModelError("layer '" + name + "': input has " + std::to_string(h.rows()) +
                       " rows, expected " + std::to_string(l.d_in()));
    }
    trace.inputs.emplace(name, h);
    if (l.is_linear()) {
      h = linear_forward(l.linear(), h);
    } else {
      trace.logits.emplace(name, attention_logits(l.attention(), h));
    }
  }
  trace.output = std::move(h);
  return trace;
}

Matrix forward(const Model& model, const Matrix& x) {
  if (x.rows() != model.input_dim()) {
    throw ModelError("layer '" + model.topology().front() + "': input has " +
                     std::to_string(x.rows()) + " rows, expected " +
                     std::to_string(model.input_dim()));
  }
  Matrix h = model.input_transform() ? model.input_transform()->apply(x) : x;
  for (const auto& name : model.topology()) {
    const Layer& l = model.layer(name);
    if (!l.is_linear()) continue;
    if (h.rows() != l.d_in()) {
      throw ModelError("layer '" + name + "': input has " + std::to_string(h.rows()) +
                       " rows, expected " + std::to_string(l.d_in()));
    }
    h = linear_forward(l.linear(), h);
  }
  return h;
}

std::string toy_attention_name(std::size_t block) { return "blk" + std::to_string(block) + ".attn"; }
std::string toy_fc1_name(std::size_t block) { return "blk" + std::to_string(block) + ".fc1"; }
std::string toy_fc2_name(std::size_t block) { return "blk" + std::to_string(block) + ".fc2"; }

namespace {

// Log-uniform channel factors in [0.1, 10]; two distinct channels are pinned
// to the range ends so max/min = 100 on every weight.
Vector channel_factors(Rng& rng, std::size_t d_in) {
  Vector f(d_in);
  for (double& v : f.values()) v = std::pow(10.0, rng.uniform(-1.0, 1.0));
  const std::size_t lo = rng.below(d_in);
  std::size_t hi = rng.below(d_in - 1);
  if (hi >= lo) ++hi;
  f[lo] = 0.1;
  f[hi] = 10.0;
  return f;
}

Matrix toy_weight(Rng& rng, std::size_t d_out, std::size_t d_in, const Vector& factors) {
  Matrix w = rng.normal_matrix(d_out, d_in, 1.0 / std::sqrt(static_cast<double>(d_in)));
  return scale_cols(w, factors);
}

}  // namespace

Model build_toy_model(const ToySpec& spec) {
  if (spec.depth < 1) throw DomainError("toy model depth must be >= 1");
  if (spec.d_model < 2 || spec.d_hidden < 2) throw DomainError("toy model dims must be >= 2");
  Rng rng(spec.seed);
  std::vector<Layer> layers;
  for (std::size_t b = 0; b < spec.depth; ++b) {
    const Vector attn_factors = channel_factors(rng, spec.d_model);
    AttentionQK pair{toy_weight(rng, spec.d_model, spec.d_model, attn_factors),
                     toy_weight(rng, spec.d_model, spec.d_model, attn_factors)};
    layers.push_back({toy_attention_name(b), pair});

    Linear fc1{toy_weight(rng, spec.d_hidden, spec.d_model, channel_factors(rng, spec.d_model)),
               std::nullopt};
    if (spec.with_bias) fc1.bias = rng.normal_vector(spec.d_hidden, 0.5);
    layers.push_back({toy_fc1_name(b), fc1});

    Linear fc2{toy_weight(rng, spec.d_model, spec.d_hidden, channel_factors(rng, spec.d_hidden)),
               std::nullopt};
    if (spec.with_bias) fc2.bias = rng.normal_vector(spec.d_model, 0.5);
    layers.push_back({toy_fc2_name(b), fc2});
  }
  return Model(std::move(layers));
}

Matrix synthetic_calibration(std::size_t d, std::size_t n, std::uint64_t seed) {
  if (d == 0 || n == 0) throw DomainError("calibration batch must be non-empty");
  Rng rng(seed ^ 0xca1b7a7e5eedULL);
  const Vector offset = rng.normal_vector(d);
  Vector spread(d);
  for (double& v : spread.values()) v = std::pow(10.0, rng.uniform(-0.5, 0.5));
  Matrix x(d, n);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < n; ++k) x(i, k) = offset[i] + spread[i] * rng.normal();
  return x;
}

}  // namespace sparsind
