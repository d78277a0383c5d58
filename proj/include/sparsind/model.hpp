#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "sparsind/tensor.hpp"

namespace sparsind {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Linear {
  Matrix weight;  // d_out x d_in
  std::optional<Vector> bias;

  std::size_t d_in() const { return weight.cols(); }
  std::size_t d_out() const { return weight.rows(); }
};

/// Query/key projection pair. Only the logit map (Wq X)^T (Wk X) is modelled;
/// the hidden state passes through unchanged.
struct AttentionQK {
  Matrix wq;  // d_k x d_model
  Matrix wk;  // d_k x d_model

  std::size_t d_model() const { return wq.cols(); }
  std::size_t d_k() const { return wq.rows(); }
};

struct Layer {
  std::string name;
  std::variant<Linear, AttentionQK> kind;

  bool is_linear() const { return std::holds_alternative<Linear>(kind); }
  bool is_attention() const { return std::holds_alternative<AttentionQK>(kind); }
  const Linear& linear() const { return std::get<Linear>(kind); }
  Linear& linear() { return std::get<Linear>(kind); }
  const AttentionQK& attention() const { return std::get<AttentionQK>(kind); }
  AttentionQK& attention() { return std::get<AttentionQK>(kind); }
  std::size_t d_in() const;
};

/// Per-channel input transform x -> diag(scale)^-1 (x - shift).
struct InputTransform {
  Vector scale;
  Vector shift;

  Matrix apply(const Matrix& x) const;
};

/// Ordered set of named layers plus the sequential topology that evaluates them.
/// Immutable in spirit: mutation goes through with_layer() copies.
class Model {
 public:
  Model() = default;
  // Topology defaults to the layer order.
  explicit Model(std::vector<Layer> layers);
  Model(std::vector<Layer> layers, std::vector<std::string> topology);

  const std::vector<Layer>& layers() const { return layers_; }
  const std::vector<std::string>& topology() const { return topology_; }
  const Layer& layer(const std::string& name) const;
  bool has_layer(const std::string& name) const { return index_.count(name) != 0; }

  Model with_layer(Layer replacement) const;

  std::size_t input_dim() const;
  std::size_t output_dim() const;

  // Set when absorption had to push a compensating transform onto the raw model input.
  const std::optional<InputTransform>& input_transform() const { return input_transform_; }
  void set_input_transform(std::optional<InputTransform> t);

  // Names of every prunable weight, in topology order: "<linear>" for linear
  // layers, "<pair>.wq" and "<pair>.wk" for attention pairs.
  std::vector<std::string> prunable_weights() const;
  const Matrix& weight(const std::string& prunable_name) const;

 private:
  void validate() const;

  std::vector<Layer> layers_;
  std::vector<std::string> topology_;
  std::map<std::string, std::size_t> index_;
  std::optional<InputTransform> input_transform_;
};

struct ForwardTrace {
  Matrix output;
  // Input batch seen by each layer (after any model-level input transform).
  std::map<std::string, Matrix> inputs;
  // Logit map (n x n) of each attention pair.
  std::map<std::string, Matrix> logits;
};

Matrix linear_forward(const Linear& layer, const Matrix& x);
Matrix attention_logits(const AttentionQK& pair, const Matrix& x);

/// Columns of x are samples. Throws ModelError naming the layer on shape mismatch.
Matrix forward(const Model& model, const Matrix& x);
ForwardTrace forward_trace(const Model& model, const Matrix& x);

struct ToySpec {
  std::size_t depth = 2;
  std::size_t d_model = 32;
  std::size_t d_hidden = 64;
  std::uint64_t seed = 0;
  bool with_bias = true;
};

std::string toy_attention_name(std::size_t block);
std::string toy_fc1_name(std::size_t block);
std::string toy_fc2_name(std::size_t block);

/// Per block: attention pair (d_model x d_model), fc1 (d_hidden x d_model), fc2
/// (d_model x d_hidden). Weights are N(0, 1/d_in); each input channel of every
/// weight is multiplied by a log-uniform factor in [0.1, 10], with one channel
/// pinned at each end of the range.
Model build_toy_model(const ToySpec& spec);

/// Synthetic calibration batch (d x n): per-channel offset ~ N(0, 1) plus
/// per-channel spread 10^U(-0.5, 0.5) times standard normal noise.
Matrix synthetic_calibration(std::size_t d, std::size_t n, std::uint64_t seed);

}  // namespace sparsind
