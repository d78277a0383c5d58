#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparsind/model.hpp"
#include "sparsind/tensor.hpp"

namespace sparsind {

// Binary layout ("SIF1"), all integers little-endian:
//   magic    4 bytes "SIF1"
//   count    u32
//   entries  count x { name_len u32, name bytes (UTF-8),
//                      dtype u8 (0 = f32), ndim u8, dims ndim x u32,
//                      payload 4 * prod(dims) bytes of f32 LE, row-major }

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset);
  std::uint64_t offset() const { return offset_; }
  const std::string& message() const { return message_; }

 private:
  std::uint64_t offset_;
  std::string message_;
};

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<double> data;

  static NamedTensor from_matrix(std::string name, const Matrix& m);
  static NamedTensor from_vector(std::string name, const Vector& v);
  Matrix to_matrix() const;  // requires ndim == 2
  Vector to_vector() const;  // requires ndim == 1
  std::size_t element_count() const;
};

// Values are narrowed to f32; a value outside the f32 range is rejected.
std::vector<std::uint8_t> encode_tensors(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_tensors(std::span<const std::uint8_t> bytes);

void save_tensors(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

/// Model <-> tensors: "<layer>.weight", "<layer>.bias" for linear layers,
/// "<pair>.wq", "<pair>.wk" for attention pairs, "__input.scale" and
/// "__input.shift" for a model-level input transform. Topology is the order in
/// which layer names first appear.
std::vector<NamedTensor> model_to_tensors(const Model& model);
Model model_from_tensors(std::span<const NamedTensor> tensors);

void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

/// Rounds every weight, bias and transform entry to the nearest f32.
Model quantize_to_f32(const Model& model);

}  // namespace sparsind
