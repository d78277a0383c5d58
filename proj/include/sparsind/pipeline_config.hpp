#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "sparsind/evalkit.hpp"
#include "sparsind/importance.hpp"
#include "sparsind/masking.hpp"
#include "sparsind/model.hpp"

namespace sparsind {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what);
  const std::string& key() const { return key_; }
  const std::string& message() const { return message_; }

 private:
  std::string key_;
  std::string message_;
};

struct BenchSettings {
  std::size_t d_in = 2048;
  std::size_t n = 128;
  std::size_t iters = 128;
  std::size_t repeats = 3;
};

struct PipelineConfig {
  // Exactly one model source: a TensorFile path or a toy spec.
  std::optional<std::filesystem::path> model_path;
  std::optional<ToySpec> toy;
  // Calibration: a TensorFile holding one 2-D tensor (d x n), or synthetic.
  std::optional<std::filesystem::path> calib_path;
  std::size_t calib_synth = 128;
  SparsityPattern pattern = SparsityPattern::unstructured(0.5);
  Metric metric = Metric::kWandaFast;
  SiConfig si;
  std::filesystem::path out_dir = ".";
  std::uint64_t seed = 0;
  std::size_t bins = 32;
  BenchSettings bench;
};

/// Sets one key. Throws ConfigError naming the key for unknown keys and
/// unparsable values.
void set_config_key(PipelineConfig& cfg, const std::string& key, const std::string& value);

/// Flat "key = value" lines; '#' starts a comment, blank lines are ignored.
void apply_config_text(PipelineConfig& cfg, const std::string& text);
void apply_config_file(PipelineConfig& cfg, const std::filesystem::path& path);

/// Every key with its default, one per line (used in --help).
std::string config_schema();

/// The toy spec, or the model at model_path. Toy seeds follow cfg.seed.
Model resolve_model(const PipelineConfig& cfg);
/// Calibration for a model with input dimension d.
CalibSet resolve_calibration(const PipelineConfig& cfg, std::size_t d);

/// Calibration tensors are stored as a single 2-D tensor named "calib".
void save_calibration(const std::filesystem::path& path, const Matrix& x);
Matrix load_calibration(const std::filesystem::path& path);

}  // namespace sparsind
