#include "sparsind/pipeline_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "sparsind/tensor_file.hpp"

namespace sparsind {

ConfigError::ConfigError(std::string key, const std::string& what)
    : std::runtime_error("config key '" + key + "': " + what), key_(std::move(key)), message_(what) {}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key, "expected true|false, got '" + v + "'");
}

ToySpec to_toy(const std::string& key, const std::string& v, std::uint64_t seed) {
  std::vector<std::uint64_t> parts;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(to_u64(key, trim(item)));
  if (parts.size() != 3 || parts[0] == 0 || parts[1] == 0 || parts[2] == 0) {
    throw ConfigError(key, "expected depth,d_model,d_hidden (all positive), got '" + v + "'");
  }
  ToySpec spec;
  spec.depth = parts[0];
  spec.d_model = parts[1];
  spec.d_hidden = parts[2];
  spec.seed = seed;
  return spec;
}

using Setter = std::function<void(PipelineConfig&, const std::string&, const std::string&)>;

struct KeyInfo {
  std::string default_text;
  std::string help;
  Setter set;
};

template <typename F>
Setter wrap(F f) {
  return [f](PipelineConfig& c, const std::string& key, const std::string& v) {
    try {
      f(c, key, v);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(key, e.what());
    }
  };
}

const std::map<std::string, KeyInfo>& key_table() {
  static const std::map<std::string, KeyInfo> table = [] {
    std::map<std::string, KeyInfo> t;
    t["model.path"] = {"", "TensorFile with the model",
                       wrap([](PipelineConfig& c, const std::string&, const std::string& v) {
                         c.model_path = v;
                         c.toy.reset();
                       })};
    t["model.toy"] = {"2,32,64", "toy model depth,d_model,d_hidden",
                      wrap([](PipelineConfig& c, const std::string& k, const std::string& v) {
                        c.toy = to_toy(k, v, c.seed);
                        c.model_path.reset();
                      })};
    t["calib.path"] = {"", "TensorFile with a 2-D tensor 'calib' (d x n)",
                       wrap([](PipelineConfig& c, const std::string&, const std::string& v) {
                         c.calib_path = v;
                       })};
    t["calib.synth"] = {"128", "number of synthetic calibration samples",
                        wrap([](PipelineConfig& c, const std::string& k, const std::string& v) {
                          c.calib_synth = to_u64(k, v);
                          if (c.calib_synth == 0) throw ConfigError(k, "must be positive");
                          c.calib_path.reset();
                        })};
    t["pattern"] = {"0.5", "sparsity: rate in [0,1] or n:m",
                    wrap([](PipelineConfig& c, const std::string&, const std::string& v) {
                      c.pattern = SparsityPattern::parse(v);
                    })};
    t["metric"] = {"wanda-fast", "magnitude | wanda | wanda-fast",
                   wrap([](PipelineConfig& c, const std::string&, const std::string& v) {
                     c.metric = parse_metric(v);
                   })};
    t["seed"] = {"0", "seed for toy models and synthetic calibration",
                 wrap([](PipelineConfig& c, const std::string& k, const std::string& v) {
                   c.seed = to_u64(k, v);
                   if (c.toy) c.toy->seed = c.seed;
                 })};
    t["out_dir"] = {".", "output directory",
                    wrap([](PipelineConfig& c, const std::string&, const std::string& v) {
                      c.out_dir = v;
                    })};
    t["eval.bins"] = {"32", "histogram bins",
                      wrap([](PipelineConfig& c, const std::string& k, const std::string& v) {
                        c.bins = to_u64(k, v);
                        if (c.bins == 0) throw ConfigError(k, "must be positive");
                      })};
    t["si.stage"] = {"distribution", "off | distribution | feature | both",
                     wrap([](PipelineConfig& c, const std::string&, const std::string& v) {
                       c.si.stage = parse_si_stage(v);
                     })};
    t["si.lr"] = {"0.05", "initial step size",
                  wrap([](PipelineConfig& c, const std::string& k, const std::string& v) {
                    c.si.opt.lr = to_double(k, v);
                    if (!(c.si.opt.lr > 0.0)) throw ConfigError(k, "must be positive");
                  })};
    t["si.epochs"] = {"3", "induction epochs",
                      wrap([](PipelineConfig& c, const std::string& k, const std::string& v) {
                        c.si.opt.epochs = to_u64(k, v);
                        if (c.si.opt.epochs == 0) throw ConfigError(k, "must be at least 1");
                      })};
    t["si.steps_per_epoch"] = {"16", "gradient steps per epoch",
                               wrap([](PipelineConfig& c, const std::string& k, const std::string& v) {
                                 c.si.opt.steps_per_epoch = to_u64(k, v);
                                 if (c.si.opt.steps_per_epoch == 0) {
                                   throw ConfigError(k, "must be at least 1");
                                 }
                               })};
    t["si.mask_refresh_period"] = {"8", "steps between mask refreshes (0 = frozen masks)",
                                   wrap([](PipelineConfig& c, const std::string& k,
                                           const std::string& v) {
                                     c.si.opt.mask_refresh_period = to_u64(k, v);
                                   })};
    t["si.optimize_delta"] = {"true", "optimise shifts",
                              wrap([](PipelineConfig& c, const std::string& k, const std::string& v) {
                                c.si.opt.optimize_delta = to_bool(k, v);
                              })};
    t["si.optimize_attention"] = {"true", "optimise attention scales",
                                  wrap([](PipelineConfig& c, const std::string& k,
                                          const std::string& v) {
                                    c.si.opt.optimize_attention = to_bool(k, v);
                                  })};
    t["si.materialize_bias"] = {"false", "give bias-free layers a shift",
                                wrap([](PipelineConfig& c, const std::string& k,
                                        const std::string& v) {
                                  c.si.opt.materialize_bias = to_bool(k, v);
                                })};
    t["si.lambda"] = {"0.01", "regulariser weight",
                      wrap([](PipelineConfig& c, const std::string& k, const std::string& v) {
                        c.si.feature.lambda = to_double(k, v);
                      })};
    t["si.alpha"] = {"0.001", "regulariser strength",
                     wrap([](PipelineConfig& c, const std::string& k, const std::string& v) {
                       c.si.feature.alpha = to_double(k, v);
                     })};
    t["si.p"] = {"2", "entrywise norm order (>= 1)",
                 wrap([](PipelineConfig& c, const std::string& k, const std::string& v) {
                   c.si.feature.p = to_double(k, v);
                 })};
    t["si.norm"] = {"entrywise", "entrywise | spectral",
                    wrap([](PipelineConfig& c, const std::string& k, const std::string& v) {
                      if (v == "entrywise") {
                        c.si.feature.norm = NormMode::kEntrywise;
                      } else if (v == "spectral") {
                        c.si.feature.norm = NormMode::kSpectral;
                      } else {
                        throw ConfigError(k, "expected entrywise|spectral, got '" + v + "'");
                      }
                    })};
    t["si.g"] = {"identity", "identity | affine:a,b",
                 wrap([](PipelineConfig& c, const std::string&, const std::string& v) {
                   c.si.feature.g = MonotoneMap::parse(v);
                 })};
    t["si.eps_init"] = {"0.0001", "floor for initial scales",
                        wrap([](PipelineConfig& c, const std::string& k, const std::string& v) {
                          c.si.feature.eps_init = to_double(k, v);
                        })};
    t["si.distribution_weight"] = {"0", "weight of the distribution objective in the feature loss",
                                   wrap([](PipelineConfig& c, const std::string& k,
                                           const std::string& v) {
                                     c.si.feature.distribution_weight = to_double(k, v);
                                   })};
    t["si.threads"] = {"1", "worker threads (capped by SI_THREADS)",
                       wrap([](PipelineConfig& c, const std::string& k, const std::string& v) {
                         c.si.opt.threads = to_u64(k, v);
                         if (c.si.opt.threads == 0) throw ConfigError(k, "must be positive");
                       })};
    t["bench.d_in"] = {"2048", "benchmark input dimension",
                       wrap([](PipelineConfig& c, const std::string& k, const std::string& v) {
                         c.bench.d_in = to_u64(k, v);
                       })};
    t["bench.n"] = {"128", "benchmark samples",
                    wrap([](PipelineConfig& c, const std::string& k, const std::string& v) {
                      c.bench.n = to_u64(k, v);
                    })};
    t["bench.iters"] = {"128", "benchmark refresh iterations",
                        wrap([](PipelineConfig& c, const std::string& k, const std::string& v) {
                          c.bench.iters = to_u64(k, v);
                        })};
    t["bench.repeats"] = {"3", "timing repeats (minimum is reported)",
                          wrap([](PipelineConfig& c, const std::string& k, const std::string& v) {
                            c.bench.repeats = to_u64(k, v);
                            if (c.bench.repeats == 0) throw ConfigError(k, "must be positive");
                          })};
    return t;
  }();
  return table;
}

}  // namespace

void set_config_key(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = key_table();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError(key, "unknown key");
  it->second.set(cfg, key, trim(value));
}

void apply_config_text(PipelineConfig& cfg, const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(line, "line " + std::to_string(lineno) + " is not key = value");
    }
    set_config_key(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void apply_config_file(PipelineConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  apply_config_text(cfg, buf.str());
}

std::string config_schema() {
  std::string out;
  for (const auto& [key, info] : key_table()) {
    out += "  " + key + " = " + info.default_text + "    # " + info.help + "\n";
  }
  return out;
}

Model resolve_model(const PipelineConfig& cfg) {
  if (cfg.model_path) {
    if (!std::filesystem::exists(*cfg.model_path)) {
      throw ConfigError("model.path", "no such file " + cfg.model_path->string());
    }
    return load_model(*cfg.model_path);
  }
  ToySpec spec = cfg.toy.value_or(ToySpec{});
  spec.seed = cfg.seed;
  return build_toy_model(spec);
}

CalibSet resolve_calibration(const PipelineConfig& cfg, std::size_t d) {
  if (cfg.calib_path) {
    if (!std::filesystem::exists(*cfg.calib_path)) {
      throw ConfigError("calib.path", "no such file " + cfg.calib_path->string());
    }
    Matrix x = load_calibration(*cfg.calib_path);
    if (x.rows() != d) {
      throw ShapeError("calibration has " + std::to_string(x.rows()) + " rows, model input is " +
                       std::to_string(d));
    }
    return CalibSet{std::move(x)};
  }
  return CalibSet{synthetic_calibration(d, cfg.calib_synth, cfg.seed)};
}

void save_calibration(const std::filesystem::path& path, const Matrix& x) {
  const NamedTensor t = NamedTensor::from_matrix("calib", x);
  save_tensors(path, std::span<const NamedTensor>(&t, 1));
}

Matrix load_calibration(const std::filesystem::path& path) {
  const auto tensors = load_tensors(path);
  for (const auto& t : tensors) {
    if (t.name == "calib") {
      if (t.dims.size() != 2) throw FormatError("tensor 'calib' is not 2-D", 0);
      return t.to_matrix();
    }
  }
  throw FormatError("no tensor named 'calib' in " + path.string(), 0);
}

}  // namespace sparsind
