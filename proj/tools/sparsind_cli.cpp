// sparsind: prune, induce, eval, bench and make-toy.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>

#include "sparsind/evalkit.hpp"
#include "sparsind/pipeline_config.hpp"
#include "sparsind/si_distribution.hpp"
#include "sparsind/tensor_file.hpp"

namespace fs = std::filesystem;
using namespace sparsind;

namespace {

struct Flags {
  std::optional<std::string> config;
  std::map<std::string, std::string> values;  // config key -> flag text
  std::optional<std::string> out;
};

struct FlagSpec {
  const char* flag;
  const char* key;
  const char* help;
};

constexpr FlagSpec kFlags[] = {
    {"--model", "model.path", "TensorFile model"},
    {"--toy", "model.toy", "toy model depth,d_model,d_hidden"},
    {"--calib", "calib.path", "TensorFile with tensor 'calib' (d x n)"},
    {"--calib-synth", "calib.synth", "synthetic calibration sample count"},
    {"--pattern", "pattern", "rate (0.5) or n:m (2:4)"},
    {"--metric", "metric", "magnitude | wanda | wanda-fast"},
    {"--si", "si.stage", "off | distribution | feature | both"},
    {"--epochs", "si.epochs", "induction epochs"},
    {"--lr", "si.lr", "initial step size"},
    {"--lambda", "si.lambda", "regulariser weight"},
    {"--alpha", "si.alpha", "regulariser strength"},
    {"--p", "si.p", "entrywise norm order"},
    {"--seed", "seed", "seed"},
    {"--out-dir", "out_dir", "output directory"},
};

void add_common(CLI::App* sub, Flags& flags) {
  sub->add_option_function<std::string>(
      "--config", [&flags](const std::string& v) { flags.config = v; },
      "flat key = value config file; flags override it");
  for (const auto& f : kFlags) {
    const std::string key = f.key;
    sub->add_option_function<std::string>(
        f.flag, [&flags, key](const std::string& v) { flags.values[key] = v; }, f.help);
  }
}

PipelineConfig build_config(const Flags& flags) {
  PipelineConfig cfg;
  if (flags.config) apply_config_file(cfg, *flags.config);
  // Seed first so a toy spec given in the same invocation picks it up.
  if (auto it = flags.values.find("seed"); it != flags.values.end()) {
    set_config_key(cfg, it->first, it->second);
  }
  for (const auto& [key, value] : flags.values) {
    if (key != "seed") set_config_key(cfg, key, value);
  }
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SI_THREADS")) {
    PipelineConfig probe;
    set_config_key(probe, "si.threads", env);
    threads = std::min(threads, probe.si.opt.threads);
  }
  cfg.si.opt.threads = threads;
  return cfg;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::vector<SparsityReport> sparsity_of(const MaskSet& masks, const SparsityPattern& pattern) {
  std::vector<SparsityReport> out;
  for (const auto& [name, mask] : masks) out.push_back(sparsity_report(mask, pattern));
  return out;
}

void write_transforms_csv(std::ostream& out, const Transforms& t) {
  out << "layer,kind,index,scale,shift\n";
  for (const auto& [name, ss] : t.linear) {
    const Vector s = ss.scale();
    for (std::size_t j = 0; j < s.size(); ++j) {
      out << name << ",linear," << j << ',' << format_double(s[j]) << ','
          << format_double(ss.delta[j]) << '\n';
    }
  }
  for (const auto& [name, a] : t.attention) {
    const Vector s = a.scale();
    for (std::size_t j = 0; j < s.size(); ++j) {
      out << name << ",attention," << j << ',' << format_double(s[j]) << ",0\n";
    }
  }
}

void write_trace_csv(std::ostream& out, const InductionOutcome& res) {
  out << "step,objective,refreshed\n";
  for (const auto& p : res.trace) {
    out << p.step << ',' << format_double(p.objective) << ',' << (p.refreshed ? 1 : 0) << '\n';
  }
}

int cmd_make_toy(const PipelineConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  ToySpec spec = cfg.toy.value_or(ToySpec{});
  spec.seed = cfg.seed;
  const Model model = build_toy_model(spec);
  save_model(cfg.out_dir / "model.sif", model);
  save_calibration(cfg.out_dir / "calib.sif",
                   synthetic_calibration(model.input_dim(), cfg.calib_synth, cfg.seed));
  std::cout << "wrote " << (cfg.out_dir / "model.sif").string() << " and "
            << (cfg.out_dir / "calib.sif").string() << '\n';
  return 0;
}

int cmd_prune(const PipelineConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const Model model = resolve_model(cfg);
  const CalibSet calib = resolve_calibration(cfg, model.input_dim());
  const InductionOutcome res = run_si(model, calib, cfg.pattern, cfg.metric, cfg.si);
  const Model base = cfg.si.stage == SiStage::kOff ? model : absorb(model, res.transforms);
  save_model(cfg.out_dir / "pruned.sif", apply_masks(base, res.masks));
  auto out = open_out(cfg.out_dir / "sparsity.csv");
  write_sparsity_csv(out, sparsity_of(res.masks, cfg.pattern));
  std::cout << "wrote " << (cfg.out_dir / "pruned.sif").string() << '\n';
  return 0;
}

int cmd_induce(const PipelineConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const Model model = resolve_model(cfg);
  const CalibSet calib = resolve_calibration(cfg, model.input_dim());
  const InductionOutcome res = run_si(model, calib, cfg.pattern, cfg.metric, cfg.si);
  const Model absorbed = absorb(model, res.transforms);
  save_model(cfg.out_dir / "induced.sif", absorbed);
  save_model(cfg.out_dir / "induced_pruned.sif", apply_masks(absorbed, res.masks));
  {
    auto out = open_out(cfg.out_dir / "transforms.csv");
    write_transforms_csv(out, res.transforms);
  }
  {
    auto out = open_out(cfg.out_dir / "trace.csv");
    write_trace_csv(out, res);
  }
  std::cout << "objective " << format_double(res.initial_objective) << " -> "
            << format_double(res.best_objective) << '\n';
  return 0;
}

int cmd_eval(const PipelineConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const Model model = resolve_model(cfg);
  const CalibSet calib = resolve_calibration(cfg, model.input_dim());
  const PipelineComparison cmp = compare_pipelines(model, calib, cfg.pattern, cfg.metric, cfg.si);
  {
    auto out = open_out(cfg.out_dir / "distortion.csv");
    write_comparison_csv(out, cmp);
  }
  {
    const ForwardTrace trace = forward_trace(model, calib.x);
    const MaskRefresher refresher(model, trace, cfg.pattern, cfg.metric);
    const Transforms identity = Transforms::identity(model);
    auto out = open_out(cfg.out_dir / "histogram.csv");
    bool header = true;
    for (const auto& name : model.prunable_weights()) {
      write_histogram_csv(out, name + ":no_si",
                          score_histogram(refresher.scores(name, identity), cfg.bins), header);
      header = false;
      write_histogram_csv(out, name + ":si",
                          score_histogram(refresher.scores(name, cmp.induction.transforms), cfg.bins),
                          false);
    }
  }
  std::cout << "distortion ratio " << format_double(cmp.ratio) << '\n';
  return 0;
}

int cmd_bench(const PipelineConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const BenchmarkResult r = benchmark_refresh(cfg.bench.d_in, cfg.bench.n, cfg.bench.iters, cfg.seed,
                                              static_cast<int>(cfg.bench.repeats));
  auto out = open_out(cfg.out_dir / "bench.csv");
  out << "method,d_in,n,iters,update_time_s,avg_time_per_iter_s,speedup,matmuls\n";
  out << "classical," << r.d_in << ',' << r.n_samples << ',' << r.iters << ','
      << format_double(r.classical_total_s) << ',' << format_double(r.classical_per_iter_s)
      << ",1," << r.classical_matmuls << '\n';
  out << "fast," << r.d_in << ',' << r.n_samples << ',' << r.iters << ','
      << format_double(r.fast_total_s) << ',' << format_double(r.fast_per_iter_s) << ','
      << format_double(r.speedup) << ',' << r.fast_matmuls << '\n';
  std::cout << "speedup " << format_double(r.speedup) << '\n';
  return 0;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparsity induction toolkit"};
  app.require_subcommand(1);
  app.footer("Config keys (key = default):\n" + config_schema() +
             "Env: SI_THREADS caps worker threads.");

  Flags flags;
  int (*run)(const PipelineConfig&) = nullptr;
  const std::pair<const char*, int (*)(const PipelineConfig&)> subs[] = {
      {"make-toy", cmd_make_toy}, {"prune", cmd_prune}, {"induce", cmd_induce},
      {"eval", cmd_eval},         {"bench", cmd_bench},
  };
  const char* descriptions[] = {
      "write a seeded toy model and synthetic calibration",
      "score, mask and write the pruned model",
      "run sparsity induction and write the absorbed model",
      "write distortion and histogram CSVs",
      "time fast versus classical importance refresh",
  };
  for (std::size_t i = 0; i < std::size(subs); ++i) {
    auto* sub = app.add_subcommand(subs[i].first, descriptions[i]);
    add_common(sub, flags);
    auto fn = subs[i].second;
    sub->callback([&run, fn] { run = fn; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    return run(build_config(flags));
  } catch (const ConfigError& e) {
    std::cerr << "error: config: key=" << e.key() << ": " << one_line(e.message()) << '\n';
  } catch (const FormatError& e) {
    std::cerr << "error: format: offset=" << e.offset() << ": " << one_line(e.message()) << '\n';
  } catch (const AbsorbError& e) {
    std::cerr << "error: absorb: " << one_line(e.what()) << '\n';
  } catch (const InductionError& e) {
    std::cerr << "error: induction: " << one_line(e.what()) << '\n';
  } catch (const ShapeError& e) {
    std::cerr << "error: shape: " << one_line(e.what()) << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << one_line(e.what()) << '\n';
  }
  return 1;
}
