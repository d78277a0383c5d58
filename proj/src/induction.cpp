#include "sparsind/induction.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

namespace sparsind {

ScaleShift ScaleShift::identity(std::string layer_name, std::size_t d_in) {
  return {std::move(layer_name), Vector(d_in, 0.0), Vector(d_in, 0.0)};
}

ScaleShift ScaleShift::from_scale(std::string layer_name, const Vector& s, Vector delta) {
  if (s.size() != delta.size()) throw ShapeError("scale and shift lengths differ");
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (!(s[j] > 0.0)) {
      throw DomainError("layer '" + layer_name + "': scale must be positive, s[" +
                        std::to_string(j) + "] = " + std::to_string(s[j]));
    }
  }
  return {std::move(layer_name), elementwise_log(s), std::move(delta)};
}

bool ScaleShift::is_identity() const {
  for (double v : log_scale.values())
    if (v != 0.0) return false;
  for (double v : delta.values())
    if (v != 0.0) return false;
  return true;
}

AttnScale AttnScale::identity(std::string pair_name, std::size_t d_k) {
  return {std::move(pair_name), Vector(d_k, 0.0)};
}

AttnScale AttnScale::from_scale(std::string pair_name, const Vector& s) {
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (!(s[j] > 0.0)) {
      throw DomainError("pair '" + pair_name + "': scale must be positive, s_a[" +
                        std::to_string(j) + "] = " + std::to_string(s[j]));
    }
  }
  return {std::move(pair_name), elementwise_log(s)};
}

bool AttnScale::is_identity() const {
  for (double v : log_scale.values())
    if (v != 0.0) return false;
  return true;
}

Transforms Transforms::identity(const Model& model) {
  Transforms t;
  for (const auto& name : model.topology()) {
    const Layer& l = model.layer(name);
    if (l.is_linear()) {
      t.linear.emplace(name, ScaleShift::identity(name, l.linear().d_in()));
    } else {
      t.attention.emplace(name, AttnScale::identity(name, l.attention().d_k()));
    }
  }
  return t;
}

Transforms Transforms::zeros_like() const {
  Transforms z;
  for (const auto& [name, t] : linear) {
    z.linear.emplace(name, ScaleShift{name, Vector(t.log_scale.size()), Vector(t.delta.size())});
  }
  for (const auto& [name, t] : attention) {
    z.attention.emplace(name, AttnScale{name, Vector(t.log_scale.size())});
  }
  return z;
}

void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

namespace {

struct StepSizes {
  double scale;
  double shift;
  double attention;

  void multiply(double f) {
    scale *= f;
    shift *= f;
    attention *= f;
  }
};

Transforms take_step(const Transforms& t, const Transforms& grad, const StepSizes& lr,
                     const ParamFilter& filter) {
  Transforms next = t;
  for (auto& [name, ss] : next.linear) {
    const ScaleShift& g = grad.linear.at(name);
    if (filter.scales_enabled) {
      for (std::size_t j = 0; j < ss.log_scale.size(); ++j) ss.log_scale[j] -= lr.scale * g.log_scale[j];
    }
    auto it = filter.shift_enabled.find(name);
    if (it != filter.shift_enabled.end() && it->second) {
      for (std::size_t j = 0; j < ss.delta.size(); ++j) ss.delta[j] -= lr.shift * g.delta[j];
    }
  }
  if (filter.attention_enabled) {
    for (auto& [name, a] : next.attention) {
      const AttnScale& g = grad.attention.at(name);
      for (std::size_t j = 0; j < a.log_scale.size(); ++j) a.log_scale[j] -= lr.attention * g.log_scale[j];
    }
  }
  return next;
}

void require_finite_evaluation(const Evaluation& e, std::size_t step) {
  if (std::isfinite(e.total)) return;
  std::string where = "objective";
  for (const auto& [name, value] : e.terms) {
    if (!std::isfinite(value)) {
      where = name;
      break;
    }
  }
  std::ostringstream os;
  os << "induction diverged at step " << step << ": term '" << where << "' is " << e.total;
  throw InductionError(os.str());
}

}  // namespace

InductionResult run_induction(const InductionProblem& problem, Transforms init,
                              const ParamFilter& filter, const InductionConfig& cfg,
                              const MaskSet* frozen_masks) {
  const bool frozen = cfg.mask_refresh_period == 0;
  if (cfg.epochs < 1) throw DomainError("induction needs at least one epoch");
  if (!(cfg.lr > 0.0)) throw DomainError("learning rate must be positive");

  InductionResult res;
  Transforms theta = std::move(init);
  MaskSet masks = (frozen && frozen_masks) ? *frozen_masks : problem.refresh_masks(theta);
  Transforms grad = theta.zeros_like();
  Evaluation cur = problem.evaluate(theta, masks, &grad);
  require_finite_evaluation(cur, 0);

  res.initial_objective = cur.total;
  res.best_objective = cur.total;
  res.transforms = theta;
  res.masks = masks;
  res.trace.push_back({0, cur.total, true});

  StepSizes lr{cfg.lr, cfg.lr, cfg.lr};
  const std::size_t total_steps = cfg.epochs * std::max<std::size_t>(cfg.steps_per_epoch, 1);

  auto consider_best = [&](std::size_t step) {
    if (cur.total < res.best_objective) {
      res.best_objective = cur.total;
      res.best_step = step;
      res.transforms = theta;
      res.masks = masks;
    }
  };

  for (std::size_t step = 1; step <= total_steps; ++step) {
    if (!frozen && step > 1 && (step - 1) % cfg.mask_refresh_period == 0) {
      masks = problem.refresh_masks(theta);
      cur = problem.evaluate(theta, masks, &grad);
      require_finite_evaluation(cur, step);
      res.trace.push_back({step, cur.total, true});
      consider_best(step);
    }
    if (cur.total == 0.0) break;

    bool accepted = false;
    for (int attempt = 0; attempt <= cfg.max_backtracks; ++attempt) {
      Transforms trial = take_step(theta, grad, lr, filter);
      const Evaluation e = problem.evaluate(trial, masks, nullptr);
      if (std::isfinite(e.total) && e.total < cur.total) {
        theta = std::move(trial);
        accepted = true;
        break;
      }
      lr.multiply(0.5);
    }
    if (!accepted) {
      // No descent direction left under the current masks.
      if (frozen) break;
      lr = {cfg.lr, cfg.lr, cfg.lr};
      continue;
    }
    cur = problem.evaluate(theta, masks, &grad);
    require_finite_evaluation(cur, step);
    lr.multiply(cfg.lr_growth);
    res.trace.push_back({step, cur.total, frozen});
    if (frozen) consider_best(step);
  }

  if (!frozen) {
    masks = problem.refresh_masks(theta);
    cur = problem.evaluate(theta, masks, nullptr);
    require_finite_evaluation(cur, total_steps);
    res.trace.push_back({total_steps, cur.total, true});
    consider_best(total_steps);
  }
  return res;
}

}  // namespace sparsind
