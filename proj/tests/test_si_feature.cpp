#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "sparsind/evalkit.hpp"
#include "sparsind/rng.hpp"
#include "sparsind/si_feature.hpp"

using namespace sparsind;

namespace {

Transforms random_transforms(const Model& m, Rng& rng) {
  Transforms t = Transforms::identity(m);
  for (auto& [name, ss] : t.linear) {
    ss.log_scale = rng.normal_vector(ss.log_scale.size(), 0.3);
    ss.delta = rng.normal_vector(ss.delta.size(), 0.3);
  }
  for (auto& [name, a] : t.attention) a.log_scale = rng.normal_vector(a.log_scale.size(), 0.3);
  return t;
}

std::vector<double> analytic(const InductionProblem& p, const Transforms& t, const MaskSet& masks) {
  Transforms g = t.zeros_like();
  p.evaluate(t, masks, &g);
  return gradcheck::flatten(g);
}

std::vector<double> numeric(const InductionProblem& p, const Transforms& t, const MaskSet& masks) {
  return gradcheck::finite_difference(
      [&](const Transforms& q) { return p.evaluate(q, masks, nullptr).total; }, t);
}

}  // namespace

TEST(InitScales, SymmetricOutputsGiveFloor) {
  FeatureLossConfig cfg;
  const Linear l{Matrix{{1}, {2}}, std::nullopt};
  const Vector s = init_scales(l, CalibSet{Matrix{{-1, 0, 1}}}, cfg);
  EXPECT_EQ(s, (Vector{cfg.eps_init, cfg.eps_init}));
}

TEST(InitScales, SkewedChannel) {
  const Linear l{Matrix{{1}}, std::nullopt};
  const Vector s = init_scales(l, CalibSet{Matrix{{1, 2, 100}}}, FeatureLossConfig{});
  const double mu = 103.0 / 3.0;
  EXPECT_NEAR(s[0], (2 - mu) * (2 - mu), 1e-9);
  EXPECT_NEAR(s[0], 1045.444444444, 1e-6);
}

TEST(InitScales, AffineMapMatchesRecompute) {
  Rng rng(1);
  const Linear l{rng.normal_matrix(5, 4), std::nullopt};
  const Matrix x = rng.normal_matrix(4, 9);
  FeatureLossConfig cfg;
  cfg.g = MonotoneMap::affine(1.0, 0.75);
  const Vector s = init_scales(l, CalibSet{x}, cfg);
  const Matrix y = oracle::product(l.weight, x);
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> row(y.row(i).begin(), y.row(i).end());
    double mean = 0;
    for (double v : row) mean += v;
    mean /= row.size();
    const double d = oracle::median(row) - (mean + 0.75);
    EXPECT_NEAR(s[i], std::max(d * d, cfg.eps_init), 1e-12 * std::max(1.0, d * d));
  }
}

TEST(InitScales, EmptyCalibration) {
  const Linear l{Matrix{{1}}, std::nullopt};
  EXPECT_THROW(init_scales(l, CalibSet{Matrix(1, 0)}, FeatureLossConfig{}), DomainError);
}

TEST(InitialTransforms, PropagateFromUpstreamLinear) {
  const Model m = build_toy_model(ToySpec{2, 8, 16, 3, true});
  const CalibSet calib{synthetic_calibration(8, 32, 3)};
  const FeatureLossConfig cfg;
  const Transforms t = initial_feature_transforms(m, calib, cfg);
  EXPECT_EQ(t.linear.at("blk0.fc1").log_scale, Vector(8));
  const ForwardTrace trace = forward_trace(m, calib.x);
  const Vector s = init_scales(m.layer("blk0.fc1").linear(), CalibSet{trace.inputs.at("blk0.fc1")}, cfg);
  EXPECT_EQ(t.linear.at("blk0.fc2").scale().size(), s.size());
  for (std::size_t j = 0; j < s.size(); ++j)
    EXPECT_NEAR(t.linear.at("blk0.fc2").scale()[j], s[j], 1e-12 * s[j]);
  // blk1.fc1 reads blk0.fc2's output (through the attention pair).
  const Vector s2 = init_scales(m.layer("blk0.fc2").linear(), CalibSet{trace.inputs.at("blk0.fc2")}, cfg);
  for (std::size_t j = 0; j < s2.size(); ++j)
    EXPECT_NEAR(t.linear.at("blk1.fc1").scale()[j], s2[j], 1e-12 * s2[j]);
  for (const auto& [name, ss] : t.linear) EXPECT_EQ(ss.delta, Vector(ss.delta.size())) << name;
}

TEST(FeatureLoss, IdenticalModels) {
  const Model m = build_toy_model(ToySpec{1, 4, 8, 1, true});
  const CalibSet calib{synthetic_calibration(4, 16, 1)};
  FeatureLossConfig cfg;
  cfg.lambda = 0.3;
  const std::set<std::string> induced{"blk0.fc1", "blk0.fc2"};
  const FeatureLoss l = feature_loss(m, m, calib, induced, cfg);
  EXPECT_EQ(l.mse, 0.0);
  const double norms = entrywise_p_norm(m.layer("blk0.fc1").linear().weight, 2) +
                       entrywise_p_norm(m.layer("blk0.fc2").linear().weight, 2);
  EXPECT_NEAR(l.total, 0.3 * std::exp(-cfg.alpha * norms), 1e-15);
}

TEST(FeatureLoss, ZeroWeightsGiveUnitRegulariser) {
  const Model m({Layer{"l", Linear{Matrix(2, 3), std::nullopt}}});
  const FeatureLoss l = feature_loss(m, m, CalibSet{Matrix::ones(3, 2)}, {"l"}, FeatureLossConfig{});
  EXPECT_EQ(l.reg, 1.0);
}

TEST(FeatureLoss, RegulariserDecreasesWhenWeightsGrow) {
  Rng rng(2);
  FeatureLossConfig cfg;
  cfg.p = 1;
  const Matrix w = rng.normal_matrix(4, 4);
  const Matrix w2 = scaled(w, 2);
  EXPECT_LT(regularizer({&w2}, cfg), regularizer({&w}, cfg));
  EXPECT_LE(regularizer({&w}, cfg), 1.0);
  EXPECT_GT(regularizer({&w}, cfg), 0.0);
}

TEST(FeatureLoss, MseIsMeanOverEntries) {
  const Model a({Layer{"l", Linear{Matrix{{1, 0}}, std::nullopt}}});
  const Model b({Layer{"l", Linear{Matrix{{0, 0}}, std::nullopt}}});
  FeatureLossConfig cfg;
  cfg.lambda = 0;
  const FeatureLoss l = feature_loss(a, b, CalibSet{Matrix{{1, 3}, {0, 0}}}, {"l"}, cfg);
  EXPECT_DOUBLE_EQ(l.mse, 5.0);
  EXPECT_EQ(l.total, l.mse);
}

TEST(FeatureLoss, TopologyMismatch) {
  const Model a({Layer{"l", Linear{Matrix{{1, 0}}, std::nullopt}}});
  const Model b({Layer{"k", Linear{Matrix{{1, 0}}, std::nullopt}}});
  EXPECT_THROW(feature_loss(a, b, CalibSet{Matrix(2, 1)}, {}, FeatureLossConfig{}), ShapeError);
}

TEST(FeatureLossConfig, Validation) {
  FeatureLossConfig cfg;
  cfg.p = 0.5;
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg = {};
  cfg.alpha = 0;
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg = {};
  cfg.lambda = 0;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_THROW(MonotoneMap::parse("affine:-1,0"), DomainError);
  EXPECT_EQ(MonotoneMap::parse("affine:2,0.5").to_string(), "affine:2,0.5");
  EXPECT_EQ(MonotoneMap::parse("identity")(3.5), 3.5);
}

TEST(FeatureProblem, LossMatchesAbsorbedMaskedModel) {
  const Model m = build_toy_model(ToySpec{2, 6, 12, 4, true});
  const CalibSet calib{synthetic_calibration(6, 20, 4)};
  Rng rng(4);
  FeatureLossConfig cfg;
  cfg.lambda = 0.5;
  const auto induced = all_layers(m);
  const FeatureProblem p(m, calib, SparsityPattern::unstructured(0.5), Metric::kWandaFast, induced, cfg);
  Transforms t = random_transforms(m, rng);
  // Keep shifts only where absorb can fold them.
  const ParamFilter f = make_param_filter(m, {});
  for (auto& [name, ss] : t.linear)
    if (!f.shift_enabled.at(name)) ss.delta = Vector(ss.delta.size());
  const MaskSet masks = p.refresh_masks(t);
  const Model sparse = apply_masks(absorb(m, t), masks);
  const FeatureLoss direct = feature_loss(m, sparse, calib, induced, cfg);
  const FeatureLoss via = p.loss(t, masks);
  EXPECT_NEAR(via.mse, direct.mse, 1e-10 * direct.mse);
  // The regulariser sees each layer's own reparameterised weight, not the
  // absorbed one (absorb also folds the downstream 1/s into it).
  std::vector<Matrix> own;
  for (const auto& layer : m.layers()) {
    if (layer.is_linear()) {
      own.push_back(reparam_linear(layer.linear(), t.linear.at(layer.name)).layer.weight);
    } else {
      const AttentionQK q = reparam_attention(layer.attention(), t.attention.at(layer.name));
      own.push_back(q.wq);
      own.push_back(q.wk);
    }
  }
  std::vector<const Matrix*> ptrs;
  for (const auto& w : own) ptrs.push_back(&w);
  EXPECT_NEAR(via.reg, regularizer(ptrs, cfg), 1e-12);
}

TEST(FeatureProblem, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 4; ++trial) {
    const Model m = build_toy_model(ToySpec{2, 8, 12, static_cast<std::uint64_t>(trial), true});
    const CalibSet calib{synthetic_calibration(8, 16, trial)};
    FeatureLossConfig cfg;
    cfg.lambda = 1.0;
    cfg.alpha = 0.05;
    cfg.p = trial % 2 ? 1.5 : 2.0;
    cfg.distribution_weight = trial >= 2 ? 0.5 : 0.0;
    const FeatureProblem p(m, calib, SparsityPattern::nm(2, 4), Metric::kWandaFast, all_layers(m), cfg);
    const Transforms t = random_transforms(m, rng);
    const MaskSet masks = p.refresh_masks(t);
    EXPECT_LE(gradcheck::relative_error(analytic(p, t, masks), numeric(p, t, masks)), 1e-5)
        << "trial " << trial;
  }
}

TEST(FeatureProblem, SpectralGradientMatchesFiniteDifferences) {
  Rng rng(6);
  const Model m = build_toy_model(ToySpec{1, 6, 12, 9, true});
  const CalibSet calib{synthetic_calibration(6, 16, 9)};
  FeatureLossConfig cfg;
  cfg.lambda = 1.0;
  cfg.alpha = 0.1;
  cfg.norm = NormMode::kSpectral;
  const FeatureProblem p(m, calib, SparsityPattern::unstructured(0.5), Metric::kWandaFast,
                         all_layers(m), cfg);
  const Transforms t = random_transforms(m, rng);
  const MaskSet masks = p.refresh_masks(t);
  EXPECT_LE(gradcheck::relative_error(analytic(p, t, masks), numeric(p, t, masks)), 1e-5);
}

TEST(FeatureProblem, AgreesWithDistributionStageOnSingleLayer) {
  Rng rng(7);
  const Model m({Layer{"l", Linear{rng.normal_matrix(5, 8), rng.normal_vector(5)}}});
  const CalibSet calib{synthetic_calibration(8, 12, 7)};
  const auto pattern = SparsityPattern::unstructured(0.5);
  FeatureLossConfig cfg;
  cfg.lambda = 0;
  const FeatureProblem fp(m, calib, pattern, Metric::kWandaFast, {"l"}, cfg);
  const DistributionProblem dp(m, calib, pattern, Metric::kWandaFast);
  const Transforms t = random_transforms(m, rng);
  const MaskSet masks = dp.refresh_masks(t);
  const auto gf = analytic(fp, t, masks);
  auto gd = analytic(dp, t, masks);
  for (double& v : gd) v /= 5.0;
  for (std::size_t i = 0; i < gf.size(); ++i) EXPECT_NEAR(gf[i], gd[i], 1e-10) << i;
  EXPECT_NEAR(fp.evaluate(t, masks, nullptr).total, dp.evaluate(t, masks, nullptr).total / 5.0,
              1e-12);
}

TEST(OptimizeFeatures, MonotoneAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Model m = build_toy_model(ToySpec{2, 32, 64, seed, true});
    const CalibSet calib{synthetic_calibration(32, 128, seed)};
    const auto p = SparsityPattern::nm(2, 4);
    const MaskSet masks = compute_masks(m, calib, p, Metric::kWandaFast);
    const InductionResult r = optimize_features(m, masks, calib, p, Metric::kWandaFast,
                                                all_layers(m), FeatureLossConfig{}, InductionConfig{});
    EXPECT_LE(r.best_objective, r.initial_objective) << "seed " << seed;
  }
}

TEST(OptimizeFeatures, LambdaZeroLossIsMse) {
  const Model m = build_toy_model(ToySpec{1, 8, 16, 2, true});
  const CalibSet calib{synthetic_calibration(8, 32, 2)};
  FeatureLossConfig cfg;
  cfg.lambda = 0;
  const FeatureProblem p(m, calib, SparsityPattern::unstructured(0.5), Metric::kWandaFast,
                         all_layers(m), cfg);
  const Transforms t = initial_feature_transforms(m, calib, cfg);
  const MaskSet masks = p.refresh_masks(t);
  const FeatureLoss l = p.loss(t, masks);
  EXPECT_EQ(l.total, l.mse);
  EXPECT_EQ(p.evaluate(t, masks, nullptr).total, l.mse);
}
