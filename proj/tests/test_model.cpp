#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sparsind/rng.hpp"
#include "sparsind/tensor_file.hpp"

using namespace sparsind;

namespace {

Layer linear(std::string name, Matrix w, std::optional<Vector> b = std::nullopt) {
  return Layer{std::move(name), Linear{std::move(w), std::move(b)}};
}

}  // namespace

TEST(Forward, IdentityLayer) {
  const Model m({linear("l", Matrix::identity(3), Vector(3))});
  const Matrix x{{1, 2}, {3, 4}, {5, 6}};
  EXPECT_EQ(forward(m, x), x);
}

TEST(Forward, ScalarAffine) {
  const Model m({linear("l", Matrix{{2}}, Vector{1})});
  EXPECT_EQ(forward(m, Matrix{{3}}), (Matrix{{7}}));
}

TEST(Forward, TwoLayersMatchHandComposition) {
  const Matrix w1{{1, 2}, {3, 4}};
  const Vector b1{1, -1};
  const Matrix w2{{0, 1}, {2, -1}};
  const Vector b2{0.5, 0};
  const Model m({linear("a", w1, b1), linear("b", w2, b2)});
  const Matrix x{{1, -2}, {0, 3}};
  // By hand: h = w1 x + b1 = [[2,5],[2,5]]; y = w2 h + b2 = [[2.5,5.5],[2,5]].
  EXPECT_EQ(forward(m, x), (Matrix{{2.5, 5.5}, {2, 5}}));
}

TEST(Forward, ShapeErrorNamesLayer) {
  const Model m({linear("first", Matrix(2, 3)), linear("second", Matrix(2, 2))});
  try {
    forward(m, Matrix(4, 1));
    FAIL();
  } catch (const ModelError& e) {
    EXPECT_NE(std::string(e.what()).find("first"), std::string::npos);
  }
  EXPECT_THROW(Model({linear("a", Matrix(2, 3)), linear("b", Matrix(2, 5))}), ModelError);
}

TEST(Forward, LinearInInputForBiasFreeModels) {
  const Model m = build_toy_model(ToySpec{2, 8, 16, 3, false});
  Rng rng(1);
  const Matrix x = rng.normal_matrix(8, 5);
  for (double a : {-3.0, 0.5, 7.0}) {
    EXPECT_LE(oracle::max_rel_diff(forward(m, scaled(x, a)), scaled(forward(m, x), a)), 1e-10);
  }
}

TEST(Forward, TraceRecordsInputsAndLogits) {
  const Model m = build_toy_model(ToySpec{1, 4, 8, 0, true});
  Rng rng(2);
  const Matrix x = rng.normal_matrix(4, 3);
  const ForwardTrace t = forward_trace(m, x);
  EXPECT_EQ(t.inputs.at("blk0.attn"), x);
  EXPECT_EQ(t.inputs.at("blk0.fc1"), x);
  const auto& pair = m.layer("blk0.attn").attention();
  EXPECT_LE(oracle::max_rel_diff(t.logits.at("blk0.attn"),
                                 oracle::product(transpose(oracle::product(pair.wq, x)),
                                                 oracle::product(pair.wk, x))),
            1e-14);
  EXPECT_EQ(t.output, forward(m, x));
}

TEST(Model, Validation) {
  EXPECT_THROW(Model({linear("a", Matrix(2, 2)), linear("a", Matrix(2, 2))}), ModelError);
  EXPECT_THROW(Model({linear("a", Matrix(2, 2), Vector(3))}), ModelError);
  EXPECT_THROW(Model({Layer{"q", AttentionQK{Matrix(2, 3), Matrix(3, 3)}}}), ModelError);
  EXPECT_THROW(Model({linear("a", Matrix(2, 2))}, {"a", "a"}), ModelError);
  EXPECT_THROW(Model({linear("a", Matrix(2, 2))}, {"b"}), ModelError);
}

TEST(ToyModel, ShapesForSmallSpec) {
  const Model m = build_toy_model(ToySpec{1, 4, 8, 0, true});
  ASSERT_EQ(m.topology().size(), 3u);
  const auto& pair = m.layer("blk0.attn").attention();
  EXPECT_EQ(pair.wq.rows(), 4u);
  EXPECT_EQ(pair.wq.cols(), 4u);
  EXPECT_EQ(pair.wk.rows(), 4u);
  EXPECT_EQ(m.layer("blk0.fc1").linear().weight.rows(), 8u);
  EXPECT_EQ(m.layer("blk0.fc1").linear().weight.cols(), 4u);
  EXPECT_EQ(m.layer("blk0.fc2").linear().weight.rows(), 4u);
  EXPECT_EQ(m.layer("blk0.fc2").linear().weight.cols(), 8u);
}

TEST(ToyModel, Deterministic) {
  const ToySpec spec{2, 32, 64, 11, true};
  EXPECT_EQ(encode_tensors(model_to_tensors(build_toy_model(spec))),
            encode_tensors(model_to_tensors(build_toy_model(spec))));
  EXPECT_NE(encode_tensors(model_to_tensors(build_toy_model(spec))),
            encode_tensors(model_to_tensors(build_toy_model(ToySpec{2, 32, 64, 12, true}))));
}

TEST(ToyModel, ColumnScaleImbalanceAtLeastTen) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Model m = build_toy_model(ToySpec{2, 32, 64, seed, true});
    for (const auto& name : m.prunable_weights()) {
      const Vector norms = col_l2_norms(m.weight(name));
      const auto [lo, hi] = std::minmax_element(norms.values().begin(), norms.values().end());
      EXPECT_GE(*hi / *lo, 10.0) << name << " seed " << seed;
    }
  }
}

TEST(ToyModel, PrunableNames) {
  const Model m = build_toy_model(ToySpec{1, 4, 8, 0, true});
  EXPECT_EQ(m.prunable_weights(),
            (std::vector<std::string>{"blk0.attn.wq", "blk0.attn.wk", "blk0.fc1", "blk0.fc2"}));
}

TEST(InputTransform, AppliedBeforeFirstLayer) {
  Model m({linear("l", Matrix{{1, 1}})});
  m.set_input_transform(InputTransform{Vector{2, 4}, Vector{1, 0}});
  // (x - shift) / scale
  EXPECT_EQ(forward(m, Matrix{{3}, {8}}), (Matrix{{3}}));
}
