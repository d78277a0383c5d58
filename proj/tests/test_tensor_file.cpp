#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "file_corpus.hpp"
#include "sparsind/rng.hpp"
#include "sparsind/tensor_file.hpp"

using namespace sparsind;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "sparsind_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(TensorFile, HandBuiltBytesDecode) {
  corpus::Bytes b = corpus::header(2);
  corpus::entry(b, "a.weight", 0, {3, 2}, {1, 2, 3, 4, 5, 6.5f});
  corpus::entry(b, "a.bias", 0, {3}, {-1, 0, 1});
  const auto t = decode_tensors(b);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].name, "a.weight");
  EXPECT_EQ(t[0].to_matrix(), (Matrix{{1, 2}, {3, 4}, {5, 6.5}}));
  EXPECT_EQ(t[1].to_vector(), (Vector{-1, 0, 1}));
  // The encoder reproduces the hand-built stream exactly.
  EXPECT_EQ(encode_tensors(t), b);
}

TEST(TensorFile, ScalarTensorHasNoDims) {
  corpus::Bytes b = corpus::header(1);
  corpus::entry(b, "s", 0, {}, {2.5f});
  const auto t = decode_tensors(b);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_TRUE(t[0].dims.empty());
  EXPECT_EQ(t[0].data, std::vector<double>{2.5});
}

TEST(TensorFile, SaveLoadMatrixIsF32Exact) {
  const Matrix m{{0.1, -2.0}, {1e-30, 3.14159265358979}, {-7.25, 1e30}};
  const auto path = temp_path("m.sif");
  const NamedTensor t = NamedTensor::from_matrix("m", m);
  save_tensors(path, std::span<const NamedTensor>(&t, 1));
  const auto back = load_tensors(path);
  ASSERT_EQ(back.size(), 1u);
  const Matrix got = back[0].to_matrix();
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_EQ(got.values()[i], static_cast<double>(static_cast<float>(m.values()[i])));
  }
}

TEST(TensorFile, BadMagicAtOffsetZero) {
  corpus::Bytes b;
  corpus::str(b, "XXXX");
  corpus::u32(b, 0);
  try {
    decode_tensors(b);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(TensorFile, TwoByTwoWithTwelveBytesIsTruncation) {
  corpus::Bytes b = corpus::header(1);
  corpus::entry(b, "w", 0, {2, 2}, {1, 2, 3});
  try {
    decode_tensors(b);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos) << e.what();
  }
}

TEST(TensorFile, MalformedCorpusRejectedAtOffsets) {
  for (const auto& c : corpus::malformed()) {
    try {
      decode_tensors(c.bytes);
      ADD_FAILURE() << c.label << ": accepted";
    } catch (const FormatError& e) {
      EXPECT_EQ(e.offset(), c.offset) << c.label << ": " << e.what();
    }
  }
}

TEST(TensorFile, EncoderRejectsInvalidTensors) {
  std::vector<NamedTensor> dup{NamedTensor::from_vector("a", Vector{1}),
                               NamedTensor::from_vector("a", Vector{2})};
  EXPECT_ANY_THROW(encode_tensors(dup));
  std::vector<NamedTensor> big{NamedTensor::from_vector("a", Vector{1e300})};
  EXPECT_ANY_THROW(encode_tensors(big));
}

TEST(TensorFile, ModelRoundTrip) {
  Model m = build_toy_model(ToySpec{2, 4, 8, 1, true});
  m.set_input_transform(InputTransform{Vector{1, 2, 0.5, 4}, Vector{0, 0.25, -1, 3}});
  const Model q = quantize_to_f32(m);
  const Model back = model_from_tensors(model_to_tensors(q));
  EXPECT_EQ(back.topology(), q.topology());
  EXPECT_EQ(encode_tensors(model_to_tensors(back)), encode_tensors(model_to_tensors(q)));
  ASSERT_TRUE(back.input_transform().has_value());
  EXPECT_EQ(back.input_transform()->scale, q.input_transform()->scale);

  const auto path = temp_path("toy.sif");
  save_model(path, m);
  EXPECT_EQ(encode_tensors(model_to_tensors(load_model(path))), encode_tensors(model_to_tensors(q)));
}

TEST(TensorFile, ModelFromTensorsRejectsStrayNames) {
  std::vector<NamedTensor> t{NamedTensor::from_matrix("x.weird", Matrix{{1}})};
  EXPECT_THROW(model_from_tensors(t), ModelError);
  std::vector<NamedTensor> half{NamedTensor::from_matrix("a.wq", Matrix{{1}})};
  EXPECT_THROW(model_from_tensors(half), ModelError);
}
