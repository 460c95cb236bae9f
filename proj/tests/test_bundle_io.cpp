#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "loclin/bundle_io.hpp"
#include "loclin/vocab.hpp"
#include "support.hpp"

namespace loclin {
namespace {

using test::code_of;

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a64({}), 0xcbf29ce484222325ull);
  const std::uint8_t a[] = {'a'};
  EXPECT_EQ(fnv1a64(a), 0xaf63dc4c8601ec8cull);
  const std::uint8_t foobar[] = {'f', 'o', 'o', 'b', 'a', 'r'};
  EXPECT_EQ(fnv1a64(foobar), 0x85944171f73967e8ull);
}

TEST(Container, HeaderLayout) {
  TensorFile f;
  f.tensors.push_back({"x", {2}, {1.0f, -2.0f}});
  const auto bytes = serialize(f);
  ASSERT_GE(bytes.size(), 24u);
  EXPECT_EQ(std::memcmp(bytes.data(), kMagic, 8), 0);
  std::uint64_t mlen = 0;
  for (int i = 7; i >= 0; --i) mlen = (mlen << 8) | bytes[8 + i];
  EXPECT_EQ(bytes.size(), 16 + mlen + 8);
  const std::string manifest(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(mlen));
  EXPECT_LT(manifest.find("format_version"), manifest.find("config"));
  EXPECT_LT(manifest.find("config"), manifest.find("tensors"));
  EXPECT_LT(manifest.find("tensors"), manifest.find("checksum"));
  // 1.0f little-endian
  EXPECT_EQ(bytes[16 + mlen + 3], 0x3f);
  EXPECT_EQ(bytes[16 + mlen + 2], 0x80);
}

TEST(Container, RoundTripIsBitIdentical) {
  std::mt19937_64 rng(51);
  TensorFile f;
  f.config = test::small_config();
  f.tensors.push_back(matrix_tensor("a", test::random_matrix(rng, 3, 5)));
  f.tensors.push_back({"special", {4}, {0.0f, -0.0f, 1e-38f, 3.4e38f}});
  f.tensors.push_back({"empty", {0, 3}, {}});
  const auto bytes = serialize(f);
  const auto back = deserialize(bytes);
  EXPECT_EQ(back.config, f.config);
  EXPECT_EQ(back.tensors, f.tensors);
  EXPECT_EQ(serialize(back), bytes);
  EXPECT_TRUE(std::signbit(back.find("special")->values[1]));
  EXPECT_EQ(back.find("missing"), nullptr);
}

TEST(Container, EmptyTensorList) {
  TensorFile f;
  const auto back = deserialize(serialize(f));
  EXPECT_FALSE(back.config);
  EXPECT_TRUE(back.tensors.empty());
}

TEST(Container, CorruptionIsDetected) {
  std::mt19937_64 rng(52);
  TensorFile f;
  f.tensors.push_back(matrix_tensor("a", test::random_matrix(rng, 4, 4)));
  const auto bytes = serialize(f);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 4);
  EXPECT_EQ(code_of([&] { deserialize(truncated); }), ErrorCode::format);

  auto flipped = bytes;
  flipped.back() ^= 0x01;
  EXPECT_EQ(code_of([&] { deserialize(flipped); }), ErrorCode::checksum);

  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(code_of([&] { deserialize(magic); }), ErrorCode::format);

  auto long_manifest = bytes;
  long_manifest[15] = 0x7f;
  EXPECT_EQ(code_of([&] { deserialize(long_manifest); }), ErrorCode::format);

  EXPECT_EQ(code_of([&] { deserialize(std::vector<std::uint8_t>(5, 0)); }), ErrorCode::format);
}

TEST(Container, MismatchedShapeRefusedOnWrite) {
  TensorFile f;
  f.tensors.push_back({"bad", {2, 2}, {1.0f}});
  EXPECT_EQ(code_of([&] { serialize(f); }), ErrorCode::shape);
}

TEST(BundleIo, WriteReadRoundTrip) {
  for (bool tied : {false, true}) {
    auto c = test::small_config(32, 3, Activation::geglu);
    c.tie_embeddings = tied;
    c.embed_scale = tied;
    const auto b = make_tiny_model(53, c);
    const auto path = test::temp_path("model.llt");
    write_bundle(b, path);
    const auto back = read_bundle(path);
    EXPECT_EQ(back.config, b.config);
    EXPECT_EQ(back.embedding, b.embedding);
    EXPECT_EQ(back.layers, b.layers);
    EXPECT_EQ(back.final_norm, b.final_norm);
    EXPECT_EQ(back.unembedding, b.unembedding);
    const TokenSequence s{{1, 2, 3}};
    EXPECT_EQ(forward(back, embed(back, s)).y, forward(b, embed(b, s)).y);
  }
}

TEST(BundleIo, MissingFileAndMissingTensor) {
  EXPECT_EQ(code_of([] { read_bundle("/nonexistent/dir/model.llt"); }), ErrorCode::io);
  const auto b = test::random_model(54);
  TensorFile f;
  f.config = b.config;
  f.tensors = bundle_tensors(b);
  f.tensors.pop_back();
  EXPECT_EQ(code_of([&] { bundle_from_tensors(f); }), ErrorCode::format);
  TensorFile no_config;
  no_config.tensors = bundle_tensors(b);
  EXPECT_EQ(code_of([&] { bundle_from_tensors(no_config); }), ErrorCode::format);
}

TEST(BundleIo, ConfigJsonRoundTrip) {
  auto c = test::small_config(64, 4, Activation::geglu);
  c.rope_theta = 500.0;
  c.norm_eps = 1e-5;
  EXPECT_EQ(config_from_json(config_to_json(c)), c);
  EXPECT_EQ(code_of([] { config_from_json("{not json"); }), ErrorCode::format);
}

TEST(Export, JacobianBlocksReverifyAfterReading) {
  const auto b = test::random_model(55, 32, 2);
  const auto x = embed(b, {{3, 1, 4}});
  const auto j = detached_jacobian(b, x);
  std::vector<NamedTensor> tensors;
  for (std::size_t p = 0; p < j.blocks.size(); ++p)
    tensors.push_back(matrix_tensor("jacobian.blocks." + std::to_string(p), j.blocks[p]));
  for (auto& t : frozen_tensors(j.frozen)) tensors.push_back(std::move(t));
  const auto path = test::temp_path("jac.llt");
  export_tensors(tensors, path);

  const auto file = read_tensor_file(path);
  EXPECT_FALSE(file.config);
  std::vector<Matrix> blocks;
  for (std::size_t p = 0; p < 3; ++p)
    blocks.push_back(tensor_matrix(*file.find("jacobian.blocks." + std::to_string(p))));
  EXPECT_EQ(blocks, j.blocks);
  EXPECT_LE(relative_error(apply_blocks(blocks, x), forward(b, x).y), 1e-5);
  EXPECT_EQ(frozen_from_tensors(file), j.frozen);
}

TEST(Export, DoubleMatrixIsRoundedToFloat) {
  DMatrix m(2, 2);
  m(0, 1) = 0.1;
  const auto t = matrix_tensor("d", m);
  EXPECT_EQ(t.shape, (std::vector<std::size_t>{2, 2}));
  EXPECT_EQ(t.values[1], 0.1f);
  EXPECT_EQ(code_of([] { tensor_matrix(NamedTensor{"v", {3}, {1, 2, 3}}); }), ErrorCode::format);
}

TEST(Generator, SeedDeterminism) {
  const auto c = test::small_config();
  const auto a = make_tiny_model(7, c), b = make_tiny_model(7, c), other = make_tiny_model(8, c);
  EXPECT_EQ(serialize({c, bundle_tensors(a)}), serialize({c, bundle_tensors(b)}));
  EXPECT_NE(serialize({c, bundle_tensors(a)}), serialize({c, bundle_tensors(other)}));
}

TEST(Generator, InvalidConfigRejected) {
  auto c = test::small_config();
  c.n_kv_heads = 3;
  EXPECT_EQ(code_of([&] { make_tiny_model(1, c); }), ErrorCode::config);
}

TEST(Generator, TrainedModelFollowsCorpus) {
  TinyModelOptions o;
  o.trained = true;
  const auto b = make_tiny_model(0, ModelConfig{}, o);
  EXPECT_GE(corpus_accuracy(b), 0.6);
  EXPECT_LT(corpus_accuracy(make_tiny_model(0, ModelConfig{})), 0.6);
  const ToyVocab vocab(b.config.vocab_size);
  for (const auto& ex : corpus_examples(vocab)) {
    EXPECT_EQ(ex.prefix.ids.front(), ToyVocab::bos);
    EXPECT_LT(static_cast<std::size_t>(ex.next), vocab.size());
  }
}

}  // namespace
}  // namespace loclin
