#include "cignn/checkpoint.hpp"
#include "cignn/error.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace cignn {
namespace {

Checkpoint sample_checkpoint(Variant v) {
  ModelConfig cfg;
  cfg.latent = 8;
  cfg.layers = 2;
  cfg.variant = v;
  cfg.global_features = v == Variant::star;
  Checkpoint ck;
  ck.config = cfg;
  ck.params = build_variant<float>(cfg, 4).params;
  ck.step = 1234;
  ck.metrics = {{"val_rmse", 0.0125}};
  ck.normalization = {{0.1, -0.2}, {0.5, 0.25}};
  ck.run = {{"graph", {{"multimesh", true}}}};
  return ck;
}

void expect_same_params(const ModelParams<float>& a, const ModelParams<float>& b) {
  std::vector<const MatrixF*> ta, tb;
  a.visit([&](const std::string&, const MatrixF& t) { ta.push_back(&t); });
  b.visit([&](const std::string&, const MatrixF& t) { tb.push_back(&t); });
  ASSERT_EQ(ta.size(), tb.size());
  for (std::size_t k = 0; k < ta.size(); ++k) EXPECT_EQ(*ta[k], *tb[k]);
}

TEST(Checkpoint, RoundTripForEveryVariant) {
  for (auto v : {Variant::full, Variant::minus, Variant::star}) {
    const auto ck = sample_checkpoint(v);
    const auto back = decode_checkpoint(encode_checkpoint(ck));
    EXPECT_EQ(back.config, ck.config);
    EXPECT_EQ(back.step, ck.step);
    EXPECT_EQ(back.metrics, ck.metrics);
    EXPECT_EQ(back.normalization.mean, ck.normalization.mean);
    EXPECT_EQ(back.normalization.std, ck.normalization.std);
    EXPECT_EQ(back.run, ck.run);
    expect_same_params(back.params, ck.params);
  }
  const auto path = std::filesystem::temp_directory_path() / "cignn_ckpt_test.ckpt";
  const auto ck = sample_checkpoint(Variant::full);
  save_checkpoint(path, ck);
  expect_same_params(load_checkpoint(path).params, ck.params);
}

TEST(Checkpoint, CorruptionIsDetected) {
  auto bytes = encode_checkpoint(sample_checkpoint(Variant::full));
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(decode_checkpoint(flipped), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 10);
  EXPECT_THROW(decode_checkpoint(truncated), FormatError);
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
}

TEST(ModelConfigJson, UnknownKeysAreRejected) {
  ModelConfig cfg;
  cfg.variant = Variant::minus;
  cfg.time_block = false;
  auto j = model_config_to_json(cfg);
  EXPECT_EQ(model_config_from_json(j), cfg);
  EXPECT_EQ(model_config_from_json(nlohmann::json::object()), ModelConfig{});
  j["latnet"] = 3;
  EXPECT_THROW(model_config_from_json(j), ValidationError);
}

}  // namespace
}  // namespace cignn
