#include <gtest/gtest.h>

#include <sstream>

#include "decompkan/checkpoint.hpp"

using namespace decompkan;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.lookback = 48;
  cfg.horizon = 12;
  cfg.channels = 3;
  cfg.kan_hidden = 6;
  cfg.grid_lo = -1.25;
  return cfg;
}

std::string serialize(const ModelParams& p, const ModelConfig& cfg) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, p, cfg);
  return os.str();
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  for (const std::string v : {"full", "no_decomp", "no_adaptive", "core_mlp", "core_linear"}) {
    const ModelConfig cfg = make_ablation(small_config(), v);
    const ModelParams p = init_model(Rng(3), cfg);
    std::istringstream is(serialize(p, cfg), std::ios::binary);
    const Checkpoint ck = read_checkpoint(is);
    EXPECT_EQ(ck.config, cfg) << v;
    std::vector<const Tensor2*> a, b;
    p.for_each([&](const std::string&, const Tensor2& t) { a.push_back(&t); });
    ck.params.for_each([&](const std::string&, const Tensor2& t) { b.push_back(&t); });
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(*a[k], *b[k]) << v;
  }
}

TEST(Checkpoint, SerializationIsDeterministicAndLittleEndian) {
  const ModelConfig cfg = small_config();
  ModelParams p = init_model(Rng(4), cfg);
  p.residual.kan[0].base_weight[0] = 1.0;
  const std::string s = serialize(p, cfg);
  EXPECT_EQ(s, serialize(p, cfg));
  const std::size_t data = s.find("end_header\n") + 11;
  // adaptive.stats_in.weight comes first; find residual.kan0.base_weight's
  // offset from the manifest order.
  std::size_t offset = 0;
  bool found = false;
  p.for_each([&](const std::string& name, const Tensor2& t) {
    if (name == "residual.kan0.base_weight") found = true;
    if (!found) offset += t.size();
  });
  ASSERT_TRUE(found);
  const unsigned char one[8] = {0, 0, 0, 0, 0, 0, 0xf0, 0x3f};
  EXPECT_EQ(s.compare(data + offset * 8, 8, reinterpret_cast<const char*>(one), 8), 0);
  EXPECT_EQ(s.size(), data + count_params(cfg) * 8);
  EXPECT_NE(s.find("config grid_lo -1.25\n"), std::string::npos);
  EXPECT_NE(s.find("format_version 1\n"), std::string::npos);
}

TEST(Checkpoint, RejectsCorruption) {
  const ModelConfig cfg = small_config();
  const std::string s = serialize(init_model(Rng(5), cfg), cfg);
  auto load = [](std::string text) {
    std::istringstream is(text, std::ios::binary);
    return read_checkpoint(is);
  };
  EXPECT_THROW(load(s.substr(0, s.size() - 3)), DataError);
  EXPECT_THROW(load(s + "x"), DataError);
  EXPECT_THROW(load("not a checkpoint\n"), DataError);
  std::string v2 = s;
  v2.replace(v2.find("format_version 1"), 16, "format_version 2");
  EXPECT_THROW(load(v2), DataError);
  std::string shape = s;
  shape.replace(shape.find("config horizon 12"), 17, "config horizon 13");
  EXPECT_THROW(load(shape), DataError);
  std::string key = s;
  key.replace(key.find("config stride"), 13, "config strude");
  EXPECT_THROW(load(key), DataError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ck.bin"), IoError);
}

TEST(ModelConfigItems, RoundTrip) {
  ModelConfig cfg = make_ablation(small_config(), "core_mlp");
  cfg.use_patching = false;
  ModelConfig back;
  for (const auto& [k, v] : model_config_items(cfg)) ASSERT_TRUE(set_model_config_item(back, k, v)) << k;
  EXPECT_EQ(back, cfg);
  EXPECT_FALSE(set_model_config_item(back, "nope", "1"));
  EXPECT_THROW(set_model_config_item(back, "lookback", "-3"), ConfigError);
  EXPECT_THROW(set_model_config_item(back, "use_revin", "maybe"), ConfigError);
}
