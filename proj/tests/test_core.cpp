#include <gtest/gtest.h>

#include <fstream>

#include "cbt/checkpoint.hpp"
#include "cbt/config.hpp"
#include "cbt/data.hpp"
#include "cbt/rng.hpp"
#include "cbt/types.hpp"
#include "support.hpp"

namespace cbt {
namespace {

TEST(Config, EmptyTextGivesDefaults) {
  const TrainConfig c = parse_config("");
  EXPECT_EQ(c, TrainConfig{});
  EXPECT_EQ(c.sigma, 1.0);
  EXPECT_EQ(c.lambda_adv, 1.0);
  EXPECT_EQ(c.lambda_cb, 1e-4);
}

TEST(Config, OverrideAndComments) {
  const TrainConfig c = parse_config("# ablation\nlambda_cb = 0\n  batch_size=4   # inline\n\nflip_augment = true\n");
  EXPECT_EQ(c.lambda_cb, 0.0);
  EXPECT_EQ(c.batch_size, 4);
  EXPECT_TRUE(c.flip_augment);
  EXPECT_EQ(c.sigma, 1.0);
}

TEST(Config, NegativeSigmaIsValidationError) {
  EXPECT_THROW(parse_config("sigma = -1"), ValidationError);
  EXPECT_THROW(parse_config("sigma = 0"), ValidationError);
}

TEST(Config, ParseErrorsNameKeyAndLine) {
  try {
    parse_config("sigma = 1\nbatch_size = eight\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.key(), "batch_size");
    EXPECT_EQ(e.line(), 2);
  }
  try {
    parse_config("\n\nno_such_key = 3\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.key(), "no_such_key");
    EXPECT_EQ(e.line(), 3);
  }
  EXPECT_THROW(parse_config("sigma 1"), ParseError);
  EXPECT_THROW(parse_config("= 1"), ParseError);
  EXPECT_THROW(parse_config("batch_size = 4x"), ParseError);
  EXPECT_THROW(parse_config("flip_augment = maybe"), ParseError);
}

TEST(Config, OutOfRangeValues) {
  EXPECT_THROW(parse_config("num_domains = 1"), ValidationError);
  EXPECT_THROW(parse_config("image_size = 24"), ValidationError);
  EXPECT_THROW(parse_config("ema_decay = 1"), ValidationError);
  EXPECT_THROW(parse_config("lambda_cb = -0.1"), ValidationError);
  EXPECT_THROW(parse_config("total_steps = -1"), ValidationError);
  EXPECT_THROW(parse_config("image_size = 8\ncontent_downsamples = 3"), ValidationError);
}

TEST(Config, TextRoundTripIsExact) {
  TrainConfig c = test::toy_config();
  c.sigma = 0.1 + 0.2;  // not exactly representable in short decimal
  c.lr_mapping = 1.0 / 3.0;
  c.flip_augment = true;
  EXPECT_EQ(parse_config(config_to_text(c)), c);
}

TEST(Config, EveryFieldHasAKey) {
  const auto keys = config_keys();
  EXPECT_EQ(keys.size(), 24u);
  const std::string text = config_to_text(TrainConfig{});
  for (auto k : keys) EXPECT_NE(text.find(std::string(k) + " = "), std::string::npos) << k;
}

TEST(Config, LoadFromFile) {
  test::TempDir dir("config");
  {
    std::ofstream(dir / "c.cfg") << "seed = 7\n";
  }
  EXPECT_EQ(load_config(dir / "c.cfg").seed, 7);
  EXPECT_THROW(load_config(dir / "missing.cfg"), IoError);
}

TEST(Rng, NamedStreamsAreIndependent) {
  RngStreams a(5), b(5);
  for (int i = 0; i < 100; ++i) a.content_noise().normal();
  EXPECT_EQ(a.data().uniform(), b.data().uniform());
  EXPECT_EQ(a.latent().normal(), b.latent().normal());
  EXPECT_NE(RngStream(5, "data").uniform(), RngStream(5, "latent").uniform());
  EXPECT_NE(RngStream(5, "data").uniform(), RngStream(6, "data").uniform());
}

TEST(Rng, SerializationResumesExactSequence) {
  RngStreams a(11);
  a.data().uniform();
  a.content_noise().normal();  // leaves a cached Box-Muller variate
  RngStreams b = RngStreams::deserialize(a.serialize());
  EXPECT_EQ(a, b);
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(a.content_noise().normal(), b.content_noise().normal());
    EXPECT_EQ(a.data().uniform_int(7), b.data().uniform_int(7));
  }
  EXPECT_THROW(RngStreams::deserialize("bogus 1 2 3\n"), IntegrityError);
  EXPECT_THROW(RngStreams::deserialize("data\n"), IntegrityError);
}

TEST(Types, NormalizationRoundTripsAllLevels) {
  for (int v = 0; v < 256; ++v) EXPECT_EQ(denormalize_pixel(normalize_pixel(static_cast<std::uint8_t>(v))), v);
  EXPECT_EQ(normalize_pixel(0), -1.0f);
  EXPECT_EQ(normalize_pixel(255), 1.0f);
}

TEST(Types, ImageValidation) {
  EXPECT_NO_THROW(Image(Tensor<float>(Shape{3, 4, 4}, 0.5f)));
  EXPECT_THROW(Image(Tensor<float>(Shape{2, 4, 4})), DimensionError);
  EXPECT_THROW(Image(Tensor<float>(Shape{4, 4})), DimensionError);
  EXPECT_THROW(Image(Tensor<float>(Shape{3, 4, 4}, 1.5f)), ValidationError);
  Tensor<float> t(Shape{3, 2, 2});
  t[3] = std::nanf("");
  EXPECT_THROW(Image{t}, ValidationError);
}

TEST(Types, DomainLabelRange) {
  EXPECT_EQ(DomainLabel::checked(1, 2).index, 1);
  EXPECT_THROW(DomainLabel::checked(2, 2), IndexError);
  EXPECT_THROW(DomainLabel::checked(-1, 2), IndexError);
}

Checkpoint sample_checkpoint() {
  const TrainConfig cfg = test::toy_config();
  Networks nets = test::make_networks(cfg, 3);
  Checkpoint c;
  c.config = cfg;
  c.parameters = nets.all_params();
  c.ema_parameters = c.parameters;
  for (auto& [_, t] : c.ema_parameters) t[0] += 0.25f;
  c.optimizer_state["adam.t.generator"] = Tensor<double>(Shape{1}, 100.0);
  c.optimizer_state["adam.m.x"] = Tensor<double>(Shape{2, 2}, std::vector<double>{0.1, -0.2, 1e-300, 3.0});
  RngStreams rng(9);
  rng.latent().normal();
  c.rng_state = rng.serialize();
  c.step = 100;
  return c;
}

TEST(Checkpoint, RoundTripIsExact) {
  test::TempDir dir("ckpt");
  const Checkpoint c = sample_checkpoint();
  save_checkpoint(c, dir / "sub/a.ckpt");
  const Checkpoint back = load_checkpoint(dir / "sub/a.ckpt");
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.step, 100);
  EXPECT_EQ(RngStreams::deserialize(back.rng_state), RngStreams::deserialize(c.rng_state));
  EXPECT_FALSE(std::filesystem::exists(dir / "sub/a.ckpt.tmp"));
}

TEST(Checkpoint, BumpedVersionIsUnsupported) {
  std::string bytes = serialize_checkpoint(sample_checkpoint());
  bytes[8] = 2;
  try {
    deserialize_checkpoint(bytes);
    FAIL() << "expected UnsupportedVersionError";
  } catch (const UnsupportedVersionError& e) {
    EXPECT_EQ(e.version(), 2u);
  }
}

TEST(Checkpoint, CorruptionIsDetected) {
  const std::string good = serialize_checkpoint(sample_checkpoint());
  for (std::size_t pos : {std::size_t{20}, good.size() / 2, good.size() - 1}) {
    std::string bad = good;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x5a);
    EXPECT_THROW(deserialize_checkpoint(bad), IntegrityError) << pos;
  }
  EXPECT_THROW(deserialize_checkpoint(good.substr(0, good.size() - 5)), IntegrityError);
  EXPECT_THROW(deserialize_checkpoint("short"), IntegrityError);
  std::string magic = good;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(magic), IntegrityError);
}

TEST(Checkpoint, RefusesNonFiniteOrMismatchedTables) {
  Checkpoint c = sample_checkpoint();
  c.parameters.begin()->second[0] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(serialize_checkpoint(c), NumericalError);
  c = sample_checkpoint();
  c.ema_parameters.erase(c.ema_parameters.begin());
  EXPECT_THROW(serialize_checkpoint(c), ValidationError);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

TEST(ShippedConfigs, ParseAndValidate) {
  const fs::path dir = fs::path(CBT_SOURCE_DIR) / "configs";
  EXPECT_EQ(load_config(dir / "default.cfg"), TrainConfig{});
  const TrainConfig desk = load_config(dir / "desk.cfg");
  EXPECT_EQ(desk.content_channels, 2);
  EXPECT_EQ(desk.lr_generator, 1e-3);
  EXPECT_EQ(desk.total_steps, 3000);
  EXPECT_EQ(load_config(dir / "toy.cfg").image_size, 8);
  const AggregationMap cub = load_aggregation(dir / "cub47_aggregation.txt");
  std::set<std::string> coarse;
  for (const auto& r : cub.rules) coarse.insert(r.coarse);
  EXPECT_EQ(coarse.size(), 47u);
}

}  // namespace
}  // namespace cbt
