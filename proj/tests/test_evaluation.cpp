#include <gtest/gtest.h>

#include "json.hpp"
#include <set>

#include "cbt/evaluation.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace cbt {
namespace {

using test::TempDir;

// Output = input; content code = the image itself.
class IdentityStub : public Translator {
 public:
  Image reference(const Image& x, const Image&, DomainLabel) const override { return x; }
  Image sampling(const Image& x, DomainLabel, const LatentCode&) const override { return x; }
  int latent_dim() const override { return 2; }
  ContentCode content(const Image& x) const override { return ContentCode{x.pixels()}; }
};

// Keeps the source's brightness and shape, takes the reference's hue.
class RecolorStub : public IdentityStub {
 public:
  Image reference(const Image& x, const Image& ref, DomainLabel) const override {
    const double hue = foreground_stats(ref).hue;
    Tensor<float> t = x.pixels();
    const std::size_t plane = t.size() / 3;
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = (std::max({t[i], t[plane + i], t[2 * plane + i]}) + 1.0) / 2.0;
      const auto rgb = hsv_to_rgb(hue, 1.0, v);
      for (std::size_t c = 0; c < 3; ++c) t[c * plane + i] = static_cast<float>(rgb[c] * 2.0 - 1.0);
    }
    return Image(std::move(t));
  }
};

// Content code = foreground area, which depends on the shape.
class AreaStub : public IdentityStub {
 public:
  ContentCode content(const Image& x) const override {
    Tensor<float> t(Shape{1});
    t[0] = static_cast<float>(foreground_stats(x).count);
    return ContentCode{std::move(t)};
  }
};

class ConstantStub : public IdentityStub {
 public:
  ContentCode content(const Image&) const override { return ContentCode{Tensor<float>(Shape{2}, 1.0f)}; }
};

class EvaluationTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("eval_data");
    SyntheticFactorSpec spec;
    spec.image_size = 16;
    spec.samples_per_domain = 14;
    spec.test_per_domain = 6;
    spec.seed = 5;
    manifest_ = new DatasetManifest(generate_synthetic(spec, dir_->path()).manifest);
  }
  static void TearDownTestSuite() {
    delete manifest_;
    delete dir_;
  }
  static const DatasetManifest& data() { return *manifest_; }
  static TrainConfig config16() {
    TrainConfig cfg = test::toy_config();
    cfg.image_size = 16;
    cfg.content_downsamples = 2;
    return cfg;
  }

 private:
  static inline TempDir* dir_ = nullptr;
  static inline DatasetManifest* manifest_ = nullptr;
};

TEST(Fid, GaussianOracle) {
  const auto o = test::fid_gaussian_oracle(100000, 0);
  EXPECT_GE(o.shifted, 15.5);
  EXPECT_LE(o.shifted, 16.5);
  EXPECT_LT(o.self, 1e-6);
  EXPECT_LT(o.asymmetry, 1e-6);
}

TEST(Fid, OneDimensionalClosedForm) {
  // For scalars FID = (m1 - m2)^2 + (s1 - s2)^2 with ML standard deviations.
  RngStream rng(1, "t");
  FeatureMatrix a(500, 1), b(300, 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, 0) = 1.0 + 2.0 * rng.normal();
  for (Eigen::Index i = 0; i < b.rows(); ++i) b(i, 0) = -0.5 + 0.7 * rng.normal();
  auto stats = [](const FeatureMatrix& m) {
    const double mu = m.mean();
    return std::pair{mu, std::sqrt((m.array() - mu).square().mean())};
  };
  const auto [ma, sa] = stats(a);
  const auto [mb, sb] = stats(b);
  EXPECT_NEAR(fid(a, b), (ma - mb) * (ma - mb) + (sa - sb) * (sa - sb), 1e-9);
}

TEST(Fid, DiagonalCovariancesClosedForm) {
  RngStream rng(2, "t");
  FeatureMatrix a(20000, 3), b(20000, 3);
  const double sa[3] = {1.0, 0.5, 2.0}, sb[3] = {0.3, 0.5, 1.0};
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (int j = 0; j < 3; ++j) {
      a(i, j) = sa[j] * rng.normal();
      b(i, j) = sb[j] * rng.normal();
    }
  double expect = 0;
  for (int j = 0; j < 3; ++j) expect += (sa[j] - sb[j]) * (sa[j] - sb[j]);
  EXPECT_NEAR(fid(a, b), expect, 0.05);
}

TEST(Fid, SelfSymmetryAndErrors) {
  RngStream rng(3, "t");
  FeatureMatrix a(40, 5), b(60, 5);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (int j = 0; j < 5; ++j) a(i, j) = std::exp(rng.normal());
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (int j = 0; j < 5; ++j) b(i, j) = rng.uniform() * j;
  EXPECT_LT(fid(a, a), 1e-6);
  EXPECT_NEAR(fid(a, b), fid(b, a), 1e-6);
  EXPECT_GT(fid(a, b), 0.0);
  FeatureMatrix degenerate(10, 5);
  degenerate.setOnes();
  EXPECT_THROW(fid(a, degenerate, FidOptions{false}), NumericalError);
  EXPECT_NO_THROW(fid(a, degenerate));
  EXPECT_THROW(fid(a, FeatureMatrix(10, 4)), DimensionError);
  EXPECT_THROW(fid(a, FeatureMatrix(1, 5)), ArityError);
}

TEST(Fid, InvariantToSampleDuplication) {
  RngStream rng(4, "t");
  FeatureMatrix a(30, 2), b(30, 2);
  for (Eigen::Index i = 0; i < 30; ++i)
    for (int j = 0; j < 2; ++j) {
      a(i, j) = rng.normal();
      b(i, j) = rng.normal() + j;
    }
  FeatureMatrix twice(60, 2);
  twice << a, a;
  EXPECT_NEAR(fid(twice, b), fid(a, b), 1e-9);
}

TEST(Extractor, DeterministicFixedDimension) {
  RandomConvExtractor fx(0), same(0), other(1);
  RngStream rng(5, "t");
  const auto imgs = test::random_images(2, 32, rng);
  EXPECT_EQ(fx.vector(imgs[0]).size(), 112u);
  EXPECT_EQ(fx.vector(imgs[0]), same.vector(imgs[0]));
  EXPECT_NE(fx.vector(imgs[0]), other.vector(imgs[0]));
  EXPECT_EQ(fx.vector(imgs[1]).size(), 112u);
  EXPECT_EQ(PixelExtractor().vector(imgs[0]).size(), 3u);
  EXPECT_THROW(make_extractor("inception"), ValidationError);
}

TEST(Lpips, BruteForceOracle) {
  const RandomConvExtractor fx(0);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto o = test::lpips_oracle(5, seed, fx);
    EXPECT_NEAR(o.library, o.brute_force, 1e-6);
    EXPECT_EQ(o.identical, 0.0);
    EXPECT_GT(o.library, 0.0);
  }
  const auto three = test::lpips_oracle(3, 9, PixelExtractor(), 16);
  EXPECT_NEAR(three.library, three.brute_force, 1e-6);
}

TEST(Lpips, PermutationInvarianceAndArity) {
  const RandomConvExtractor fx(0);
  RngStream rng(6, "t");
  auto imgs = test::random_images(6, 16, rng);
  const double base = lpips_diversity(imgs, fx);
  for (int k = 0; k < 5; ++k) {
    std::shuffle(imgs.begin(), imgs.end(), rng.engine());
    EXPECT_EQ(lpips_diversity(imgs, fx), base);
  }
  EXPECT_THROW(lpips_diversity(std::span<const Image>(imgs.data(), 1), fx), ArityError);
  EXPECT_EQ(perceptual_distance(imgs[0], imgs[1], fx), perceptual_distance(imgs[1], imgs[0], fx));
  EXPECT_EQ(perceptual_distance(imgs[2], imgs[2], fx), 0.0);
}

TEST(Probe, NoiseFeaturesGiveChance) {
  RngStream rng(7, "t");
  const int n = 400, d = 6;
  FeatureMatrix tr(n, d), te(n, d);
  std::vector<int> ytr(n), yte(n);
  for (int i = 0; i < n; ++i) {
    ytr[i] = rng.uniform_int(2);
    yte[i] = rng.uniform_int(2);
    for (int j = 0; j < d; ++j) {
      tr(i, j) = rng.normal();
      te(i, j) = rng.normal();
    }
  }
  const ProbeResult r = probe_accuracy(tr, ytr, te, yte, 2);
  EXPECT_EQ(r.chance, 0.5);
  EXPECT_LT(std::abs(r.accuracy - 0.5), 3 * std::sqrt(0.25 / n));
}

TEST(Probe, OneHotFeaturesAreSeparable) {
  const int n = 60, k = 3;
  FeatureMatrix tr = FeatureMatrix::Zero(n, k), te = FeatureMatrix::Zero(n, k);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) {
    y[i] = i % k;
    tr(i, y[i]) = 1.0;
    te(i, y[i]) = 1.0;
  }
  EXPECT_EQ(probe_accuracy(tr, y, te, y, k).accuracy, 1.0);
}

TEST(Probe, ShuffledLabelsGiveChance) {
  RngStream rng(8, "t");
  const int n = 400;
  FeatureMatrix tr(n, 2), te(n, 2);
  std::vector<int> ytr(n), yte(n);
  for (int i = 0; i < n; ++i) {
    const int a = rng.uniform_int(2), b = rng.uniform_int(2);
    tr(i, 0) = a + 0.1 * rng.normal();
    tr(i, 1) = rng.normal();
    te(i, 0) = b + 0.1 * rng.normal();
    te(i, 1) = rng.normal();
    ytr[i] = rng.uniform_int(2);  // labels unrelated to the informative feature
    yte[i] = rng.uniform_int(2);
  }
  EXPECT_LT(std::abs(probe_accuracy(tr, ytr, te, yte, 2).accuracy - 0.5), 3 * std::sqrt(0.25 / n));
}

TEST(Probe, Errors) {
  FeatureMatrix f = FeatureMatrix::Zero(4, 2);
  const std::vector<int> y{0, 1, 0, 1};
  EXPECT_THROW(probe_accuracy(f, y, f, y, 1), ValidationError);
  EXPECT_THROW(probe_accuracy(f, y, FeatureMatrix::Zero(4, 3), y, 2), DimensionError);
  EXPECT_THROW(probe_accuracy(f, std::vector<int>{0}, f, y, 2), DimensionError);
}

TEST_F(EvaluationTest, LeakageProbeOnManifests) {
  // Foreground area tells circles from squares, hence the domain.
  EXPECT_GE(leakage_probe(AreaStub(), data(), 16).accuracy, 0.9);
  const ProbeResult none = leakage_probe(ConstantStub(), data(), 16);
  EXPECT_EQ(none.accuracy, 0.5);
  EXPECT_EQ(none.chance, 0.5);
  DatasetManifest single = data();
  single.domains.resize(1);
  EXPECT_THROW(leakage_probe(IdentityStub(), single, 16), ValidationError);
}

TEST_F(EvaluationTest, TranslationsAreDeterministic) {
  const TrainConfig cfg = config16();
  const Networks nets = test::make_networks(cfg, 1);
  RngStream rng(9, "t");
  const auto imgs = test::random_images(2, 16, rng);
  EXPECT_EQ(translate_reference(nets, imgs[0], imgs[1], {1}), translate_reference(nets, imgs[0], imgs[1], {1}));
  const LatentCode z = sample_latent(static_cast<int>(cfg.latent_dim), rng);
  EXPECT_EQ(translate_sampling(nets, imgs[0], {0}, z), translate_sampling(nets, imgs[0], {0}, z));
  EXPECT_NO_THROW(translate_reference(nets, imgs[0], imgs[0], {0}));
  EXPECT_NO_THROW(translate_sampling(nets, imgs[0], {0}, LatentCode{Tensor<float>(Shape{3})}));
  EXPECT_THROW(translate_reference(nets, imgs[0], imgs[1], {2}), IndexError);
  EXPECT_THROW(translate_sampling(nets, imgs[0], {-1}, z), IndexError);
  std::set<std::vector<float>> distinct;
  for (int k = 0; k < 10; ++k)
    distinct.insert(translate_sampling(nets, imgs[0], {1}, sample_latent(3, rng)).pixels().vec());
  EXPECT_GE(distinct.size(), 2u);
}

TEST_F(EvaluationTest, EmaNetworksComeFromCheckpoint) {
  const TrainConfig cfg = config16();
  Checkpoint c;
  c.config = cfg;
  c.parameters = test::make_networks(cfg, 1).all_params();
  c.ema_parameters = test::make_networks(cfg, 2).all_params();
  EXPECT_EQ(ema_networks(c).all_params(), c.ema_parameters);
}

TEST_F(EvaluationTest, ReportCellsAndArity) {
  const PixelExtractor fx;
  const NetworkTranslator model(test::make_networks(config16(), 3));
  EvalConfig cfg;
  cfg.image_size = 16;
  cfg.num_repeats = 3;
  cfg.max_inputs_per_domain = 2;
  const MetricsReport r = run_evaluation(model, data(), cfg, fx);
  ASSERT_EQ(r.cells.size(), 4u);
  for (const auto& c : r.cells) {
    EXPECT_NE(c.source, c.target);
    ASSERT_TRUE(c.lpips_diversity.has_value());
    EXPECT_GE(*c.lpips_diversity, 0.0);
    EXPECT_GE(c.fid, 0.0);
    EXPECT_EQ(c.num_inputs, 2);
  }
  EXPECT_NE(r.find(0, 1, Strategy::sampling), nullptr);
  EXPECT_EQ(r.find(0, 0, Strategy::sampling), nullptr);

  cfg.num_repeats = 1;
  for (const auto& c : run_evaluation(model, data(), cfg, fx).cells) EXPECT_FALSE(c.lpips_diversity.has_value());
  cfg.include_same_domain = true;
  EXPECT_EQ(run_evaluation(model, data(), cfg, fx).cells.size(), 8u);
}

TEST_F(EvaluationTest, SameSeedSameReport) {
  const PixelExtractor fx;
  const NetworkTranslator model(test::make_networks(config16(), 4));
  EvalConfig cfg;
  cfg.image_size = 16;
  cfg.num_repeats = 2;
  cfg.max_inputs_per_domain = 2;
  cfg.seed = 11;
  const std::string a = metrics_to_jsonl(run_evaluation(model, data(), cfg, fx));
  EXPECT_EQ(a, metrics_to_jsonl(run_evaluation(model, data(), cfg, fx)));
  cfg.seed = 12;
  EXPECT_NE(a, metrics_to_jsonl(run_evaluation(model, data(), cfg, fx)));
}

TEST_F(EvaluationTest, IdentityStubFidEqualsDirectFid) {
  const RandomConvExtractor fx(0);
  EvalConfig cfg;
  cfg.image_size = 16;
  cfg.num_repeats = 3;
  const MetricsReport r = run_evaluation(IdentityStub(), data(), cfg, fx);
  for (int s = 0; s < 2; ++s) {
    std::vector<Image> src, tgt;
    for (int i : data().indices(Split::test, s)) src.push_back(load_image(data().root / data().entries[i].path, 16));
    for (int i : data().indices(Split::test, 1 - s)) tgt.push_back(load_image(data().root / data().entries[i].path, 16));
    const double direct = fid(feature_matrix(src, fx), feature_matrix(tgt, fx));
    for (Strategy st : {Strategy::reference, Strategy::sampling}) {
      EXPECT_NEAR(r.find(s, 1 - s, st)->fid, direct, 1e-6 * std::max(1.0, direct));
      EXPECT_EQ(*r.find(s, 1 - s, st)->lpips_diversity, 0.0);
    }
  }
}

TEST_F(EvaluationTest, ReportSerialisation) {
  MetricsReport r;
  r.domains = {"d0_circle", "d1_square"};
  r.cells = {{0, 1, Strategy::reference, 0.25, 3.5, 6}, {1, 0, Strategy::sampling, std::nullopt, 1.0, 6}};
  r.leakage = ProbeResult{0.75, 0.5};
  r.checkpoint_id = "step_10.ckpt";
  r.extractor = "pixels";
  r.num_repeats = 10;
  std::vector<nlohmann::json> lines;
  std::istringstream in(metrics_to_jsonl(r));
  for (std::string l; std::getline(in, l);) lines.push_back(nlohmann::json::parse(l));
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0]["record"], "header");
  EXPECT_EQ(lines[0]["checkpoint"], "step_10.ckpt");
  EXPECT_EQ(lines[1]["source"], "d0_circle");
  EXPECT_EQ(lines[1]["lpips_diversity"], 0.25);
  EXPECT_TRUE(lines[2]["lpips_diversity"].is_null());
  EXPECT_EQ(lines[3]["accuracy"], 0.75);
  const std::string table = metrics_table(r);
  EXPECT_NE(table.find("d0_circle -> d1_square"), std::string::npos);
  EXPECT_NE(table.find("n/a"), std::string::npos);
  EXPECT_NE(table.find("0.7500"), std::string::npos);
}

TEST_F(EvaluationTest, TransferCheckSeparatesStubs) {
  const TransferCheck good = style_transfer_check(RecolorStub(), data(), 16, 40, 0);
  EXPECT_GT(good.pairs, 20);
  EXPECT_GE(good.pass_rate(), 0.9);
  EXPECT_LT(good.median_centroid_error, 0.5);
  const TransferCheck none = style_transfer_check(IdentityStub(), data(), 16, 40, 0);
  EXPECT_EQ(none.passed, 0);
  EXPECT_GT(none.median_hue_error, 0.3);
}

TEST_F(EvaluationTest, GridLayout) {
  RngStream rng(10, "t");
  const auto contents = test::random_images(3, 16, rng);
  const auto styles = test::random_images(2, 16, rng);
  const std::vector<int> labels{0, 1};
  const Image g = translation_grid(IdentityStub(), contents, styles, labels);
  EXPECT_EQ(g.pixels().shape(), (Shape{3, 48, 64}));
  EXPECT_EQ(g.pixels()[0], -1.0f);
  EXPECT_EQ(g.pixels()[16], contents[0].pixels()[0]);
  EXPECT_EQ(g.pixels()[16 * 64], styles[0].pixels()[0]);
  EXPECT_EQ(g.pixels()[16 * 64 + 32], contents[1].pixels()[0]);
  EXPECT_THROW(translation_grid(IdentityStub(), contents, styles, std::vector<int>{0}), DimensionError);
}

}  // namespace
}  // namespace cbt
