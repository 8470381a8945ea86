#include <gtest/gtest.h>

#include <opencv2/imgcodecs.hpp>

#include <fstream>
#include <set>

#include "cbt/data.hpp"
#include "support.hpp"

namespace cbt {
namespace {

using test::TempDir;

void write_solid(const fs::path& p, int size, cv::Scalar bgr) {
  fs::create_directories(p.parent_path());
  cv::imwrite(p.string(), cv::Mat(size, size, CV_8UC3, bgr));
}

void make_tree(const fs::path& root, const std::vector<std::string>& domains, int files) {
  for (const auto& d : domains)
    for (int i = 0; i < files; ++i) write_solid(root / d / ("f" + std::to_string(i) + ".png"), 4, cv::Scalar(i * 10, 0, 0));
}

TEST(Scan, CountsAndSplit) {
  TempDir dir("scan");
  make_tree(dir.path(), {"c", "a", "b"}, 10);
  const DatasetManifest m = scan_dataset(dir.path(), 2);
  EXPECT_EQ(m.domains, (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(m.indices(Split::train).size(), 24u);
  EXPECT_EQ(m.indices(Split::test).size(), 6u);
  for (int d = 0; d < 3; ++d) {
    const auto test_idx = m.indices(Split::test, d);
    ASSERT_EQ(test_idx.size(), 2u);
    // Lexicographic order: f0, f1, f2, ..., f8, f9.
    EXPECT_EQ(fs::path(m.entries[test_idx[0]].path).filename(), "f8.png");
    EXPECT_EQ(fs::path(m.entries[test_idx[1]].path).filename(), "f9.png");
  }
  EXPECT_EQ(m, scan_dataset(dir.path(), 2));
  EXPECT_EQ(scan_dataset(dir.path(), 0).indices(Split::test).size(), 0u);
}

TEST(Scan, Errors) {
  TempDir dir("scan_err");
  make_tree(dir.path(), {"a"}, 2);
  fs::create_directories(dir / "empty");
  EXPECT_THROW(scan_dataset(dir.path(), 0), DatasetError);
  fs::remove(dir / "empty");
  EXPECT_THROW(scan_dataset(dir.path(), 2), DatasetError);
  EXPECT_THROW(scan_dataset(dir.path(), -1), ValidationError);
  EXPECT_THROW(scan_dataset(dir / "missing", 0), DatasetError);
  std::ofstream(dir / "a" / "zz.png") << "not an image";
  try {
    scan_dataset(dir.path(), 0);
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("zz.png"), std::string::npos);
  }
}

TEST(Aggregation, GullsAndWoodpeckers) {
  TempDir dir("agg");
  make_tree(dir.path(), {"059.California_Gull", "062.Herring_Gull", "187.American_Three_toed_Woodpecker",
                         "188.Pileated_Woodpecker"},
            3);
  const DatasetManifest fine = scan_dataset(dir.path(), 1);
  const AggregationMap map = parse_aggregation("# coarse birds\n*Gull* -> Gull\n*Woodpecker* -> Woodpecker\n");
  ASSERT_EQ(map.rules.size(), 2u);
  const DatasetManifest coarse = apply_aggregation(fine, map);
  EXPECT_EQ(coarse.domains, (std::vector<std::string>{"Gull", "Woodpecker"}));
  ASSERT_EQ(coarse.entries.size(), fine.entries.size());
  for (std::size_t i = 0; i < fine.entries.size(); ++i) {
    EXPECT_EQ(coarse.entries[i].path, fine.entries[i].path);
    EXPECT_EQ(coarse.entries[i].split, fine.entries[i].split);
    EXPECT_EQ(coarse.entries[i].label.index, fine.entries[i].label.index < 2 ? 0 : 1);
  }
}

TEST(Aggregation, IdentityAndFirstMatchWins) {
  DatasetManifest m;
  m.domains = {"alpha", "beta"};
  m.entries = {{"alpha/1.png", {0}, Split::train}, {"beta/1.png", {1}, Split::test}};
  EXPECT_EQ(apply_aggregation(m, parse_aggregation("alpha -> alpha\nbeta -> beta\n")), m);
  const auto both = apply_aggregation(m, parse_aggregation("*a* -> first\n* -> second\n"));
  EXPECT_EQ(both.domains, (std::vector<std::string>{"first"}));
}

TEST(Aggregation, UnmatchedLabelIsNamed) {
  DatasetManifest m;
  m.domains = {"Gull_x", "Sparrow_y"};
  m.entries = {{"a", {0}, Split::train}, {"b", {1}, Split::train}};
  try {
    apply_aggregation(m, parse_aggregation("*Gull* -> Gull"));
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("Sparrow_y"), std::string::npos);
  }
  EXPECT_THROW(parse_aggregation("no arrow here"), ParseError);
  EXPECT_THROW(parse_aggregation(" -> x"), ParseError);
}

TEST(Aggregation, GlobMatching) {
  EXPECT_TRUE(glob_match("*", ""));
  EXPECT_TRUE(glob_match("a*c", "abbbc"));
  EXPECT_TRUE(glob_match("*Gull*", "059.California_Gull"));
  EXPECT_FALSE(glob_match("a*c", "abcd"));
  EXPECT_FALSE(glob_match("abc", "ab"));
  EXPECT_TRUE(glob_match("a**b", "ab"));
}

TEST(LoadBatch, NormalizationEndpoints) {
  TempDir dir("batch");
  write_solid(dir / "d0" / "black.png", 6, cv::Scalar(0, 0, 0));
  write_solid(dir / "d1" / "white.png", 6, cv::Scalar(255, 255, 255));
  const DatasetManifest m = scan_dataset(dir.path(), 0);
  const std::vector<int> idx{0, 1};
  const Batch b = load_batch(m, idx, 4);
  EXPECT_EQ(b.images.shape(), (Shape{2, 3, 4, 4}));
  EXPECT_EQ(b.labels, (std::vector<int>{0, 1}));
  for (std::size_t i = 0; i < 48; ++i) EXPECT_EQ(b.images[i], -1.0f);
  for (std::size_t i = 48; i < 96; ++i) EXPECT_EQ(b.images[i], 1.0f);
  EXPECT_EQ(load_batch(m, idx, 4).images, b.images);
  const std::vector<int> bad{2};
  EXPECT_THROW(load_batch(m, bad, 4), IndexError);
}

TEST(LoadBatch, ChannelOrderIsRgb) {
  TempDir dir("rgb");
  write_solid(dir / "d" / "red.png", 4, cv::Scalar(0, 0, 255));
  const Image img = load_image(dir / "d" / "red.png", 4);
  EXPECT_EQ(img.pixels()[0], 1.0f);
  EXPECT_EQ(img.pixels()[16], -1.0f);
  EXPECT_EQ(img.pixels()[32], -1.0f);
}

TEST(LoadBatch, FlipDrawsOnlyForTrainEntries) {
  TempDir dir("flip");
  cv::Mat half(4, 4, CV_8UC3, cv::Scalar(0, 0, 0));
  half(cv::Rect(0, 0, 2, 4)).setTo(cv::Scalar(255, 255, 255));
  fs::create_directories(dir / "d");
  for (int i = 0; i < 3; ++i) cv::imwrite((dir / "d" / ("f" + std::to_string(i) + ".png")).string(), half);
  const DatasetManifest m = scan_dataset(dir.path(), 1);
  const std::vector<int> test_only{2};
  RngStream a(0, "data"), b(0, "data");
  for (int k = 0; k < 20; ++k) EXPECT_EQ(load_batch(m, test_only, 4, &a).images[0], 1.0f);
  EXPECT_EQ(a, b);
  const std::vector<int> train{0};
  int flipped = 0;
  for (int k = 0; k < 200; ++k) flipped += load_batch(m, train, 4, &a).images[0] == -1.0f;
  EXPECT_GT(flipped, 60);
  EXPECT_LT(flipped, 140);
}

TEST(Hue, DistanceIsCircular) {
  EXPECT_NEAR(hue_distance(0.05, 0.95), 0.1, 1e-12);
  EXPECT_NEAR(hue_distance(0.2, 0.7), 0.5, 1e-12);
  EXPECT_EQ(hue_distance(0.3, 0.3), 0.0);
  EXPECT_NEAR(rgb_to_hue(1, 0, 0), 0.0, 1e-12);
  EXPECT_NEAR(rgb_to_hue(0, 1, 0), 1.0 / 3, 1e-12);
  EXPECT_NEAR(rgb_to_hue(0, 0, 1), 2.0 / 3, 1e-12);
  for (double h : {0.0, 0.1, 0.45, 0.8, 0.99}) {
    const auto rgb = hsv_to_rgb(h, 1.0, 0.8);
    EXPECT_LT(hue_distance(rgb_to_hue(rgb[0], rgb[1], rgb[2]), h), 1e-9) << h;
  }
}

TEST(Synthetic, CentredCircleCentroid) {
  FactorRecord f;
  f.pos_x = f.pos_y = 0.5;
  f.hue = 0.6;
  for (Texture t : {Texture::low, Texture::mid, Texture::high}) {
    f.texture = t;
    const ForegroundStats s = foreground_stats(render_shape(ShapeKind::circle, f, 32));
    EXPECT_NEAR(s.centroid_x, 16.0, 1.0);
    EXPECT_NEAR(s.centroid_y, 16.0, 1.0);
    EXPECT_LT(hue_distance(s.hue, 0.6), 0.02);
  }
}

TEST(Synthetic, EmptySpecGivesEmptyLedger) {
  TempDir dir("syn_empty");
  SyntheticFactorSpec spec;
  spec.samples_per_domain = 0;
  const SyntheticDataset ds = generate_synthetic(spec, dir.path());
  EXPECT_TRUE(ds.ledger.empty());
  EXPECT_TRUE(ds.manifest.entries.empty());
  EXPECT_TRUE(read_factor_ledger(dir / kFactorLedgerName).empty());
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(Synthetic, DeterministicAndGroundTruthRecoverable) {
  TempDir a("syn_a"), b("syn_b");
  SyntheticFactorSpec spec;
  spec.num_domains = 3;
  spec.samples_per_domain = 40;
  spec.seed = 7;
  spec.test_per_domain = 5;
  const SyntheticDataset da = generate_synthetic(spec, a.path());
  generate_synthetic(spec, b.path());
  EXPECT_EQ(file_bytes(a / kFactorLedgerName), file_bytes(b / kFactorLedgerName));
  for (const auto& f : da.ledger) ASSERT_EQ(file_bytes(a / f.filename), file_bytes(b / f.filename)) << f.filename;

  EXPECT_EQ(read_factor_ledger(a / kFactorLedgerName), da.ledger);
  const DatasetManifest scanned = scan_dataset(a.path(), spec.test_per_domain);
  EXPECT_EQ(scanned.entries, da.manifest.entries);
  EXPECT_EQ(scanned.domains, da.manifest.domains);

  std::set<Texture> textures;
  for (const auto& f : da.ledger) {
    const ForegroundStats s = foreground_stats(load_image(a / f.filename, spec.image_size));
    EXPECT_LT(std::hypot(s.centroid_x - f.pos_x * 32, s.centroid_y - f.pos_y * 32), 1.0) << f.filename;
    EXPECT_LT(hue_distance(s.hue, f.hue), 0.02) << f.filename;
    EXPECT_GE(f.pos_x, 0.2);
    EXPECT_LE(f.pos_x, 0.8);
    EXPECT_GE(f.rotation, 0.0);
    EXPECT_LT(f.rotation, 2 * std::numbers::pi);
    textures.insert(f.texture);
  }
  EXPECT_EQ(textures.size(), 3u);
}

TEST(Synthetic, RejectsInvalidSpec) {
  TempDir dir("syn_bad");
  SyntheticFactorSpec spec;
  spec.samples_per_domain = 3;
  spec.test_per_domain = 3;
  EXPECT_THROW(generate_synthetic(spec, dir.path()), ValidationError);
  spec.test_per_domain = 0;
  spec.image_size = 4;
  EXPECT_THROW(generate_synthetic(spec, dir.path()), ValidationError);
}

}  // namespace
}  // namespace cbt
