#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>
#include <sstream>

#include "fer/fer_data.hpp"
#include "support/synthetic.hpp"

using namespace fer;
namespace fs = std::filesystem;

namespace {

std::string row(int label, std::size_t pixels, const std::string& usage, int value = 7) {
  std::string s = std::to_string(label) + ",";
  for (std::size_t i = 0; i < pixels; ++i) {
    if (i) s += ' ';
    s += std::to_string(value);
  }
  return s + "," + usage + "\n";
}

const std::string kHeader = "emotion,pixels,Usage\n";

Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_fer_csv(in, "mem.csv");
}

std::string parse_error(const std::string& text) {
  try {
    parse(text);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() /
         (std::string("fer_data_") + ::testing::UnitTest::GetInstance()->current_test_info()->name() + name);
}

}  // namespace

TEST(ParseCsv, ParsesRows) {
  const auto d = parse(kHeader + row(3, 2304, "Training", 0) + row(6, 2304, "PrivateTest", 255) +
                       row(0, 2304, "PublicTest", 128));
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d.examples[0].label, 3);
  EXPECT_EQ(d.examples[0].usage, Usage::training);
  EXPECT_EQ(d.examples[1].pixels[2303], 255);
  EXPECT_EQ(d.examples[2].usage, Usage::public_test);
  EXPECT_EQ(d.examples[2].pixels[0], 128);
  EXPECT_EQ(example_id(d.examples[1]), "PrivateTest:1");
  EXPECT_EQ(d.class_counts(), (std::array<std::size_t, 7>{1, 0, 0, 1, 0, 0, 1}));
}

TEST(ParseCsv, QuotedPixelsAndCrlf) {
  std::string r = row(2, 2304, "Training", 9);
  const auto c1 = r.find(','), c2 = r.rfind(',');
  r.insert(c2, "\"");
  r.insert(c1 + 1, "\"");
  r.insert(r.size() - 1, "\r");
  const auto d = parse(kHeader + r);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.examples[0].pixels[100], 9);
}

TEST(ParseCsv, HeaderOnlyIsEmpty) {
  EXPECT_TRUE(parse(kHeader).empty());
}

TEST(ParseCsv, ErrorsAreRowAddressed) {
  const std::string good = row(1, 2304, "Training");
  std::string msg = parse_error(kHeader + good + row(1, 2303, "Training"));
  EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("2303"), std::string::npos) << msg;

  msg = parse_error(kHeader + row(7, 2304, "Training"));
  EXPECT_NE(msg.find("row 1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("label 7"), std::string::npos) << msg;

  msg = parse_error(kHeader + good + good + row(1, 2304, "Validation"));
  EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("Validation"), std::string::npos) << msg;

  std::string bad_px = good;
  bad_px.replace(bad_px.find(" 7 "), 3, " x7 ");
  msg = parse_error(kHeader + bad_px);
  EXPECT_NE(msg.find("non-integer pixel 'x7'"), std::string::npos) << msg;

  msg = parse_error(kHeader + row(1, 2304, "Training", 256));
  EXPECT_NE(msg.find("256"), std::string::npos) << msg;

  EXPECT_NE(parse_error(kHeader + "a" + good).find("row 1"), std::string::npos);
  EXPECT_NE(parse_error("label,pixels,usage\n" + good).find("header"), std::string::npos);
  EXPECT_NE(parse_error("").find("missing header"), std::string::npos);
}

TEST(ParseCsv, MissingFileIsIoError) {
  EXPECT_THROW(parse_fer_csv(fs::path("/nonexistent/fer2013.csv")), IoError);
}

TEST(ParseCsv, RenderRoundTrip) {
  const Dataset d = oracle::synthetic_fer(2, 1, 1, 3);
  std::ostringstream out;
  write_fer_csv(d, out);
  const Dataset back = parse(out.str());
  EXPECT_EQ(back.examples, d.examples);
  std::ostringstream again;
  write_fer_csv(back, again);
  EXPECT_EQ(again.str(), out.str());
  EXPECT_EQ(parse(again.str()).digest, back.digest);
}

TEST(ParseCsv, DigestTracksContent) {
  const auto a = parse(kHeader + row(1, 2304, "Training", 1));
  const auto b = parse(kHeader + row(1, 2304, "Training", 2));
  EXPECT_NE(a.digest, b.digest);
  EXPECT_EQ(a.digest, parse(kHeader + row(1, 2304, "Training", 1)).digest);
}

TEST(Splits, PartitionByUsage) {
  const Dataset d = oracle::synthetic_fer(3, 2, 1, 4);
  const auto s = split_by_usage(d);
  EXPECT_EQ(s.train.size(), 21u);
  EXPECT_EQ(s.val.size(), 14u);
  EXPECT_EQ(s.test.size(), 7u);
  EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), d.size());
  for (const auto& e : s.val.examples) EXPECT_EQ(e.usage, Usage::public_test);
  EXPECT_EQ(select_split(d, Usage::private_test).examples, s.test.examples);
}

TEST(Splits, OnlyTrainingRows) {
  const auto s = split_by_usage(oracle::synthetic_dataset(oracle::uniform_counts(2), Usage::training, 1));
  EXPECT_EQ(s.train.size(), 14u);
  EXPECT_TRUE(s.val.empty());
  EXPECT_TRUE(s.test.empty());
}

TEST(Splits, SplitNames) {
  EXPECT_EQ(usage_from_split("train"), Usage::training);
  EXPECT_EQ(usage_from_split("val"), Usage::public_test);
  EXPECT_EQ(usage_from_split("test"), Usage::private_test);
  EXPECT_THROW(usage_from_split("dev"), ConfigError);
}

TEST(Canonical, PublishedDistribution) {
  EXPECT_EQ(std::accumulate(kCanonicalClassCounts.begin(), kCanonicalClassCounts.end(), std::size_t{0}),
            kCanonicalTotal);
  EXPECT_EQ(kCanonicalSplitSizes[0] + kCanonicalSplitSizes[1] + kCanonicalSplitSizes[2], kCanonicalTotal);
}

TEST(Canonical, WarningsForSubsets) {
  const Dataset d = oracle::synthetic_fer(1, 1, 1, 4);
  const auto w = canonical_count_warnings(d);
  EXPECT_EQ(w.size(), 1u + 7u + 3u);
  EXPECT_NE(w.front().find("21"), std::string::npos);
}

TEST(Subsets, SampleAndBalanced) {
  const Dataset d = oracle::synthetic_dataset({9, 2, 5, 5, 5, 5, 5}, Usage::training, 5);
  const auto s = sample_subset(d, 10, 1);
  EXPECT_EQ(s.size(), 10u);
  EXPECT_EQ(s.examples, sample_subset(d, 10, 1).examples);
  EXPECT_NE(s.examples, sample_subset(d, 10, 2).examples);
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LT(s.examples[i - 1].row, s.examples[i].row);
  EXPECT_EQ(sample_subset(d, 1000, 1).size(), d.size());

  const auto b = balanced_subset(d, 3, 7);
  EXPECT_EQ(b.class_counts(), (std::array<std::size_t, 7>{3, 2, 3, 3, 3, 3, 3}));
}

TEST(Normalize, Definition) {
  Example e;
  const auto zero = normalize<double>(e);
  EXPECT_EQ(zero.shape(), (Extents{1, 48, 48}));
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
  e.pixels.fill(255);
  const auto ones = normalize<double>(e);
  for (double v : ones.data()) EXPECT_EQ(v, 1.0);
  e.pixels[0] = 128;
  EXPECT_NEAR(normalize<double>(e)[0], 0.50196, 1e-5);
  EXPECT_EQ(normalize<double>(e)[0], 128.0 / 255.0);
}

TEST(Normalize, DenormalizeInvertsOnTheIntensityGrid) {
  Example e;
  for (std::size_t i = 0; i < kPixels; ++i) e.pixels[i] = static_cast<std::uint8_t>(i % 256);
  EXPECT_EQ(denormalize(normalize<float>(e)), e.pixels);
  EXPECT_EQ(denormalize(normalize<double>(e)), e.pixels);
}

TEST(Normalize, BatchMatchesPerExampleAndFlips) {
  const Dataset d = oracle::synthetic_dataset(oracle::uniform_counts(1), Usage::training, 2);
  const std::vector<std::size_t> idx = {3, 0};
  const std::vector<std::uint8_t> flip = {0, 1};
  const auto b = make_batch<double>(d, idx, flip);
  EXPECT_EQ(b.shape(), (Extents{2, 1, 48, 48}));
  const auto a3 = normalize<double>(d.examples[3]), a0 = normalize<double>(d.examples[0]);
  for (std::size_t y = 0; y < 48; ++y)
    for (std::size_t x = 0; x < 48; ++x) {
      EXPECT_EQ(b(0, 0, y, x), a3(0, y, x));
      EXPECT_EQ(b(1, 0, y, x), a0(0, y, 47 - x));
    }
}

TEST(Resize, ConstantImageStaysConstant) {
  const auto out = resize_bilinear(Tensor<double>({1, 48, 48}, 0.3), 197, 197);
  EXPECT_EQ(out.shape(), (Extents{1, 197, 197}));
  for (double v : out.data()) EXPECT_NEAR(v, 0.3, 1e-15);
}

TEST(Resize, HandComputedMidpoint) {
  const auto img = tensor_from<double>({1, 2, 2}, {0, 1, 1, 0});
  const auto out = resize_bilinear(img, 3, 3);
  EXPECT_EQ(out(0, 1, 1), 0.5);
  EXPECT_EQ(out(0, 0, 0), 0.0);
  EXPECT_EQ(out(0, 0, 2), 1.0);
  EXPECT_EQ(out(0, 2, 0), 1.0);
  EXPECT_EQ(out(0, 2, 2), 0.0);
  EXPECT_EQ(out(0, 0, 1), 0.5);
  EXPECT_EQ(out(0, 1, 0), 0.5);
}

TEST(Resize, CornersMapToCornersAndValuesStayInRange) {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor<double> img({1, 48, 48});
    for (auto& v : img.data()) v = uniform01(rng);
    const auto out = resize_bilinear(img, 197, 197);
    const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
    for (double v : out.data()) {
      ASSERT_GE(v, *lo);
      ASSERT_LE(v, *hi);
    }
    EXPECT_EQ(out(0, 0, 0), img(0, 0, 0));
    EXPECT_EQ(out(0, 196, 196), img(0, 47, 47));
    EXPECT_EQ(out(0, 0, 196), img(0, 0, 47));
  }
}

TEST(Resize, IdentitySize) {
  Rng rng(1);
  Tensor<double> img({2, 5, 7});
  for (auto& v : img.data()) v = uniform01(rng);
  EXPECT_EQ(resize_bilinear(img, 5, 7), img);
}

TEST(Replicate, Channels) {
  Rng rng(3);
  Tensor<double> img({1, 4, 5});
  for (auto& v : img.data()) v = uniform01(rng);
  const auto rgb = replicate_channels(img);
  EXPECT_EQ(rgb.shape(), (Extents{3, 4, 5}));
  double in_sum = 0, out_sum = 0;
  for (double v : img.data()) in_sum += v;
  for (double v : rgb.data()) out_sum += v;
  EXPECT_DOUBLE_EQ(out_sum, 3 * in_sum);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(rgb(c, i, j), img(0, i, j));
  const auto zero = replicate_channels(Tensor<double>({1, 2, 2}));
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(replicate_channels(Tensor<double>({3, 2, 2})), ShapeError);
}

TEST(ExportPreprocessed, RoundTrip) {
  const Dataset d = oracle::synthetic_fer(1, 0, 1, 8);
  const auto path = temp_file(".fert");
  export_preprocessed(d, path);
  const auto records = read_preprocessed(path);
  ASSERT_EQ(records.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(records[i].image.shape(), (Extents{3, 197, 197}));
    EXPECT_EQ(records[i].label, d.examples[i].label);
    EXPECT_EQ(records[i].usage, d.examples[i].usage);
    EXPECT_EQ(records[i].id, example_id(d.examples[i]));
    EXPECT_EQ(records[i].image, replicate_channels(resize_bilinear(normalize<float>(d.examples[i]), 197, 197)));
  }

  const auto again = temp_file(".again");
  export_preprocessed(d, again);
  std::ifstream a(path, std::ios::binary), b(again, std::ios::binary);
  EXPECT_EQ(std::string((std::istreambuf_iterator<char>(a)), {}), std::string((std::istreambuf_iterator<char>(b)), {}));
  fs::remove(path);
  fs::remove(again);
}

TEST(ExportPreprocessed, UnwritablePathNamesIt) {
  try {
    export_preprocessed(oracle::synthetic_fer(1, 0, 0, 8), "/nonexistent/dir/out.fert");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/out.fert"), std::string::npos);
  }
}
