#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "asl/csv.hpp"
#include "asl/dataset.hpp"
#include "asl/image.hpp"

namespace asl {
namespace {

namespace fs = std::filesystem;

std::vector<std::uint8_t> bytes_of(const std::string& header, std::initializer_list<int> payload) {
  std::vector<std::uint8_t> b(header.begin(), header.end());
  for (int v : payload) b.push_back(static_cast<std::uint8_t>(v));
  return b;
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("asl_test_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void touch_pgm(const fs::path& p, std::uint8_t value = 100) {
  fs::create_directories(p.parent_path());
  const auto b = encode_pgm(GrayImage(4, 4, value));
  write_file(p, b);
}

// Bilinear oracle written directly from the sampling rule.
double bilinear_oracle(const GrayImage& img, std::size_t target, std::size_t x, std::size_t y) {
  auto coord = [&](std::size_t d, std::size_t n) {
    double s = (d + 0.5) * static_cast<double>(n) / target - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(n - 1));
  };
  const double sx = coord(x, img.width), sy = coord(y, img.height);
  const std::size_t x0 = static_cast<std::size_t>(std::floor(sx)), y0 = static_cast<std::size_t>(std::floor(sy));
  const std::size_t x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  const double fx = sx - x0, fy = sy - y0;
  const double top = img.at(x0, y0) * (1 - fx) + img.at(x1, y0) * fx;
  const double bottom = img.at(x0, y1) * (1 - fx) + img.at(x1, y1) * fx;
  return (top * (1 - fy) + bottom * fy) / 255.0;
}

TEST(Pgm, DecodesExample) {
  const auto img = decode_pgm(bytes_of("P5\n2 2\n255\n", {0, 64, 128, 255}));
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.height, 2u);
  EXPECT_EQ(img.at(0, 0), 0);
  EXPECT_EQ(img.at(1, 0), 64);
  EXPECT_EQ(img.at(0, 1), 128);
  EXPECT_EQ(img.at(1, 1), 255);
}

TEST(Pgm, SingleBlackPixel) {
  const auto img = decode_pgm(bytes_of("P5 1 1 255\n", {0}));
  EXPECT_EQ(img, GrayImage(1, 1, 0));
}

TEST(Pgm, HeaderComments) {
  const auto img = decode_pgm(bytes_of("P5\n# made by hand\n1 2\n# depth\n255\n", {7, 9}));
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{7, 9}));
}

TEST(Pgm, RoundTripRandomImages) {
  Prng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    GrayImage img(1 + rng.below(40), 1 + rng.below(40));
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    ASSERT_EQ(decode_pgm(encode_pgm(img)), img);
  }
}

std::size_t format_offset(const std::vector<std::uint8_t>& b) {
  try {
    decode_pgm(b);
  } catch (const FormatError& e) {
    return e.offset();
  }
  ADD_FAILURE() << "accepted malformed pgm";
  return 0;
}

TEST(Pgm, ErrorsCarryOffsets) {
  EXPECT_EQ(format_offset(bytes_of("P2\n1 1\n255\n", {0})), 0u);
  EXPECT_EQ(format_offset(bytes_of("P5\n1 1\n65535\n", {0, 0})), 7u);
  const auto truncated = bytes_of("P5\n2 2\n255\n", {1, 2, 3});
  EXPECT_EQ(format_offset(truncated), truncated.size());
}

TEST(Image, ConstructorChecks) {
  EXPECT_THROW(GrayImage(0, 3), ParameterError);
  EXPECT_THROW(GrayImage(2, 2, std::vector<std::uint8_t>{1, 2, 3}), ShapeError);
}

TEST(Preprocess, UniformStaysUniform) {
  for (std::size_t w : {3, 17, 64}) {
    for (std::size_t target : {1, 5, 64}) {
      const auto t = preprocess_image(GrayImage(w, w + 3, 128), target, 0.8);
      ASSERT_EQ(t.shape(), (Shape{1, target, target}));
      for (float v : t.values()) ASSERT_EQ(v, static_cast<float>(128 / 255.0));
    }
  }
}

TEST(Preprocess, SameSizeIsIdentity) {
  Prng rng(2);
  GrayImage img(64, 64);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  const auto t = preprocess_image(img, 64, 1.0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) ASSERT_EQ(t[i], static_cast<float>(img.pixels[i] / 255.0));
}

TEST(Preprocess, CheckerboardMatchesBilinearOracle) {
  GrayImage board(4, 4);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) board.at(x, y) = (x + y) % 2 ? 255 : 0;
  const auto t = preprocess_image(board, 2, 1.0);
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x) {
      EXPECT_EQ(t.at(0, y, x), static_cast<float>(bilinear_oracle(board, 2, x, y)));
      EXPECT_FLOAT_EQ(t.at(0, y, x), 0.5f);
    }
}

TEST(Preprocess, RandomImagesMatchOracle) {
  Prng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    GrayImage img(2 + rng.below(30), 2 + rng.below(30));
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    const std::size_t target = 1 + rng.below(20);
    const auto t = preprocess_image(img, target);
    for (std::size_t y = 0; y < target; ++y)
      for (std::size_t x = 0; x < target; ++x) {
        ASSERT_EQ(t.at(0, y, x), static_cast<float>(bilinear_oracle(img, target, x, y)));
        ASSERT_GE(t.at(0, y, x), 0.0f);
        ASSERT_LE(t.at(0, y, x), 1.0f);
      }
  }
}

TEST(Preprocess, CenterCropSelectsMiddle) {
  GrayImage img(8, 8, 0);
  for (std::size_t y = 2; y < 6; ++y)
    for (std::size_t x = 2; x < 6; ++x) img.at(x, y) = 200;
  const auto t = preprocess_image(img, 4, 0.5);
  for (float v : t.values()) EXPECT_EQ(v, static_cast<float>(200 / 255.0));
}

TEST(Preprocess, BadArguments) {
  EXPECT_THROW(preprocess_image(GrayImage(4, 4), 0), ParameterError);
  EXPECT_THROW(preprocess_image(GrayImage(4, 4), 4, 0.0), ParameterError);
  EXPECT_THROW(preprocess_image(GrayImage(4, 4), 4, 1.5), ParameterError);
}

TEST(Augment, NoneIsBitwiseIdentity) {
  Prng rng(4);
  const auto x = rng_uniform<float>(rng, {1, 9, 9}, 0, 1);
  const auto before = rng.state();
  EXPECT_EQ(augment(x, rng, AugmentPolicy::none), x);
  EXPECT_EQ(rng.state(), before);
}

TEST(Augment, FullAreaIsIdentity) {
  Prng rng(5);
  const auto x = rng_uniform<float>(rng, {1, 12, 12}, 0, 1);
  const auto y = crop_resize(x, 1.0, 0.0, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) ASSERT_NEAR(y[i], x[i], 1e-6);
}

TEST(Augment, JitterIsSeededAndBounded) {
  Prng data(6);
  const auto x = rng_uniform<float>(data, {1, 16, 16}, 0, 1);
  Prng a(7), b(7);
  for (int i = 0; i < 10; ++i) {
    const auto ya = augment(x, a, AugmentPolicy::crop_jitter);
    ASSERT_EQ(ya, augment(x, b, AugmentPolicy::crop_jitter));
    ASSERT_EQ(ya.shape(), x.shape());
    for (float v : ya.values()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(Augment, PolicyNames) {
  EXPECT_EQ(parse_augment("crop-jitter"), AugmentPolicy::crop_jitter);
  EXPECT_EQ(parse_augment("none"), AugmentPolicy::none);
  EXPECT_EQ(to_string(AugmentPolicy::crop_jitter), "crop-jitter");
  EXPECT_THROW(parse_augment("flip"), ParameterError);
}

TEST(Manifest, SortedNamesGiveIndices) {
  TempDir dir("manifest");
  for (int i = 0; i < 2; ++i) touch_pgm(dir.path() / "ba" / ("b" + std::to_string(i) + ".pgm"));
  for (int i = 0; i < 3; ++i) touch_pgm(dir.path() / "alif" / ("a" + std::to_string(i) + ".pgm"));
  touch_pgm(dir.path() / "alif" / ".hidden.pgm");
  const auto m = scan_manifest(dir.path());
  EXPECT_EQ(m.histogram.class_names, (std::vector<std::string>{"alif", "ba"}));
  EXPECT_EQ(m.histogram.counts, (std::vector<std::size_t>{3, 2}));
  ASSERT_EQ(m.entries.size(), 5u);
  EXPECT_EQ(m.entries[0].path, "alif/a0.pgm");
  EXPECT_EQ(m.entries[0].class_index, 0u);
  EXPECT_EQ(m.entries[4].class_name, "ba");
  EXPECT_EQ(m.entries[4].class_index, 1u);
  EXPECT_TRUE(m.warnings.empty());
}

TEST(Manifest, OneClassOneFile) {
  TempDir dir("one");
  touch_pgm(dir.path() / "only" / "x.pgm");
  const auto m = scan_manifest(dir.path());
  ASSERT_EQ(m.entries.size(), 1u);
  EXPECT_EQ(m.entries[0].class_index, 0u);
}

TEST(Manifest, EmptyClassWarnsAndCountsZero) {
  TempDir dir("empty");
  touch_pgm(dir.path() / "a" / "x.pgm");
  fs::create_directories(dir.path() / "b");
  const auto m = scan_manifest(dir.path());
  EXPECT_EQ(m.histogram.counts, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(m.warnings.size(), 1u);
}

TEST(Manifest, BadRoot) {
  EXPECT_THROW(scan_manifest("/nonexistent/asl"), IoError);
  TempDir dir("noclasses");
  EXPECT_THROW(scan_manifest(dir.path()), IoError);
}

TEST(Manifest, Fig35HistogramAndCsv) {
  const std::vector<std::size_t> counts{1672, 1791, 1838, 1766, 1552, 1526, 1607, 1634, 1582, 1659, 1374,
                                        1638, 1507, 1895, 1670, 1816, 1723, 2114, 1977, 1955, 1705, 1774,
                                        1832, 1765, 1819, 1592, 1371, 1722, 1791, 1343, 1746, 1293};
  std::vector<std::string> names;
  std::vector<ManifestEntry> entries;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    char name[8];
    std::snprintf(name, sizeof name, "c%02zu", c);
    names.push_back(name);
    for (std::size_t i = 0; i < counts[c]; ++i) entries.push_back({names.back() + "/" + std::to_string(i), c, name});
  }
  const auto m = make_manifest(entries, names);
  EXPECT_EQ(m.histogram.counts, counts);
  EXPECT_EQ(m.histogram.total(), 54049u);
  EXPECT_EQ(m.histogram.total(), m.entries.size());
  const auto rows = csv::parse(histogram_csv(m.histogram));
  ASSERT_EQ(rows.size(), 33u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"class_name", "count"}));
  EXPECT_EQ(rows[1], (std::vector<std::string>{"c00", "1672"}));

  const auto split = stratified_split(m.entries, {}, 42);
  const double train = 100.0 * split.count(Subset::train) / 54049;
  EXPECT_NEAR(train, 70.0, 0.1);
}

ManifestEntry entry(std::size_t c, std::size_t i) {
  return {"k" + std::to_string(c) + "/" + std::to_string(i) + ".pgm", c, "k" + std::to_string(c)};
}

TEST(Split, TenAndTwenty) {
  for (auto [n, tr, va, te] : {std::tuple{10, 7, 2, 1}, std::tuple{20, 14, 3, 3}}) {
    std::vector<ManifestEntry> e;
    for (int i = 0; i < n; ++i) e.push_back(entry(0, i));
    const auto s = stratified_split(e, {}, 1);
    EXPECT_EQ(s.count(Subset::train), static_cast<std::size_t>(tr));
    EXPECT_EQ(s.count(Subset::val), static_cast<std::size_t>(va));
    EXPECT_EQ(s.count(Subset::test), static_cast<std::size_t>(te));
  }
}

TEST(Split, TinyClassGoesToTrainWithWarning) {
  std::vector<ManifestEntry> e{entry(0, 0), entry(0, 1)};
  for (int i = 0; i < 10; ++i) e.push_back(entry(1, i));
  const auto s = stratified_split(e, {}, 1);
  EXPECT_EQ(s.membership[0], Subset::train);
  EXPECT_EQ(s.membership[1], Subset::train);
  EXPECT_EQ(s.warnings.size(), 1u);
}

TEST(Split, RatiosValidated) {
  std::vector<ManifestEntry> e{entry(0, 0)};
  EXPECT_THROW(stratified_split(e, {0.5, 0.3, 0.3}, 1), ParameterError);
  EXPECT_THROW(stratified_split(e, {1.0, 0.0, 0.0}, 1), ParameterError);
  EXPECT_THROW(parse_ratios("0.7,0.3"), ParameterError);
  const auto r = parse_ratios("0.8,0.1,0.1");
  EXPECT_DOUBLE_EQ(r.train, 0.8);
}

TEST(Split, PropertiesOverRandomManifests) {
  Prng gen(8);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t classes = 1 + gen.below(40);
    std::vector<ManifestEntry> e;
    std::vector<std::size_t> sizes(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      sizes[c] = gen.below(201);
      for (std::size_t i = 0; i < sizes[c]; ++i) e.push_back(entry(c, i));
    }
    const std::uint64_t seed = gen.next();
    const auto s = stratified_split(e, {}, seed);
    ASSERT_EQ(s.membership.size(), e.size());
    ASSERT_EQ(s.count(Subset::train) + s.count(Subset::val) + s.count(Subset::test), e.size());
    ASSERT_EQ(stratified_split(e, {}, seed).membership, s.membership);

    std::vector<std::size_t> train(classes), val(classes);
    for (std::size_t i = 0; i < e.size(); ++i) {
      train[e[i].class_index] += s.membership[i] == Subset::train;
      val[e[i].class_index] += s.membership[i] == Subset::val;
    }
    for (std::size_t c = 0; c < classes; ++c) {
      const std::size_t n = sizes[c];
      if (n < 3) {
        ASSERT_EQ(train[c], n);
        continue;
      }
      ASSERT_EQ(train[c], static_cast<std::size_t>(std::floor(0.7 * n + 1e-9))) << n;
      ASSERT_EQ(val[c], static_cast<std::size_t>(std::floor(0.15 * n + 0.5 + 1e-9))) << n;
      ASSERT_LT(std::abs(static_cast<double>(train[c]) / n - 0.7), 1.0 / n);
    }
  }
}

TEST(Split, DifferentSeedsDiffer) {
  std::vector<ManifestEntry> e;
  for (int i = 0; i < 50; ++i) e.push_back(entry(0, i));
  EXPECT_NE(stratified_split(e, {}, 1).membership, stratified_split(e, {}, 2).membership);
}

TEST(Split, CsvRoundTrip) {
  TempDir dir("splitcsv");
  std::vector<ManifestEntry> e;
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 7; ++i) e.push_back(entry(c, i));
  const auto s = stratified_split(e, {}, 3);
  const auto text = split_csv(e, s);
  EXPECT_EQ(text.substr(0, 11), "path,split\n");
  csv::write_file(dir.path() / "s.csv", text);
  EXPECT_EQ(read_split_csv(dir.path() / "s.csv", e), s.membership);

  auto missing = e;
  missing.push_back(entry(2, 0));
  EXPECT_THROW(read_split_csv(dir.path() / "s.csv", missing), ConfigError);
  std::vector<ManifestEntry> fewer(e.begin(), e.end() - 1);
  EXPECT_THROW(read_split_csv(dir.path() / "s.csv", fewer), ConfigError);
  csv::write_file(dir.path() / "bad.csv", "file,part\n");
  EXPECT_THROW(read_split_csv(dir.path() / "bad.csv", e), FormatError);
}

TEST(Csv, QuotingRoundTrip) {
  const std::vector<std::vector<std::string>> rows{{"a", "b,c", "say \"hi\""}, {"", "line\nbreak", "x"}};
  std::string text;
  for (const auto& r : rows) text += csv::join(r) + "\n";
  EXPECT_EQ(csv::parse(text), rows);
  EXPECT_THROW(csv::parse("\"open\n"), FormatError);
  EXPECT_EQ(csv::number(0.5), "0.5");
}

TEST(ManifestCsv, Header) {
  const auto m = make_manifest({entry(1, 0), entry(0, 0)}, {"k0", "k1"});
  const auto rows = csv::parse(manifest_csv(m));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"path", "class_index", "class_name"}));
  EXPECT_EQ(rows[1], (std::vector<std::string>{"k0/0.pgm", "0", "k0"}));
}

TEST(Glyphs, DeterministicAndBalanced) {
  GlyphOptions o;
  o.classes = 4;
  o.per_class = 10;
  o.seed = 9;
  const auto a = generate_glyphs(o), b = generate_glyphs(o);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.manifest.histogram.counts, (std::vector<std::size_t>{10, 10, 10, 10}));
  o.seed = 10;
  EXPECT_NE(generate_glyphs(o).images, a.images);
  o.classes = 9;
  EXPECT_THROW(generate_glyphs(o), ParameterError);
}

TEST(Glyphs, TreeLoadsLikeMemory) {
  TempDir dir("glyphs");
  GlyphOptions o;
  o.classes = 3;
  o.per_class = 4;
  const auto set = generate_glyphs(o);
  write_glyph_tree(dir.path(), set);
  const auto m = scan_manifest(dir.path());
  EXPECT_EQ(m.entries, set.manifest.entries);
  std::vector<std::size_t> idx(m.entries.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto disk = load_samples(dir.path(), m, idx, 16);
  const auto mem = glyph_samples(set, idx, 16);
  EXPECT_EQ(disk.pixels, mem.pixels);
  EXPECT_EQ(disk.labels, mem.labels);
  EXPECT_EQ(disk.class_count, 3u);
}

TEST(Samples, BatchGathersInOrder) {
  SampleSet s;
  s.side = 2;
  s.class_count = 2;
  s.append(Tensor<float>({1, 2, 2}, 1.0f), 0);
  s.append(Tensor<float>({1, 2, 2}, 2.0f), 1);
  const std::vector<std::size_t> order{1, 0, 1};
  const auto b = s.batch(order);
  EXPECT_EQ(b.shape(), (Shape{3, 1, 2, 2}));
  EXPECT_EQ(b.at(0, 0, 0, 0), 2.0f);
  EXPECT_EQ(b.at(1, 0, 1, 1), 1.0f);
  EXPECT_THROW(s.append(Tensor<float>({1, 3, 3}), 0), ShapeError);
}

}  // namespace
}  // namespace asl
