#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "asl/csv.hpp"
#include "asl/train.hpp"

namespace asl {
namespace {

namespace fs = std::filesystem;

struct Data {
  GlyphSet glyphs;
  SampleSet train, val, test;
};

Data glyph_data(std::size_t classes, std::size_t per_class, std::uint64_t seed) {
  GlyphOptions o;
  o.classes = classes;
  o.per_class = per_class;
  o.seed = seed;
  Data d{generate_glyphs(o), {}, {}, {}};
  const auto split = stratified_split(d.glyphs.manifest.entries, {}, seed);
  d.train = glyph_samples(d.glyphs, split.indices(Subset::train), 16);
  d.val = glyph_samples(d.glyphs, split.indices(Subset::val), 16);
  d.test = glyph_samples(d.glyphs, split.indices(Subset::test), 16);
  return d;
}

ModelGraph tiny_cnn(std::size_t classes) {
  return parse_model_config("input c=1 h=16 w=16\n"
                            "conv out=8 k=3 s=1 pad=same\nrelu\nmaxpool k=2 s=2\n"
                            "conv out=16 k=3 s=1 pad=same\nrelu\nmaxpool k=2 s=2\n"
                            "flatten\ndense out=" +
                            std::to_string(classes) + "\nsoftmax\n");
}

TEST(Seeds, DerivedInOrder) {
  Prng p(77);
  const auto s = derive_seeds(77);
  EXPECT_EQ(s.init, p.next());
  EXPECT_EQ(s.shuffle, p.next());
  EXPECT_EQ(s.dropout, p.next());
  EXPECT_EQ(s.augment, p.next());
}

TEST(TrainRun, ZeroLearningRateKeepsInitialParameters) {
  const auto d = glyph_data(3, 20, 1);
  TrainConfig cfg;
  cfg.graph = tiny_cnn(3);
  cfg.learning_rate = 0.0;
  cfg.epochs = 1;
  cfg.seed = 5;
  const auto result = train_run(cfg, d.train, d.val);
  Model<float> initial(cfg.graph, derive_seeds(5).init);
  EXPECT_EQ(encode_checkpoint(result.model), encode_checkpoint(initial));
  EXPECT_EQ(result.report.epochs(), 1u);
  EXPECT_EQ(result.report.train_loss.size(), 1u);
  EXPECT_EQ(result.report.batch_size, 64u);
}

TEST(TrainRun, DeterministicReplay) {
  const auto d = glyph_data(3, 30, 2);
  TrainConfig cfg;
  PresetOptions o;
  o.input_side = 16;
  o.class_count = 3;
  o.width_divisor = 8;
  cfg.graph = build_preset(Preset::cnn, o);
  cfg.learning_rate = 0.05;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 9;
  cfg.augment = AugmentPolicy::crop_jitter;
  const auto a = train_run(cfg, d.train, d.val);
  const auto b = train_run(cfg, d.train, d.val);
  EXPECT_EQ(a.report.train_loss, b.report.train_loss);
  EXPECT_EQ(a.report.val_loss, b.report.val_loss);
  EXPECT_EQ(a.report.train_acc, b.report.train_acc);
  EXPECT_EQ(a.report.val_acc, b.report.val_acc);
  EXPECT_EQ(a.report.best_epoch, b.report.best_epoch);
  EXPECT_EQ(a.report.best_checkpoint_bytes, b.report.best_checkpoint_bytes);
  EXPECT_EQ(encode_checkpoint(a.model), encode_checkpoint(b.model));

  cfg.seed = 10;
  EXPECT_NE(train_run(cfg, d.train, d.val).report.train_loss, a.report.train_loss);
}

TEST(TrainRun, SerialAndOpenmpKernelsGiveSameRun) {
  const auto d = glyph_data(3, 20, 3);
  TrainConfig cfg;
  cfg.graph = tiny_cnn(3);
  cfg.learning_rate = 0.1;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  std::vector<std::uint8_t> bytes[2];
  int i = 0;
  for (auto backend : {kernels::Backend::serial, kernels::Backend::openmp}) {
    kernels::ScopedBackend scope(backend);
    bytes[i++] = encode_checkpoint(train_run(cfg, d.train, d.val).model);
  }
  EXPECT_EQ(bytes[0], bytes[1]);
}

TEST(TrainRun, LossDropsOnFourClassGlyphs) {
  const auto d = glyph_data(4, 200, 4);
  TrainConfig cfg;
  cfg.graph = tiny_cnn(4);
  cfg.learning_rate = 0.1;
  cfg.epochs = 20;
  cfg.seed = 4;
  const auto r = train_run(cfg, d.train, d.val).report;
  ASSERT_EQ(r.epochs(), 20u);
  EXPECT_FALSE(r.diverged);
  EXPECT_LT(r.train_loss.back(), r.train_loss.front());
}

TEST(TrainRun, BestEpochIsFirstArgminOfValidationLoss) {
  const auto d = glyph_data(3, 30, 5);
  TrainConfig cfg;
  cfg.graph = tiny_cnn(3);
  cfg.learning_rate = 0.3;
  cfg.epochs = 6;
  cfg.batch_size = 8;
  const auto r = train_run(cfg, d.train, d.val).report;
  const auto first_min = std::min_element(r.val_loss.begin(), r.val_loss.end()) - r.val_loss.begin();
  EXPECT_EQ(r.best_epoch, static_cast<std::size_t>(first_min));
  for (double v : r.val_loss) EXPECT_LE(r.val_loss[r.best_epoch], v);

  // The stored checkpoint reproduces the best epoch's validation accuracy.
  Model<float> best = decode_checkpoint(r.best_checkpoint_bytes);
  EXPECT_EQ(evaluate(best, d.val).accuracy, r.val_acc[r.best_epoch]);
}

TEST(TrainRun, WritesCheckpointFile) {
  const auto dir = fs::temp_directory_path() / "asl_test_train_out";
  fs::remove_all(dir);
  const auto d = glyph_data(2, 10, 6);
  TrainConfig cfg;
  cfg.graph = tiny_cnn(2);
  cfg.epochs = 2;
  cfg.out_dir = dir;
  const auto r = train_run(cfg, d.train, d.val).report;
  ASSERT_TRUE(r.best_checkpoint.has_value());
  EXPECT_EQ(read_file(*r.best_checkpoint), r.best_checkpoint_bytes);
  fs::remove_all(dir);
}

TEST(TrainRun, DivergenceIsReported) {
  const auto d = glyph_data(2, 20, 7);
  TrainConfig cfg;
  cfg.graph = tiny_cnn(2);
  cfg.learning_rate = 1e30;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  const auto r = train_run(cfg, d.train, d.val).report;
  EXPECT_TRUE(r.diverged);
  EXPECT_NE(r.divergence.find("epoch"), std::string::npos) << r.divergence;
  EXPECT_LT(r.epochs(), 5u);
}

TEST(TrainRun, RejectsBadConfig) {
  const auto d = glyph_data(2, 10, 8);
  TrainConfig cfg;
  cfg.graph = tiny_cnn(2);
  cfg.epochs = 0;
  EXPECT_THROW(train_run(cfg, d.train, d.val), ParameterError);
  cfg.epochs = 1;
  cfg.batch_size = 0;
  EXPECT_THROW(train_run(cfg, d.train, d.val), ParameterError);
  cfg.batch_size = 4;
  cfg.learning_rate = -1;
  EXPECT_THROW(train_run(cfg, d.train, d.val), ParameterError);
  cfg.learning_rate = 0.1;
  EXPECT_THROW(train_run(cfg, d.train, SampleSet{}), ParameterError);
  cfg.graph = tiny_cnn(3);
  EXPECT_THROW(train_run(cfg, d.train, d.val), ConfigError);
}

TEST(TrainRun, FullBatchGradientDescent) {
  const auto d = glyph_data(2, 20, 9);
  TrainConfig cfg;
  cfg.graph = tiny_cnn(2);
  cfg.optimizer = OptimizerKind::gd;
  cfg.learning_rate = 0.1;
  cfg.epochs = 2;
  const auto r = train_run(cfg, d.train, d.val).report;
  EXPECT_EQ(r.batch_size, d.train.size());
}

TEST(TrainRun, AdamRuns) {
  const auto d = glyph_data(2, 20, 10);
  TrainConfig cfg;
  cfg.graph = tiny_cnn(2);
  cfg.optimizer = OptimizerKind::adam;
  cfg.learning_rate = 0.01;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  const auto r = train_run(cfg, d.train, d.val).report;
  EXPECT_FALSE(r.diverged);
  EXPECT_LT(r.train_loss.back(), r.train_loss.front());
}

// A set where class c lights pixel c, read by an identity dense layer.
SampleSet leaked_labels(std::size_t classes, std::size_t per_class) {
  SampleSet s;
  s.side = 2;
  s.class_count = classes;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      Tensor<float> x({1, 2, 2});
      x[c] = 1.0f;
      s.append(x, c);
    }
  return s;
}

ModelGraph pixel_reader(std::size_t classes) {
  return parse_model_config("input c=1 h=2 w=2\nflatten\ndense out=" + std::to_string(classes) + "\nsoftmax\n");
}

TEST(Evaluate, ConstantClassifier) {
  Model<float> m(pixel_reader(4), 1);
  auto& dense = dynamic_cast<Dense<float>&>(m.layer(1));
  dense.weight.fill(0);
  dense.bias.fill(0);
  dense.bias[0] = 1;
  const auto e = evaluate(m, leaked_labels(4, 5));
  EXPECT_DOUBLE_EQ(e.accuracy, 0.25);
  EXPECT_EQ(e.confusion.column_sum(0), 20u);
  for (std::size_t c = 1; c < 4; ++c) EXPECT_EQ(e.confusion.column_sum(c), 0u);
}

TEST(Evaluate, PerfectOracle) {
  Model<float> m(pixel_reader(4), 1);
  auto& dense = dynamic_cast<Dense<float>&>(m.layer(1));
  dense.weight.fill(0);
  dense.bias.fill(0);
  for (std::size_t c = 0; c < 4; ++c) dense.weight.at(c, c) = 5;
  const auto e = evaluate(m, leaked_labels(4, 3), 5);
  EXPECT_EQ(e.accuracy, 1.0);
  EXPECT_EQ(e.correct, 12u);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(e.confusion.at(i, j), i == j ? 3u : 0u);
}

TEST(Evaluate, CountsAgreeWithConfusion) {
  const auto d = glyph_data(4, 20, 11);
  Model<float> m(tiny_cnn(4), 3);
  const auto e = evaluate(m, d.test, 7);
  EXPECT_EQ(e.confusion.total(), d.test.size());
  EXPECT_EQ(e.correct, e.confusion.trace());
  EXPECT_EQ(e.accuracy, static_cast<double>(e.correct) / d.test.size());
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(e.confusion.row_sum(c),
              static_cast<std::uint64_t>(std::count(d.test.labels.begin(), d.test.labels.end(), c)));
  }
}

TEST(Evaluate, ClassMismatchIsConfigError) {
  Model<float> m(pixel_reader(3), 1);
  EXPECT_THROW(evaluate(m, leaked_labels(4, 1)), ConfigError);
}

TEST(Confusion, RandomInvariants) {
  Prng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t c = 1 + rng.below(8);
    ConfusionMatrix cm(c);
    std::uint64_t hits = 0;
    const std::size_t n = 1 + rng.below(300);
    std::vector<std::uint64_t> truth_counts(c);
    for (std::size_t i = 0; i < n; ++i) {
      const auto t = rng.below(c), p = rng.below(c);
      cm.add(t, p);
      hits += t == p;
      ++truth_counts[t];
    }
    ASSERT_EQ(cm.total(), n);
    ASSERT_EQ(cm.trace(), hits);
    ASSERT_EQ(cm.accuracy(), static_cast<double>(hits) / n);
    for (std::size_t t = 0; t < c; ++t) ASSERT_EQ(cm.row_sum(t), truth_counts[t]);
  }
}

TEST(Confusion, CsvHasHeaderAndOneRowPerClass) {
  ConfusionMatrix cm(3);
  cm.add(0, 0);
  cm.add(1, 2);
  cm.add(2, 2);
  const auto rows = csv::parse(cm.to_csv({"alif", "ba", "ta"}));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"alif", "ba", "ta"}));
  EXPECT_EQ(rows[2], (std::vector<std::string>{"0", "0", "1"}));
  EXPECT_THROW(cm.add(3, 0), ParameterError);
}

TEST(Argmax, TiesGoLow) {
  const std::vector<float> v{0.2f, 0.4f, 0.4f};
  EXPECT_EQ(argmax<float>(v), 1u);
  const std::vector<double> w{1.0, 1.0};
  EXPECT_EQ(argmax<double>(w), 0u);
}

TEST(Infer, ProbabilitiesAndDeterminism) {
  auto graph = tiny_cnn(3);
  graph.class_names = {"alif", "ba", "ta"};
  Model<float> m(graph, 13);
  Prng rng(13);
  GrayImage img(40, 30);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  const auto a = infer_single(m, img), b = infer_single(m, img);
  EXPECT_EQ(a.probabilities, b.probabilities);
  double s = 0;
  for (double p : a.probabilities) s += p;
  EXPECT_NEAR(s, 1.0, 1e-6);
  EXPECT_EQ(a.class_name, graph.class_names[a.class_index]);
  EXPECT_EQ(a.probability, a.probabilities[a.class_index]);
  EXPECT_EQ(model_input_side(m), 16u);
}

TEST(Infer, UndecodableFile) {
  const auto path = fs::temp_directory_path() / "asl_test_garbage.pgm";
  const std::vector<std::uint8_t> junk{'n', 'o', 'p', 'e'};
  write_file(path, junk);
  Model<float> m(tiny_cnn(2), 1);
  EXPECT_THROW(infer_file(m, path), FormatError);
  fs::remove(path);
}

TEST(Latency, SummaryStatistics) {
  const auto one = summarize_latency({4.0});
  EXPECT_EQ(one.samples_ms.size(), 1u);
  EXPECT_EQ(one.mean_ms, one.median_ms);
  const auto r = summarize_latency({5, 1, 3, 2, 4, 100, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19});
  EXPECT_EQ(r.min_ms, 1);
  EXPECT_EQ(r.max_ms, 100);
  EXPECT_EQ(r.median_ms, 10.5);
  EXPECT_EQ(r.p95_ms, 19);
  EXPECT_GE(r.mean_ms, r.min_ms);
  EXPECT_LE(r.mean_ms, r.max_ms);
  EXPECT_THROW(summarize_latency({}), ParameterError);
}

TEST(Latency, BenchOneIteration) {
  const auto path = fs::temp_directory_path() / "asl_test_bench.pgm";
  write_file(path, encode_pgm(GrayImage(16, 16, 90)));
  Model<float> m(tiny_cnn(2), 1);
  const auto r = bench_inference(m, path, 1);
  ASSERT_EQ(r.samples_ms.size(), 1u);
  EXPECT_EQ(r.mean_ms, r.median_ms);
  const auto r5 = bench_inference(m, path, 5);
  EXPECT_EQ(r5.samples_ms.size(), 5u);
  EXPECT_GE(r5.mean_ms, r5.min_ms);
  EXPECT_LE(r5.mean_ms, r5.max_ms);
  fs::remove(path);
}

TEST(Curves, CsvRoundTrip) {
  TrainReport r;
  r.train_loss = {1.5, 0.75};
  r.train_acc = {0.25, 0.5};
  r.val_loss = {1.25, 0.5};
  r.val_acc = {0.375, 0.625};
  EXPECT_EQ(curves_csv(r).substr(0, curves_csv(r).find('\n')), "epoch,train_loss,train_acc,val_loss,val_acc");
  const auto path = fs::temp_directory_path() / "asl_test_curves.csv";
  write_curves_csv(r, path);
  const auto rows = read_curves_csv(path);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].epoch, 2u);
  EXPECT_EQ(rows[1].val_acc, 0.625);
  EXPECT_EQ(rows[0].train_loss, 1.5);
  fs::remove(path);
}

}  // namespace
}  // namespace asl
