#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "asl/dataset.hpp"
#include "asl/model.hpp"
#include "asl/optim.hpp"

namespace asl {

struct TrainConfig {
  ModelGraph graph;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double learning_rate = 0.01;
  AdamSettings adam;
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  AugmentPolicy augment = AugmentPolicy::none;
  /// Directory for best.ckpt; none keeps the checkpoint in memory only.
  std::optional<std::filesystem::path> out_dir;
};

/// Streams derived from the run seed, in the order they are drawn.
struct RunSeeds {
  std::uint64_t init;
  std::uint64_t shuffle;
  std::uint64_t dropout;
  std::uint64_t augment;
};
RunSeeds derive_seeds(std::uint64_t seed);

struct TrainReport {
  std::vector<double> train_loss;
  std::vector<double> train_acc;
  std::vector<double> val_loss;
  std::vector<double> val_acc;
  std::size_t best_epoch = 0;  // 0-based
  std::size_t batch_size = 0;
  std::optional<std::filesystem::path> best_checkpoint;
  std::vector<std::uint8_t> best_checkpoint_bytes;

  bool diverged = false;
  std::string divergence;  // epoch/batch location when diverged

  std::size_t epochs() const { return val_loss.size(); }
};

struct TrainResult {
  TrainReport report;
  Model<float> model;  // parameters after the last step
};

/// Epoch loop: seeded shuffle, mini-batches (last partial one included),
/// softmax cross-entropy, backward, optimizer step; then an eval-mode pass
/// over `val`. A strictly lower validation loss saves the best checkpoint.
TrainResult train_run(const TrainConfig& config, const SampleSet& train, const SampleSet& val);

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  void add(std::size_t truth, std::size_t predicted);
  std::size_t classes() const noexcept { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_.at(truth * classes_ + predicted); }
  std::uint64_t total() const noexcept { return total_; }
  std::uint64_t trace() const;
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t column_sum(std::size_t predicted) const;
  double accuracy() const;

  /// Header row of class names (indices when `names` is empty), then one row per true class.
  std::string to_csv(const std::vector<std::string>& names) const;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

/// Index of the largest value; ties go to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> row);

struct Evaluation {
  double accuracy = 0.0;      // trace / total
  std::uint64_t correct = 0;  // counted while predicting
  ConfusionMatrix confusion;
};

Evaluation evaluate(Model<float>& model, const SampleSet& set, std::size_t batch_size = 64);

struct Prediction {
  std::size_t class_index = 0;
  std::string class_name;
  double probability = 0.0;
  std::vector<double> probabilities;
};

/// Input side used to preprocess images for `model`; requires a square single-channel input.
std::size_t model_input_side(const Model<float>& model);
std::string class_label(const ModelGraph& graph, std::size_t index);

Prediction infer_single(Model<float>& model, const GrayImage& image, double crop_fraction = 1.0);
Prediction infer_file(Model<float>& model, const std::filesystem::path& image, double crop_fraction = 1.0);

struct LatencyReport {
  std::vector<double> samples_ms;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
};

LatencyReport summarize_latency(std::vector<double> samples_ms);

/// Decode + preprocess + eval forward per iteration after one untimed warm-up.
LatencyReport bench_inference(Model<float>& model, const std::filesystem::path& image, std::size_t iterations,
                              double crop_fraction = 1.0);

std::string curves_csv(const TrainReport& report);
void write_curves_csv(const TrainReport& report, const std::filesystem::path& path);

struct CurveRow {
  std::size_t epoch;
  double train_loss, train_acc, val_loss, val_acc;
};
std::vector<CurveRow> read_curves_csv(const std::filesystem::path& path);

}  // namespace asl
