#include "asl/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "asl/csv.hpp"
#include "asl/losses.hpp"

namespace asl {

RunSeeds derive_seeds(std::uint64_t seed) {
  Prng root(seed);
  RunSeeds s{};
  s.init = root.next();
  s.shuffle = root.next();
  s.dropout = root.next();
  s.augment = root.next();
  return s;
}

template <typename T>
std::size_t argmax(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

template std::size_t argmax<float>(std::span<const float>);
template std::size_t argmax<double>(std::span<const double>);

namespace {

std::size_t count_correct(const Tensor<float>& scores, std::span<const std::size_t> labels) {
  const std::size_t c = scores.dim(1);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ok += argmax<float>({scores.data() + i * c, c}) == labels[i];
  }
  return ok;
}

std::vector<std::size_t> gather_labels(const SampleSet& set, std::span<const std::size_t> order) {
  std::vector<std::size_t> out(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) out[k] = set.labels[order[k]];
  return out;
}

void check_compatible(const Model<float>& model, const SampleSet& set, const char* what) {
  if (model.class_count() != set.class_count) {
    throw ConfigError(std::string(what) + ": model predicts " + std::to_string(model.class_count()) +
                      " classes but the data has " + std::to_string(set.class_count));
  }
  const Shape want{1, set.side, set.side};
  if (model.graph().input_shape != want) {
    throw ConfigError(std::string(what) + ": model input " + to_string(model.graph().input_shape) +
                      " differs from sample shape " + to_string(want));
  }
}

struct LossAccuracy {
  double loss;
  double accuracy;
};

LossAccuracy eval_pass(Model<float>& model, const SampleSet& set, std::size_t batch_size) {
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, set.size() - start);
    std::span<const std::size_t> idx(order.data() + start, n);
    const auto labels = gather_labels(set, idx);
    const auto scores = model.forward_scores(set.batch(idx), Mode::eval);
    loss_sum += static_cast<double>(softmax_cross_entropy<float>(scores, labels).value) * static_cast<double>(n);
    correct += count_correct(scores, labels);
  }
  return {loss_sum / static_cast<double>(set.size()), static_cast<double>(correct) / static_cast<double>(set.size())};
}

}  // namespace

TrainResult train_run(const TrainConfig& config, const SampleSet& train, const SampleSet& val) {
  if (config.epochs == 0) throw ParameterError("epochs must be at least 1");
  if (config.batch_size == 0) throw ParameterError("batch size must be at least 1");
  if (!(config.learning_rate >= 0.0) || !std::isfinite(config.learning_rate)) {
    throw ParameterError("learning rate must be a non-negative number");
  }
  if (train.size() == 0 || val.size() == 0) throw ParameterError("training needs nonempty train and val subsets");

  const RunSeeds seeds = derive_seeds(config.seed);
  TrainResult result{TrainReport{}, Model<float>(config.graph, seeds.init)};
  Model<float>& model = result.model;
  TrainReport& report = result.report;
  check_compatible(model, train, "train");
  check_compatible(model, val, "val");
  model.dropout_rng().set_state(seeds.dropout);

  Optimizer<float> opt(config.optimizer, config.learning_rate, config.adam);
  Prng shuffle_rng(seeds.shuffle);
  Prng augment_rng(seeds.augment);
  const std::size_t batch = config.optimizer == OptimizerKind::gd ? train.size() : config.batch_size;
  report.batch_size = batch;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best_loss = 0.0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t n = std::min(batch, order.size() - start);
      std::span<const std::size_t> idx(order.data() + start, n);
      const auto labels = gather_labels(train, idx);
      Tensor<float> x = train.batch(idx);
      if (config.augment != AugmentPolicy::none) {
        const std::size_t per = train.sample_size();
        for (std::size_t k = 0; k < n; ++k) {
          const auto aug = augment(train.sample(idx[k]), augment_rng, config.augment);
          std::copy(aug.values().begin(), aug.values().end(), x.data() + k * per);
        }
      }
      const auto scores = model.forward_scores(x, Mode::train);
      const auto loss = softmax_cross_entropy<float>(scores, labels);
      const std::string where = "epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(batches + 1);
      if (!std::isfinite(loss.value)) {
        report.diverged = true;
        report.divergence = where + ": loss is not finite";
        return result;
      }
      model.backward(loss.gradient);
      try {
        opt.step(model.params());
      } catch (const NumericError& e) {
        report.diverged = true;
        report.divergence = where + ": " + e.what();
        return result;
      }
      loss_sum += loss.value;
      ++batches;
      correct += count_correct(scores, labels);
    }

    const auto v = eval_pass(model, val, config.batch_size);
    if (!std::isfinite(v.loss)) {
      report.diverged = true;
      report.divergence = "epoch " + std::to_string(epoch + 1) + ": validation loss is not finite";
      return result;
    }
    report.train_loss.push_back(loss_sum / static_cast<double>(batches));
    report.train_acc.push_back(static_cast<double>(correct) / static_cast<double>(train.size()));
    report.val_loss.push_back(v.loss);
    report.val_acc.push_back(v.accuracy);

    if (epoch == 0 || v.loss < best_loss) {
      best_loss = v.loss;
      report.best_epoch = epoch;
      report.best_checkpoint_bytes = encode_checkpoint(model);
      if (config.out_dir) {
        const auto path = *config.out_dir / "best.ckpt";
        std::filesystem::create_directories(*config.out_dir);
        write_file(path, report.best_checkpoint_bytes);
        report.best_checkpoint = path;
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw ParameterError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= classes_ || predicted >= classes_) throw ParameterError("class index out of range");
  ++counts_[truth * classes_ + predicted];
  ++total_;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < classes_; ++i) t += counts_[i * classes_ + i];
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < classes_; ++j) s += at(truth, j);
  return s;
}

std::uint64_t ConfusionMatrix::column_sum(std::size_t predicted) const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < classes_; ++i) s += at(i, predicted);
  return s;
}

double ConfusionMatrix::accuracy() const {
  return total_ == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(total_);
}

std::string ConfusionMatrix::to_csv(const std::vector<std::string>& names) const {
  std::vector<std::string> header;
  for (std::size_t j = 0; j < classes_; ++j) header.push_back(names.size() == classes_ ? names[j] : std::to_string(j));
  std::string out = csv::join(header) + "\n";
  for (std::size_t i = 0; i < classes_; ++i) {
    for (std::size_t j = 0; j < classes_; ++j) {
      if (j) out += ',';
      out += std::to_string(at(i, j));
    }
    out += '\n';
  }
  return out;
}

Evaluation evaluate(Model<float>& model, const SampleSet& set, std::size_t batch_size) {
  if (set.size() == 0) throw ParameterError("cannot evaluate an empty subset");
  if (batch_size == 0) throw ParameterError("batch size must be at least 1");
  check_compatible(model, set, "evaluate");
  Evaluation ev{0.0, 0, ConfusionMatrix(set.class_count)};
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t c = model.class_count();
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, set.size() - start);
    std::span<const std::size_t> idx(order.data() + start, n);
    const auto probs = model.forward(set.batch(idx), Mode::eval);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t pred = argmax<float>({probs.data() + k * c, c});
      const std::size_t truth = set.labels[idx[k]];
      ev.confusion.add(truth, pred);
      ev.correct += pred == truth;
    }
  }
  ev.accuracy = ev.confusion.accuracy();
  return ev;
}

std::size_t model_input_side(const Model<float>& model) {
  const auto& s = model.graph().input_shape;
  if (s.size() != 3 || s[0] != 1 || s[1] != s[2]) {
    throw ConfigError("inference needs a square single-channel model input, got " + to_string(s));
  }
  return s[1];
}

std::string class_label(const ModelGraph& graph, std::size_t index) {
  return index < graph.class_names.size() ? graph.class_names[index] : std::to_string(index);
}

Prediction infer_single(Model<float>& model, const GrayImage& image, double crop_fraction) {
  const std::size_t side = model_input_side(model);
  const auto x = preprocess_image(image, side, crop_fraction).reshaped({1, 1, side, side});
  const auto probs = model.forward(x, Mode::eval);
  Prediction p;
  p.probabilities.assign(probs.values().begin(), probs.values().end());
  p.class_index = argmax<double>(p.probabilities);
  p.class_name = class_label(model.graph(), p.class_index);
  p.probability = p.probabilities[p.class_index];
  return p;
}

Prediction infer_file(Model<float>& model, const std::filesystem::path& image, double crop_fraction) {
  return infer_single(model, read_image(image), crop_fraction);
}

LatencyReport summarize_latency(std::vector<double> samples) {
  if (samples.empty()) throw ParameterError("latency report needs at least one sample");
  LatencyReport r;
  r.samples_ms = samples;
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  double sum = 0.0;
  for (double v : samples) sum += v;
  r.mean_ms = std::clamp(sum / static_cast<double>(n), samples.front(), samples.back());
  r.median_ms = n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
  r.p95_ms = samples[static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n))) - 1];
  r.min_ms = samples.front();
  r.max_ms = samples.back();
  return r;
}

LatencyReport bench_inference(Model<float>& model, const std::filesystem::path& image, std::size_t iterations,
                              double crop_fraction) {
  if (iterations == 0) throw ParameterError("iterations must be at least 1");
  infer_file(model, image, crop_fraction);
  std::vector<double> samples;
  samples.reserve(iterations);
  for (std::size_t i = 0; i < iterations; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    infer_file(model, image, crop_fraction);
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return summarize_latency(std::move(samples));
}

std::string curves_csv(const TrainReport& r) {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (std::size_t e = 0; e < r.epochs(); ++e) {
    out += std::to_string(e + 1) + "," + csv::number(r.train_loss[e]) + "," + csv::number(r.train_acc[e]) + "," +
           csv::number(r.val_loss[e]) + "," + csv::number(r.val_acc[e]) + "\n";
  }
  return out;
}

void write_curves_csv(const TrainReport& report, const std::filesystem::path& path) {
  if (report.epochs() == 0) throw ParameterError("no completed epochs to write");
  csv::write_file(path, curves_csv(report));
}

std::vector<CurveRow> read_curves_csv(const std::filesystem::path& path) {
  const auto rows = csv::read_file(path);
  if (rows.empty() || rows[0] != std::vector<std::string>{"epoch", "train_loss", "train_acc", "val_loss", "val_acc"}) {
    throw FormatError(path.string() + ": unexpected curves header", 0);
  }
  std::vector<CurveRow> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 5) throw FormatError(path.string() + ": row " + std::to_string(r + 1) + " needs 5 fields", 0);
    try {
      out.push_back({std::stoul(rows[r][0]), std::stod(rows[r][1]), std::stod(rows[r][2]), std::stod(rows[r][3]),
                     std::stod(rows[r][4])});
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ": row " + std::to_string(r + 1) + " is not numeric", 0);
    }
  }
  return out;
}

}  // namespace asl
