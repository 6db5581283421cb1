#include "asl/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "asl/losses.hpp"

namespace asl {

double euclidean_distance(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw ShapeError("distance between vectors of length " + std::to_string(x.size()) + " and " +
                     std::to_string(y.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return std::sqrt(s);
}

KnnModel::KnnModel(std::size_t k_, std::size_t dim_) : k(k_), dim(dim_) {
  if (k == 0) throw ParameterError("k must be at least 1");
  if (dim == 0) throw ParameterError("feature dimension must be positive");
}

void KnnModel::add(std::span<const double> x, std::size_t label) {
  if (x.size() != dim) throw ShapeError("feature of length " + std::to_string(x.size()) + ", model expects " + std::to_string(dim));
  features.insert(features.end(), x.begin(), x.end());
  labels.push_back(label);
}

std::size_t knn_classify(const KnnModel& model, std::span<const double> query) {
  if (model.size() == 0) throw StateError("knn model holds no points");
  if (model.k > model.size()) {
    throw ParameterError("k = " + std::to_string(model.k) + " exceeds the " + std::to_string(model.size()) +
                         " stored points");
  }
  std::vector<std::pair<double, std::size_t>> dist(model.size());
  for (std::size_t i = 0; i < model.size(); ++i) dist[i] = {euclidean_distance(model.point(i), query), i};
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(model.k), dist.end());

  std::vector<std::size_t> votes;
  for (std::size_t r = 0; r < model.k; ++r) {
    const std::size_t label = model.labels[dist[r].second];
    if (label >= votes.size()) votes.resize(label + 1, 0);
    ++votes[label];
  }
  const std::size_t best = *std::max_element(votes.begin(), votes.end());
  // Neighbours are in distance order, so the first one from a top class wins the tie.
  for (std::size_t r = 0; r < model.k; ++r) {
    const std::size_t label = model.labels[dist[r].second];
    if (votes[label] == best) return label;
  }
  return 0;
}

Tensor<double> linear_scores(const LinearModel& model, std::span<const double> x) {
  const auto& w = model.weights;
  if (w.rank() != 2) throw ShapeError("weights must be [C, D], got " + to_string(w.shape()));
  if (model.bias.shape() != Shape{w.dim(0)}) {
    throw ShapeError("bias " + to_string(model.bias.shape()) + " does not match weights " + to_string(w.shape()));
  }
  if (x.size() != w.dim(1)) {
    throw ShapeError("input of length " + std::to_string(x.size()) + " for weights " + to_string(w.shape()));
  }
  const std::size_t c = w.dim(0), d = w.dim(1);
  Tensor<double> out({c});
  for (std::size_t i = 0; i < c; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += w[i * d + j] * x[j];
    out[i] = s + model.bias[i];
  }
  return out;
}

namespace {

void check_batch(const LogisticModel& m, const Tensor<double>& x, std::span<const double> y) {
  if (x.rank() != 2 || x.dim(1) != m.w.size()) {
    throw ShapeError("logistic batch " + to_string(x.shape()) + " for " + std::to_string(m.w.size()) + " weights");
  }
  if (y.size() != x.dim(0)) throw ShapeError("label count differs from batch size");
  for (double v : y) {
    if (v != 0.0 && v != 1.0) throw ParameterError("logistic labels must be 0 or 1");
  }
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

double logistic_predict(const LogisticModel& model, std::span<const double> x) {
  if (x.size() != model.w.size()) throw ShapeError("input length differs from weight count");
  double z = model.b;
  for (std::size_t j = 0; j < x.size(); ++j) z += model.w[j] * x[j];
  return sigmoid(z);
}

double logistic_loss(const LogisticModel& model, const Tensor<double>& x, std::span<const double> y) {
  check_batch(model, x, y);
  const std::size_t m = x.dim(0), d = x.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double p = std::clamp(logistic_predict(model, {x.data() + i * d, d}), kProbabilityEpsilon,
                                1.0 - kProbabilityEpsilon);
    total -= y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
  }
  return total / static_cast<double>(m);
}

void logistic_train_step(LogisticModel& model, const Tensor<double>& x, std::span<const double> y, double alpha) {
  if (!(alpha > 0.0)) throw ParameterError("learning rate must be positive");
  check_batch(model, x, y);
  const std::size_t m = x.dim(0), d = x.dim(1);
  std::vector<double> gw(d, 0.0);
  double gb = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double err = logistic_predict(model, {x.data() + i * d, d}) - y[i];
    for (std::size_t j = 0; j < d; ++j) gw[j] += err * x[i * d + j];
    gb += err;
  }
  const double s = alpha / static_cast<double>(m);
  for (std::size_t j = 0; j < d; ++j) model.w[j] -= s * gw[j];
  model.b -= s * gb;
}

}  // namespace asl
