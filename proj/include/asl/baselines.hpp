#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "asl/tensor.hpp"

namespace asl {

double euclidean_distance(std::span<const double> x, std::span<const double> y);

/// Stored feature vectors with labels; classify by majority vote.
struct KnnModel {
  std::size_t k = 5;
  std::size_t dim = 0;
  std::vector<double> features;  // row-major [count, dim]
  std::vector<std::size_t> labels;

  KnnModel(std::size_t k, std::size_t dim);
  void add(std::span<const double> x, std::size_t label);
  std::size_t size() const { return labels.size(); }
  std::span<const double> point(std::size_t i) const { return {features.data() + i * dim, dim}; }
};

/// Majority vote among the k nearest. Distance ties go to the lower stored
/// index; vote ties go to the tied class whose nearest member is closest.
std::size_t knn_classify(const KnnModel& model, std::span<const double> query);

/// scores = W x + b with W of shape [C, D] and b of shape [C].
struct LinearModel {
  Tensor<double> weights;
  Tensor<double> bias;
};

Tensor<double> linear_scores(const LinearModel& model, std::span<const double> x);

struct LogisticModel {
  std::vector<double> w;
  double b = 0.0;
};

double logistic_predict(const LogisticModel& model, std::span<const double> x);

/// Mean binary cross-entropy of the model over rows of `x` ([m, D]).
double logistic_loss(const LogisticModel& model, const Tensor<double>& x, std::span<const double> y);

/// One full-batch gradient step: w_j -= (alpha/m) sum (yhat - y) x_j, b likewise.
void logistic_train_step(LogisticModel& model, const Tensor<double>& x, std::span<const double> y, double alpha);

}  // namespace asl
