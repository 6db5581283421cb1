#pragma once

#include <cstddef>
#include <span>

#include "asl/tensor.hpp"

namespace asl {

/// Batch-mean loss and its gradient with respect to the prediction input.
template <typename T>
struct LossValue {
  T value;
  Tensor<T> gradient;
};

/// Clamp applied to probabilities before any logarithm.
inline constexpr double kProbabilityEpsilon = 1e-12;

enum class RegressionKind { mse, mae };

/// mse = mean (y - yhat)^2, mae = mean |y - yhat|; mean over all elements.
template <typename T>
LossValue<T> regression_loss(RegressionKind kind, const Tensor<T>& pred, const Tensor<T>& target);

/// -mean[y log p + (1-y) log(1-p)] for labels in {0, 1}.
template <typename T>
LossValue<T> binary_cross_entropy(const Tensor<T>& p, const Tensor<T>& y);

/// Mean over the batch of -log softmax(scores)[label]. Gradient is
/// (softmax(scores) - onehot) / batch.
template <typename T>
LossValue<T> softmax_cross_entropy(const Tensor<T>& scores, std::span<const std::size_t> labels);

/// Per-class binary cross-entropy summed over classes, divided by the class
/// count and averaged over the batch. `pred` rows must lie on the simplex and
/// `onehot` rows must be one-hot.
template <typename T>
LossValue<T> categorical_cross_entropy(const Tensor<T>& pred, const Tensor<T>& onehot);

/// Multiclass hinge: sum over j != y of max(0, s_j - s_y + margin), batch-averaged.
template <typename T>
LossValue<T> svm_hinge_loss(const Tensor<T>& scores, std::span<const std::size_t> labels, T margin = T{1});

template <typename T>
Tensor<T> one_hot(std::span<const std::size_t> labels, std::size_t classes);

}  // namespace asl
