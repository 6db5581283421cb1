#include "asl/losses.hpp"

#include <cmath>

#include "asl/layers.hpp"

namespace asl {
namespace {

template <typename T>
void check_labels(const Tensor<T>& scores, std::span<const std::size_t> labels, const char* what) {
  if (scores.rank() != 2) throw ShapeError(std::string(what) + ": expected [batch, C], got " + to_string(scores.shape()));
  if (labels.size() != scores.dim(0)) {
    throw ShapeError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(scores.dim(0)));
  }
  for (auto l : labels) {
    if (l >= scores.dim(1)) {
      throw ParameterError(std::string(what) + ": label " + std::to_string(l) + " out of range [0, " +
                           std::to_string(scores.dim(1)) + ")");
    }
  }
}

template <typename T>
T clamp_probability(T p) {
  const T eps = static_cast<T>(kProbabilityEpsilon);
  return std::clamp(p, eps, T{1} - eps);
}

}  // namespace

template <typename T>
LossValue<T> regression_loss(RegressionKind kind, const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred.shape(), target.shape(), "regression_loss");
  const T n = static_cast<T>(pred.size());
  Tensor<T> grad(pred.shape());
  T total{0};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred[i] - target[i];
    if (kind == RegressionKind::mse) {
      total += d * d;
      grad[i] = T{2} * d / n;
    } else {
      total += std::abs(d);
      grad[i] = (d > T{0} ? T{1} : d < T{0} ? T{-1} : T{0}) / n;
    }
  }
  return {total / n, std::move(grad)};
}

template <typename T>
LossValue<T> binary_cross_entropy(const Tensor<T>& p, const Tensor<T>& y) {
  require_same_shape(p.shape(), y.shape(), "binary_cross_entropy");
  const T n = static_cast<T>(p.size());
  Tensor<T> grad(p.shape());
  T total{0};
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (y[i] != T{0} && y[i] != T{1}) throw ParameterError("binary_cross_entropy: labels must be 0 or 1");
    const T q = clamp_probability(p[i]);
    total -= y[i] * std::log(q) + (T{1} - y[i]) * std::log(T{1} - q);
    grad[i] = (q - y[i]) / (q * (T{1} - q)) / n;
  }
  return {total / n, std::move(grad)};
}

template <typename T>
LossValue<T> softmax_cross_entropy(const Tensor<T>& scores, std::span<const std::size_t> labels) {
  check_labels(scores, labels, "softmax_cross_entropy");
  const std::size_t batch = scores.dim(0), c = scores.dim(1);
  Tensor<T> grad = softmax_rows(scores);
  T total{0};
  for (std::size_t i = 0; i < batch; ++i) {
    const T* z = scores.data() + i * c;
    std::size_t top = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (z[j] > z[top]) top = j;
    }
    T rest{0};
    for (std::size_t j = 0; j < c; ++j) {
      if (j != top) rest += std::exp(z[j] - z[top]);
    }
    // log-sum-exp form stays finite even when the softmax underflows to 0.
    total += std::log1p(rest) - (z[labels[i]] - z[top]);
    grad[i * c + labels[i]] -= T{1};
  }
  const T inv_batch = T{1} / static_cast<T>(batch);
  for (auto& g : grad.values()) g *= inv_batch;
  return {total * inv_batch, std::move(grad)};
}

template <typename T>
LossValue<T> categorical_cross_entropy(const Tensor<T>& pred, const Tensor<T>& onehot) {
  require_same_shape(pred.shape(), onehot.shape(), "categorical_cross_entropy");
  if (pred.rank() != 2) throw ShapeError("categorical_cross_entropy: expected [batch, C]");
  const std::size_t batch = pred.dim(0), c = pred.dim(1);
  for (std::size_t i = 0; i < batch; ++i) {
    std::size_t ones = 0;
    double row_sum = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const T t = onehot[i * c + j];
      if (t == T{1}) ++ones;
      else if (t != T{0}) throw ParameterError("categorical_cross_entropy: target row is not one-hot");
      row_sum += static_cast<double>(pred[i * c + j]);
    }
    if (ones != 1) throw ParameterError("categorical_cross_entropy: target row is not one-hot");
    if (std::abs(row_sum - 1.0) > 1e-6) throw ParameterError("categorical_cross_entropy: prediction row not on the simplex");
  }
  const T scale_factor = T{1} / static_cast<T>(c * batch);
  Tensor<T> grad(pred.shape());
  T total{0};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T q = clamp_probability(pred[i]);
    const T y = onehot[i];
    total -= y * std::log(q) + (T{1} - y) * std::log(T{1} - q);
    grad[i] = -(y / q - (T{1} - y) / (T{1} - q)) * scale_factor;
  }
  return {total * scale_factor, std::move(grad)};
}

template <typename T>
LossValue<T> svm_hinge_loss(const Tensor<T>& scores, std::span<const std::size_t> labels, T margin) {
  check_labels(scores, labels, "svm_hinge_loss");
  if (!(margin >= T{0})) throw ParameterError("svm_hinge_loss: margin must be >= 0");
  const std::size_t batch = scores.dim(0), c = scores.dim(1);
  const T inv_batch = T{1} / static_cast<T>(batch);
  Tensor<T> grad(scores.shape());
  T total{0};
  for (std::size_t i = 0; i < batch; ++i) {
    const T* s = scores.data() + i * c;
    const std::size_t y = labels[i];
    std::size_t violations = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == y) continue;
      const T m = s[j] - s[y] + margin;
      if (m > T{0}) {
        total += m;
        grad[i * c + j] = inv_batch;
        ++violations;
      }
    }
    grad[i * c + y] = -static_cast<T>(violations) * inv_batch;
  }
  return {total * inv_batch, std::move(grad)};
}

template <typename T>
Tensor<T> one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  Tensor<T> out({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw ParameterError("one_hot: label out of range");
    out[i * classes + labels[i]] = T{1};
  }
  return out;
}

#define ASL_INSTANTIATE(T)                                                                        \
  template LossValue<T> regression_loss<T>(RegressionKind, const Tensor<T>&, const Tensor<T>&); \
  template LossValue<T> binary_cross_entropy<T>(const Tensor<T>&, const Tensor<T>&);            \
  template LossValue<T> softmax_cross_entropy<T>(const Tensor<T>&, std::span<const std::size_t>); \
  template LossValue<T> categorical_cross_entropy<T>(const Tensor<T>&, const Tensor<T>&);       \
  template LossValue<T> svm_hinge_loss<T>(const Tensor<T>&, std::span<const std::size_t>, T);   \
  template Tensor<T> one_hot<T>(std::span<const std::size_t>, std::size_t);
ASL_INSTANTIATE(float)
ASL_INSTANTIATE(double)
#undef ASL_INSTANTIATE

}  // namespace asl
