#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "asl/layers.hpp"
#include "asl/tensor.hpp"

namespace asl {

/// gd, sgd and minibatch share one update rule; they differ only in how much
/// data the caller averages into the gradient (whole set, one example, one batch).
enum class OptimizerKind { gd, sgd, minibatch, adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// theta <- theta - lr * grad. Throws NumericError naming `name` if any
/// gradient element is non-finite; nothing is modified in that case.
template <typename T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, double lr, std::string_view name = "param");

/// Per-parameter Adam moments.
template <typename T>
struct AdamMoments {
  Tensor<T> m;
  Tensor<T> v;
};

template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerKind kind, double lr, AdamSettings adam = {});

  OptimizerKind kind() const noexcept { return kind_; }
  double learning_rate() const noexcept { return lr_; }
  std::uint64_t steps() const noexcept { return t_; }
  const std::vector<AdamMoments<T>>& moments() const noexcept { return moments_; }

  /// One update over every parameter. All gradients are checked for
  /// finiteness before any parameter changes.
  void step(std::span<const ParamRef<T>> params);

 private:
  OptimizerKind kind_;
  double lr_;
  AdamSettings adam_;
  std::uint64_t t_ = 0;
  std::vector<AdamMoments<T>> moments_;
};

}  // namespace asl
