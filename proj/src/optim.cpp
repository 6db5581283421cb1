#include "asl/optim.hpp"

#include <cmath>

namespace asl {

std::string_view to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::gd: return "gd";
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::minibatch: return "minibatch";
    case OptimizerKind::adam: return "adam";
  }
  return "?";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "gd") return OptimizerKind::gd;
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "minibatch") return OptimizerKind::minibatch;
  if (name == "adam") return OptimizerKind::adam;
  throw ParameterError("unknown optimizer '" + std::string(name) + "' (expected gd, sgd, minibatch or adam)");
}

namespace {

template <typename T>
void require_finite(const Tensor<T>& grad, std::string_view name) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw NumericError("non-finite gradient in " + std::string(name) + " at element " + std::to_string(i));
    }
  }
}

}  // namespace

template <typename T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, double lr, std::string_view name) {
  require_same_shape(param.shape(), grad.shape(), "sgd_step");
  if (!(lr >= 0.0)) throw ParameterError("learning rate must be non-negative");
  require_finite(grad, name);
  const T a = static_cast<T>(lr);
  for (std::size_t i = 0; i < param.size(); ++i) param[i] -= a * grad[i];
}

template <typename T>
Optimizer<T>::Optimizer(OptimizerKind kind, double lr, AdamSettings adam) : kind_(kind), lr_(lr), adam_(adam) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ParameterError("learning rate must be finite and non-negative");
  if (kind == OptimizerKind::adam &&
      !(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.epsilon > 0)) {
    throw ParameterError("adam: betas must lie in [0, 1) and epsilon must be positive");
  }
}

template <typename T>
void Optimizer<T>::step(std::span<const ParamRef<T>> params) {
  for (const auto& p : params) {
    require_same_shape(p.value->shape(), p.grad->shape(), "optimizer step");
    require_finite(*p.grad, p.name);
  }
  ++t_;
  if (kind_ != OptimizerKind::adam) {
    for (const auto& p : params) sgd_step(*p.value, *p.grad, lr_, p.name);
    return;
  }

  if (moments_.empty()) {
    moments_.reserve(params.size());
    for (const auto& p : params) moments_.push_back({Tensor<T>(p.value->shape()), Tensor<T>(p.value->shape())});
  }
  if (moments_.size() != params.size()) throw StateError("adam: parameter list changed between steps");

  const double b1 = adam_.beta1, b2 = adam_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& theta = *params[k].value;
    const Tensor<T>& g = *params[k].grad;
    auto& [m, v] = moments_[k];
    require_same_shape(m.shape(), theta.shape(), "adam moments");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / c1;
      const double v_hat = vi / c2;
      theta[i] = static_cast<T>(static_cast<double>(theta[i]) - lr_ * m_hat / (std::sqrt(v_hat) + adam_.epsilon));
    }
  }
}

template void sgd_step<float>(Tensor<float>&, const Tensor<float>&, double, std::string_view);
template void sgd_step<double>(Tensor<double>&, const Tensor<double>&, double, std::string_view);
template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace asl
