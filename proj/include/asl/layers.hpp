#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "asl/kernels.hpp"
#include "asl/prng.hpp"
#include "asl/tensor.hpp"

namespace asl {

enum class LayerKind { dense, conv2d, maxpool, meanpool, dropout, activation, flatten, softmax, residual_add };
enum class ActivationKind { step, sigmoid, tanh, relu };
enum class Padding { none, same };
enum class Mode { train, eval };

std::string_view to_string(LayerKind kind);
std::string_view to_string(ActivationKind kind);

/// Declarative description of one layer. Only the fields relevant to `kind`
/// are meaningful; the rest keep their defaults so specs compare by value.
struct LayerSpec {
  LayerKind kind = LayerKind::flatten;
  std::size_t units = 0;   // dense outputs or conv output channels
  std::size_t kernel = 0;  // conv / pool window side
  std::size_t stride = 1;
  Padding padding = Padding::none;
  double rate = 0.0;  // dropout probability
  ActivationKind activation = ActivationKind::relu;
  // residual_add: 1x1 projection applied to the skip path; 0 means identity.
  std::size_t projection = 0;
  std::size_t projection_stride = 1;

  static LayerSpec dense(std::size_t units);
  static LayerSpec conv(std::size_t out_channels, std::size_t kernel, std::size_t stride, Padding pad);
  static LayerSpec maxpool(std::size_t kernel, std::size_t stride, Padding pad = Padding::none);
  static LayerSpec meanpool(std::size_t kernel, std::size_t stride, Padding pad = Padding::none);
  static LayerSpec dropout(double rate);
  static LayerSpec act(ActivationKind a);
  static LayerSpec flatten();
  static LayerSpec softmax();
  static LayerSpec residual_add(std::size_t projection = 0, std::size_t projection_stride = 1);

  bool has_params() const noexcept {
    return kind == LayerKind::dense || kind == LayerKind::conv2d ||
           (kind == LayerKind::residual_add && projection > 0);
  }

  bool operator==(const LayerSpec&) const = default;
};

/// Rejects non-positive sizes and rates outside [0, 1).
void validate(const LayerSpec& spec);

/// Per-sample output shape (no batch axis) for an input of per-sample shape `in`.
Shape output_shape(const LayerSpec& spec, const Shape& in);

/// Zero padding on each side for "same" convolution / pooling windows.
inline std::size_t same_padding(std::size_t kernel) { return (kernel - 1) / 2; }

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

/// A layer instance with parameters, gradients and the forward cache needed by
/// backward. Forward in train mode fills the cache; backward consumes and
/// clears it. Eval-mode forward leaves no cache behind.
template <typename T>
class Layer {
 public:
  Layer(LayerSpec spec, Shape input_shape)
      : spec_(spec), input_shape_(std::move(input_shape)), output_shape_(asl::output_shape(spec_, input_shape_)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const LayerSpec& spec() const noexcept { return spec_; }
  const Shape& input_shape() const noexcept { return input_shape_; }
  const Shape& output_shape() const noexcept { return output_shape_; }

  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode, Prng& rng) = 0;
  virtual Tensor<T> backward(const Tensor<T>& upstream) = 0;
  virtual std::vector<ParamRef<T>> params() { return {}; }
  virtual bool has_cache() const noexcept = 0;

 protected:
  /// Batch size of `x`, after checking that its trailing axes equal `expected`.
  std::size_t check_batch(const Tensor<T>& x, const Shape& expected, const char* what) const;
  [[noreturn]] void throw_no_cache() const;

  LayerSpec spec_;
  Shape input_shape_;
  Shape output_shape_;
};

template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(const LayerSpec& spec, const Shape& in);
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Prng& rng) override;
  Tensor<T> backward(const Tensor<T>& upstream) override;
  std::vector<ParamRef<T>> params() override;
  bool has_cache() const noexcept override { return input_.has_value(); }

  Tensor<T> weight, bias, weight_grad, bias_grad;  // W [in, out], b [out]

 private:
  std::optional<Tensor<T>> input_;
};

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(const LayerSpec& spec, const Shape& in);
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Prng& rng) override;
  Tensor<T> backward(const Tensor<T>& upstream) override;
  std::vector<ParamRef<T>> params() override;
  bool has_cache() const noexcept override { return input_.has_value(); }

  Tensor<T> weight, bias, weight_grad, bias_grad;  // W [out, in, k, k], b [out]

 private:
  kernels::ConvShape geometry(std::size_t batch) const;
  std::optional<Tensor<T>> input_;
};

template <typename T>
class Pool2d final : public Layer<T> {
 public:
  Pool2d(const LayerSpec& spec, const Shape& in);
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Prng& rng) override;
  Tensor<T> backward(const Tensor<T>& upstream) override;
  bool has_cache() const noexcept override { return batch_.has_value(); }

 private:
  std::optional<std::size_t> batch_;
  std::vector<std::size_t> argmax_;
};

template <typename T>
class Dropout final : public Layer<T> {
 public:
  Dropout(const LayerSpec& spec, const Shape& in);
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Prng& rng) override;
  Tensor<T> backward(const Tensor<T>& upstream) override;
  bool has_cache() const noexcept override { return mask_.has_value(); }

 private:
  std::optional<Tensor<T>> mask_;  // 0 or 1/(1-rate)
};

template <typename T>
class Activation final : public Layer<T> {
 public:
  Activation(const LayerSpec& spec, const Shape& in);
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Prng& rng) override;
  Tensor<T> backward(const Tensor<T>& upstream) override;
  bool has_cache() const noexcept override { return cache_.has_value(); }

 private:
  std::optional<Tensor<T>> cache_;  // input for relu/step, output for sigmoid/tanh
};

template <typename T>
class Flatten final : public Layer<T> {
 public:
  Flatten(const LayerSpec& spec, const Shape& in);
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Prng& rng) override;
  Tensor<T> backward(const Tensor<T>& upstream) override;
  bool has_cache() const noexcept override { return batch_.has_value(); }

 private:
  std::optional<std::size_t> batch_;
};

template <typename T>
class Softmax final : public Layer<T> {
 public:
  Softmax(const LayerSpec& spec, const Shape& in);
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Prng& rng) override;
  Tensor<T> backward(const Tensor<T>& upstream) override;
  bool has_cache() const noexcept override { return output_.has_value(); }

 private:
  std::optional<Tensor<T>> output_;
};

/// Output = branch + skip, where skip is the branch input optionally passed
/// through a 1x1 strided projection. The plain Layer forward is unusable here;
/// the model calls forward_add with both operands.
template <typename T>
class ResidualAdd final : public Layer<T> {
 public:
  ResidualAdd(const LayerSpec& spec, const Shape& branch_out, const Shape& skip_in);
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Prng& rng) override;
  Tensor<T> backward(const Tensor<T>& upstream) override;
  std::vector<ParamRef<T>> params() override;
  bool has_cache() const noexcept override { return cached_; }

  Tensor<T> forward_add(const Tensor<T>& branch, const Tensor<T>& skip, Mode mode, Prng& rng);
  /// (gradient w.r.t. branch output, gradient w.r.t. skip input)
  std::pair<Tensor<T>, Tensor<T>> backward_add(const Tensor<T>& upstream);

  const Shape& skip_shape() const noexcept { return skip_shape_; }
  Conv2d<T>* projection() noexcept { return projection_.get(); }

 private:
  Shape skip_shape_;
  std::unique_ptr<Conv2d<T>> projection_;
  bool cached_ = false;
};

/// Shape the skip input must have for a residual_add spec whose branch ends in `branch_out`.
Shape projected_skip_shape(const LayerSpec& spec, const Shape& skip_in);

/// Builds a layer whose weights are drawn N(0, gain/fan_in) and biases zeroed.
/// `skip_in` is only used for residual_add.
template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec, const Shape& in, Prng& init_rng,
                                     double gain = 2.0, const Shape& skip_in = {});

// Stateless forward helpers mirroring the layer kernels.
template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& scores);
template <typename T>
T activate(ActivationKind kind, T x);

}  // namespace asl
