#include "asl/layers.hpp"

#include <cmath>

namespace asl {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::meanpool: return "meanpool";
    case LayerKind::dropout: return "dropout";
    case LayerKind::activation: return "activation";
    case LayerKind::flatten: return "flatten";
    case LayerKind::softmax: return "softmax";
    case LayerKind::residual_add: return "residual";
  }
  return "?";
}

std::string_view to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::step: return "step";
    case ActivationKind::sigmoid: return "sigmoid";
    case ActivationKind::tanh: return "tanh";
    case ActivationKind::relu: return "relu";
  }
  return "?";
}

LayerSpec LayerSpec::dense(std::size_t units) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.units = units;
  return s;
}

LayerSpec LayerSpec::conv(std::size_t out_channels, std::size_t kernel, std::size_t stride, Padding pad) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.units = out_channels;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = pad;
  return s;
}

LayerSpec LayerSpec::maxpool(std::size_t kernel, std::size_t stride, Padding pad) {
  LayerSpec s;
  s.kind = LayerKind::maxpool;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = pad;
  return s;
}

LayerSpec LayerSpec::meanpool(std::size_t kernel, std::size_t stride, Padding pad) {
  LayerSpec s = maxpool(kernel, stride, pad);
  s.kind = LayerKind::meanpool;
  return s;
}

LayerSpec LayerSpec::dropout(double rate) {
  LayerSpec s;
  s.kind = LayerKind::dropout;
  s.rate = rate;
  return s;
}

LayerSpec LayerSpec::act(ActivationKind a) {
  LayerSpec s;
  s.kind = LayerKind::activation;
  s.activation = a;
  return s;
}

LayerSpec LayerSpec::flatten() { return LayerSpec{}; }

LayerSpec LayerSpec::softmax() {
  LayerSpec s;
  s.kind = LayerKind::softmax;
  return s;
}

LayerSpec LayerSpec::residual_add(std::size_t projection, std::size_t projection_stride) {
  LayerSpec s;
  s.kind = LayerKind::residual_add;
  s.projection = projection;
  s.projection_stride = projection_stride;
  return s;
}

void validate(const LayerSpec& spec) {
  auto fail = [&](const std::string& msg) {
    throw ParameterError(std::string(to_string(spec.kind)) + ": " + msg);
  };
  switch (spec.kind) {
    case LayerKind::dense:
      if (spec.units == 0) fail("units must be positive");
      break;
    case LayerKind::conv2d:
      if (spec.units == 0) fail("output channels must be positive");
      if (spec.kernel == 0) fail("kernel must be positive");
      if (spec.stride == 0) fail("stride must be positive");
      if (spec.padding == Padding::same && spec.kernel % 2 == 0) fail("same padding needs an odd kernel");
      break;
    case LayerKind::maxpool:
    case LayerKind::meanpool:
      if (spec.kernel == 0) fail("kernel must be positive");
      if (spec.stride == 0) fail("stride must be positive");
      break;
    case LayerKind::dropout:
      if (!(spec.rate >= 0.0 && spec.rate < 1.0)) fail("rate must lie in [0, 1)");
      break;
    case LayerKind::residual_add:
      if (spec.projection > 0 && spec.projection_stride == 0) fail("projection stride must be positive");
      break;
    case LayerKind::activation:
    case LayerKind::flatten:
    case LayerKind::softmax:
      break;
  }
}

namespace {

std::size_t window_out(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad,
                       const LayerSpec& spec) {
  if (kernel > in + 2 * pad) {
    throw ShapeError(std::string(to_string(spec.kind)) + ": kernel " + std::to_string(kernel) +
                     " exceeds padded extent " + std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace

Shape output_shape(const LayerSpec& spec, const Shape& in) {
  validate(spec);
  const auto name = std::string(to_string(spec.kind));
  switch (spec.kind) {
    case LayerKind::dense:
      if (in.size() != 1) throw ShapeError("dense expects a flat input, got " + to_string(in));
      return {spec.units};
    case LayerKind::conv2d:
    case LayerKind::maxpool:
    case LayerKind::meanpool: {
      if (in.size() != 3) throw ShapeError(name + " expects [C,H,W], got " + to_string(in));
      const std::size_t pad = spec.padding == Padding::same ? same_padding(spec.kernel) : 0;
      const std::size_t c = spec.kind == LayerKind::conv2d ? spec.units : in[0];
      return {c, window_out(in[1], spec.kernel, spec.stride, pad, spec),
              window_out(in[2], spec.kernel, spec.stride, pad, spec)};
    }
    case LayerKind::flatten:
      return {element_count(in)};
    case LayerKind::softmax:
      if (in.size() != 1) throw ShapeError("softmax expects a flat input, got " + to_string(in));
      return in;
    case LayerKind::dropout:
    case LayerKind::activation:
    case LayerKind::residual_add:
      return in;
  }
  return in;
}

Shape projected_skip_shape(const LayerSpec& spec, const Shape& skip_in) {
  if (spec.projection == 0) return skip_in;
  return output_shape(LayerSpec::conv(spec.projection, 1, spec.projection_stride, Padding::none), skip_in);
}

// ---------------------------------------------------------------------------

template <typename T>
std::size_t Layer<T>::check_batch(const Tensor<T>& x, const Shape& expected, const char* what) const {
  const Shape& s = x.shape();
  if (s.size() != expected.size() + 1 || !std::equal(expected.begin(), expected.end(), s.begin() + 1)) {
    throw ShapeError(std::string(to_string(spec_.kind)) + " " + what + ": expected [batch]+" +
                     to_string(expected) + ", got " + to_string(s));
  }
  return s[0];
}

template <typename T>
void Layer<T>::throw_no_cache() const {
  throw StateError(std::string(to_string(spec_.kind)) + ": backward called without a train-mode forward");
}

namespace {

Shape with_batch(std::size_t batch, const Shape& s) {
  Shape out{batch};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Dense

template <typename T>
Dense<T>::Dense(const LayerSpec& spec, const Shape& in)
    : Layer<T>(spec, in),
      weight({in.at(0), spec.units}),
      bias({spec.units}),
      weight_grad({in.at(0), spec.units}),
      bias_grad({spec.units}) {}

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (b.rank() != 1 || w.rank() != 2 || b.dim(0) != w.dim(1)) {
    throw ShapeError("dense: bias " + to_string(b.shape()) + " does not match weights " + to_string(w.shape()));
  }
  Tensor<T> y = matmul(x, w);
  const std::size_t n = w.dim(1);
  for (std::size_t i = 0; i < y.dim(0); ++i) {
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] += b[j];
  }
  return y;
}

template <typename T>
Tensor<T> Dense<T>::forward(const Tensor<T>& x, Mode mode, Prng&) {
  this->check_batch(x, this->input_shape_, "input");
  if (mode == Mode::train) input_ = x;
  return dense_forward(x, weight, bias);
}

template <typename T>
Tensor<T> Dense<T>::backward(const Tensor<T>& upstream) {
  if (!input_) this->throw_no_cache();
  const std::size_t batch = this->check_batch(upstream, this->output_shape_, "upstream");
  if (batch != input_->dim(0)) throw ShapeError("dense: upstream batch differs from cached input");
  weight_grad = matmul(transpose(*input_), upstream);
  const std::size_t n = this->spec_.units;
  bias_grad.fill(T{0});
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t j = 0; j < n; ++j) bias_grad[j] += upstream[i * n + j];
  }
  input_.reset();
  return matmul(upstream, transpose(weight));
}

template <typename T>
std::vector<ParamRef<T>> Dense<T>::params() {
  return {{"W", &weight, &weight_grad}, {"b", &bias, &bias_grad}};
}

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(const LayerSpec& spec, const Shape& in)
    : Layer<T>(spec, in),
      weight({spec.units, in.at(0), spec.kernel, spec.kernel}),
      bias({spec.units}),
      weight_grad({spec.units, in.at(0), spec.kernel, spec.kernel}),
      bias_grad({spec.units}) {}

template <typename T>
kernels::ConvShape Conv2d<T>::geometry(std::size_t batch) const {
  const std::size_t pad = this->spec_.padding == Padding::same ? same_padding(this->spec_.kernel) : 0;
  kernels::ConvShape g;
  g.batch = batch;
  g.in_channels = this->input_shape_[0];
  g.in_h = this->input_shape_[1];
  g.in_w = this->input_shape_[2];
  g.out_channels = this->spec_.units;
  g.kernel_h = g.kernel_w = this->spec_.kernel;
  g.stride_h = g.stride_w = this->spec_.stride;
  g.pad_h = g.pad_w = pad;
  return g;
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Mode mode, Prng&) {
  const std::size_t batch = this->check_batch(x, this->input_shape_, "input");
  Tensor<T> y(with_batch(batch, this->output_shape_));
  kernels::conv2d_forward<T>(geometry(batch), x.values(), weight.values(), bias.values(), y.values());
  if (mode == Mode::train) input_ = x;
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& upstream) {
  if (!input_) this->throw_no_cache();
  const std::size_t batch = this->check_batch(upstream, this->output_shape_, "upstream");
  const auto g = geometry(batch);
  kernels::conv2d_backward_params<T>(g, input_->values(), upstream.values(), weight_grad.values(),
                                     bias_grad.values());
  Tensor<T> dx(input_->shape());
  kernels::conv2d_backward_input<T>(g, upstream.values(), weight.values(), dx.values());
  input_.reset();
  return dx;
}

template <typename T>
std::vector<ParamRef<T>> Conv2d<T>::params() {
  return {{"W", &weight, &weight_grad}, {"b", &bias, &bias_grad}};
}

// ---------------------------------------------------------------------------
// Pooling

namespace {

template <typename T>
kernels::PoolShape pool_geometry(const LayerSpec& spec, const Shape& in, std::size_t batch) {
  kernels::PoolShape p;
  p.batch = batch;
  p.channels = in[0];
  p.in_h = in[1];
  p.in_w = in[2];
  p.kernel = spec.kernel;
  p.stride = spec.stride;
  p.pad = spec.padding == Padding::same ? same_padding(spec.kernel) : 0;
  return p;
}

}  // namespace

template <typename T>
Pool2d<T>::Pool2d(const LayerSpec& spec, const Shape& in) : Layer<T>(spec, in) {}

template <typename T>
Tensor<T> Pool2d<T>::forward(const Tensor<T>& x, Mode mode, Prng&) {
  const std::size_t batch = this->check_batch(x, this->input_shape_, "input");
  const auto g = pool_geometry<T>(this->spec_, this->input_shape_, batch);
  Tensor<T> y(with_batch(batch, this->output_shape_));
  if (this->spec_.kind == LayerKind::maxpool) {
    std::vector<std::size_t> argmax(y.size());
    kernels::maxpool_forward<T>(g, x.values(), y.values(), argmax);
    if (mode == Mode::train) argmax_ = std::move(argmax);
  } else {
    kernels::meanpool_forward<T>(g, x.values(), y.values());
  }
  if (mode == Mode::train) batch_ = batch;
  return y;
}

template <typename T>
Tensor<T> Pool2d<T>::backward(const Tensor<T>& upstream) {
  if (!batch_) this->throw_no_cache();
  const std::size_t batch = this->check_batch(upstream, this->output_shape_, "upstream");
  if (batch != *batch_) throw ShapeError("pool: upstream batch differs from cached forward");
  const auto g = pool_geometry<T>(this->spec_, this->input_shape_, batch);
  Tensor<T> dx(with_batch(batch, this->input_shape_));
  if (this->spec_.kind == LayerKind::maxpool) {
    kernels::maxpool_backward<T>(g, upstream.values(), argmax_, dx.values());
    argmax_.clear();
  } else {
    kernels::meanpool_backward<T>(g, upstream.values(), dx.values());
  }
  batch_.reset();
  return dx;
}

// ---------------------------------------------------------------------------
// Dropout (inverted: survivors are scaled by 1/(1-rate) at train time)

template <typename T>
Dropout<T>::Dropout(const LayerSpec& spec, const Shape& in) : Layer<T>(spec, in) {}

template <typename T>
Tensor<T> Dropout<T>::forward(const Tensor<T>& x, Mode mode, Prng& rng) {
  this->check_batch(x, this->input_shape_, "input");
  if (mode == Mode::eval) return x;
  const double rate = this->spec_.rate;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> mask(x.shape());
  for (auto& m : mask.values()) m = rng.uniform() < rate ? T{0} : keep_scale;
  Tensor<T> y = mul(x, mask);
  mask_ = std::move(mask);
  return y;
}

template <typename T>
Tensor<T> Dropout<T>::backward(const Tensor<T>& upstream) {
  if (!mask_) this->throw_no_cache();
  Tensor<T> dx = mul(upstream, *mask_);
  mask_.reset();
  return dx;
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
T activate(ActivationKind kind, T x) {
  switch (kind) {
    case ActivationKind::step: return x >= T{0} ? T{1} : T{-1};
    case ActivationKind::sigmoid:
      if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
      else {
        const T e = std::exp(x);
        return e / (T{1} + e);
      }
    case ActivationKind::tanh: return std::tanh(x);
    case ActivationKind::relu: return x > T{0} ? x : T{0};
  }
  return x;
}

template <typename T>
Activation<T>::Activation(const LayerSpec& spec, const Shape& in) : Layer<T>(spec, in) {}

template <typename T>
Tensor<T> Activation<T>::forward(const Tensor<T>& x, Mode mode, Prng&) {
  this->check_batch(x, this->input_shape_, "input");
  const auto kind = this->spec_.activation;
  Tensor<T> y = apply(x, [kind](T v) { return activate(kind, v); });
  if (mode == Mode::train) {
    const bool keep_output = kind == ActivationKind::sigmoid || kind == ActivationKind::tanh;
    cache_ = keep_output ? y : x;
  }
  return y;
}

template <typename T>
Tensor<T> Activation<T>::backward(const Tensor<T>& upstream) {
  if (!cache_) this->throw_no_cache();
  require_same_shape(upstream.shape(), cache_->shape(), "activation backward");
  Tensor<T> dx(upstream.shape());
  const Tensor<T>& c = *cache_;
  switch (this->spec_.activation) {
    case ActivationKind::step:
      break;  // zero almost everywhere
    case ActivationKind::sigmoid:
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = upstream[i] * c[i] * (T{1} - c[i]);
      break;
    case ActivationKind::tanh:
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = upstream[i] * (T{1} - c[i] * c[i]);
      break;
    case ActivationKind::relu:
      // Subgradient at exactly 0 is 0.
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = c[i] > T{0} ? upstream[i] : T{0};
      break;
  }
  cache_.reset();
  return dx;
}

// ---------------------------------------------------------------------------
// Flatten

template <typename T>
Flatten<T>::Flatten(const LayerSpec& spec, const Shape& in) : Layer<T>(spec, in) {}

template <typename T>
Tensor<T> Flatten<T>::forward(const Tensor<T>& x, Mode mode, Prng&) {
  const std::size_t batch = this->check_batch(x, this->input_shape_, "input");
  if (mode == Mode::train) batch_ = batch;
  return x.reshaped(with_batch(batch, this->output_shape_));
}

template <typename T>
Tensor<T> Flatten<T>::backward(const Tensor<T>& upstream) {
  if (!batch_) this->throw_no_cache();
  const std::size_t batch = this->check_batch(upstream, this->output_shape_, "upstream");
  batch_.reset();
  return upstream.reshaped(with_batch(batch, this->input_shape_));
}

// ---------------------------------------------------------------------------
// Softmax

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& scores) {
  if (scores.rank() != 2) throw ShapeError("softmax expects [batch, C], got " + to_string(scores.shape()));
  const std::size_t rows = scores.dim(0), c = scores.dim(1);
  Tensor<T> p(scores.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const T* z = scores.data() + i * c;
    T* out = p.data() + i * c;
    T zmax = z[0];
    for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, z[j]);
    T denom{0};
    for (std::size_t j = 0; j < c; ++j) {
      out[j] = std::exp(z[j] - zmax);
      denom += out[j];
    }
    for (std::size_t j = 0; j < c; ++j) out[j] /= denom;
  }
  return p;
}

template <typename T>
Softmax<T>::Softmax(const LayerSpec& spec, const Shape& in) : Layer<T>(spec, in) {}

template <typename T>
Tensor<T> Softmax<T>::forward(const Tensor<T>& x, Mode mode, Prng&) {
  this->check_batch(x, this->input_shape_, "input");
  Tensor<T> p = softmax_rows(x);
  if (mode == Mode::train) output_ = p;
  return p;
}

template <typename T>
Tensor<T> Softmax<T>::backward(const Tensor<T>& upstream) {
  if (!output_) this->throw_no_cache();
  require_same_shape(upstream.shape(), output_->shape(), "softmax backward");
  const std::size_t rows = upstream.dim(0), c = upstream.dim(1);
  const Tensor<T>& p = *output_;
  Tensor<T> dx(upstream.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    T dot{0};
    for (std::size_t j = 0; j < c; ++j) dot += upstream[i * c + j] * p[i * c + j];
    for (std::size_t j = 0; j < c; ++j) dx[i * c + j] = p[i * c + j] * (upstream[i * c + j] - dot);
  }
  output_.reset();
  return dx;
}

// ---------------------------------------------------------------------------
// Residual add

template <typename T>
ResidualAdd<T>::ResidualAdd(const LayerSpec& spec, const Shape& branch_out, const Shape& skip_in)
    : Layer<T>(spec, branch_out), skip_shape_(skip_in) {
  const Shape projected = projected_skip_shape(spec, skip_in);
  if (projected != branch_out) {
    throw ShapeError("residual: skip path " + to_string(skip_in) +
                     (spec.projection ? " projected to " + to_string(projected) : std::string()) +
                     " does not match branch output " + to_string(branch_out));
  }
  if (spec.projection > 0) {
    projection_ = std::make_unique<Conv2d<T>>(
        LayerSpec::conv(spec.projection, 1, spec.projection_stride, Padding::none), skip_in);
  }
}

template <typename T>
Tensor<T> ResidualAdd<T>::forward(const Tensor<T>&, Mode, Prng&) {
  throw StateError("residual: forward needs both branch and skip inputs");
}

template <typename T>
Tensor<T> ResidualAdd<T>::backward(const Tensor<T>&) {
  throw StateError("residual: use backward_add");
}

template <typename T>
Tensor<T> ResidualAdd<T>::forward_add(const Tensor<T>& branch, const Tensor<T>& skip, Mode mode, Prng& rng) {
  this->check_batch(branch, this->input_shape_, "branch");
  this->check_batch(skip, skip_shape_, "skip");
  Tensor<T> y = projection_ ? add(branch, projection_->forward(skip, mode, rng)) : add(branch, skip);
  if (mode == Mode::train) cached_ = true;
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> ResidualAdd<T>::backward_add(const Tensor<T>& upstream) {
  if (!cached_) this->throw_no_cache();
  this->check_batch(upstream, this->output_shape_, "upstream");
  cached_ = false;
  if (projection_) return {upstream, projection_->backward(upstream)};
  return {upstream, upstream};
}

template <typename T>
std::vector<ParamRef<T>> ResidualAdd<T>::params() {
  if (!projection_) return {};
  auto p = projection_->params();
  for (auto& ref : p) ref.name = "proj." + ref.name;
  return p;
}

// ---------------------------------------------------------------------------

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec, const Shape& in, Prng& init_rng, double gain,
                                     const Shape& skip_in) {
  auto fill_gaussian = [&](Tensor<T>& w, std::size_t fan_in) {
    const double stddev = std::sqrt(gain / static_cast<double>(fan_in));
    auto g = rng_gaussian<T>(init_rng, w.size(), 0.0, stddev);
    std::copy(g.values().begin(), g.values().end(), w.values().begin());
  };
  switch (spec.kind) {
    case LayerKind::dense: {
      auto l = std::make_unique<Dense<T>>(spec, in);
      fill_gaussian(l->weight, in.at(0));
      return l;
    }
    case LayerKind::conv2d: {
      auto l = std::make_unique<Conv2d<T>>(spec, in);
      fill_gaussian(l->weight, in.at(0) * spec.kernel * spec.kernel);
      return l;
    }
    case LayerKind::maxpool:
    case LayerKind::meanpool: return std::make_unique<Pool2d<T>>(spec, in);
    case LayerKind::dropout: return std::make_unique<Dropout<T>>(spec, in);
    case LayerKind::activation: return std::make_unique<Activation<T>>(spec, in);
    case LayerKind::flatten: return std::make_unique<Flatten<T>>(spec, in);
    case LayerKind::softmax: return std::make_unique<Softmax<T>>(spec, in);
    case LayerKind::residual_add: {
      auto l = std::make_unique<ResidualAdd<T>>(spec, in, skip_in);
      if (auto* proj = l->projection()) fill_gaussian(proj->weight, skip_in.at(0));
      return l;
    }
  }
  throw ParameterError("unknown layer kind");
}

#define ASL_INSTANTIATE(T)                                                                       \
  template class Layer<T>;                                                                       \
  template class Dense<T>;                                                                       \
  template class Conv2d<T>;                                                                      \
  template class Pool2d<T>;                                                                      \
  template class Dropout<T>;                                                                     \
  template class Activation<T>;                                                                  \
  template class Flatten<T>;                                                                     \
  template class Softmax<T>;                                                                     \
  template class ResidualAdd<T>;                                                                 \
  template std::unique_ptr<Layer<T>> make_layer<T>(const LayerSpec&, const Shape&, Prng&, double, \
                                                   const Shape&);                                \
  template Tensor<T> dense_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                          \
  template T activate<T>(ActivationKind, T);
ASL_INSTANTIATE(float)
ASL_INSTANTIATE(double)
#undef ASL_INSTANTIATE

}  // namespace asl
