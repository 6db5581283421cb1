#pragma once

// Numerical kernels behind the layers. Two implementations exist for the
// heavy ones: `serial` is the direct-loop reference and `openmp` folds the
// batch into an im2col GEMM and spreads independent outputs over threads.
// Both accumulate every output element in the same order, so they agree
// bit-for-bit; only the non-deterministic weight-gradient path reorders sums.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>

namespace asl::kernels {

enum class Backend { serial, openmp };

void set_backend(Backend b) noexcept;
Backend backend() noexcept;

/// When false, the OpenMP backend may split reductions across threads.
void set_deterministic(bool on) noexcept;
bool deterministic() noexcept;

bool openmp_compiled() noexcept;
int thread_count() noexcept;

/// RAII switch used by tests and the benchmark.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend b) noexcept : saved_(backend()) { set_backend(b); }
  ~ScopedBackend() { set_backend(saved_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend saved_;
};

struct ConvShape {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_h = 1, in_w = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;

  std::size_t out_h() const noexcept { return (in_h + 2 * pad_h - kernel_h) / stride_h + 1; }
  std::size_t out_w() const noexcept { return (in_w + 2 * pad_w - kernel_w) / stride_w + 1; }
  std::size_t patch() const noexcept { return in_channels * kernel_h * kernel_w; }
};

struct PoolShape {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t in_h = 1, in_w = 1;
  std::size_t kernel = 2;
  std::size_t stride = 2;
  std::size_t pad = 0;

  std::size_t out_h() const noexcept { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const noexcept { return (in_w + 2 * pad - kernel) / stride + 1; }
};

/// Marks a max-pool output whose maximum came from zero padding.
inline constexpr std::size_t kPaddedArgmax = std::numeric_limits<std::size_t>::max();

// Instantiated for float and double.
#define ASL_DECLARE_KERNELS                                                                    \
  template <typename T>                                                                        \
  void matmul(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m,    \
              std::size_t k, std::size_t n);                                                   \
  template <typename T>                                                                        \
  void conv2d_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w,         \
                      std::span<const T> bias, std::span<T> y);                                \
  template <typename T>                                                                        \
  void conv2d_backward_input(const ConvShape& s, std::span<const T> dy, std::span<const T> w, \
                             std::span<T> dx);                                                 \
  template <typename T>                                                                        \
  void conv2d_backward_params(const ConvShape& s, std::span<const T> x,                       \
                              std::span<const T> dy, std::span<T> dw, std::span<T> db);

namespace serial {
ASL_DECLARE_KERNELS
}  // namespace serial

namespace openmp {
ASL_DECLARE_KERNELS
}  // namespace openmp

/// Dispatch on the active backend.
ASL_DECLARE_KERNELS

#undef ASL_DECLARE_KERNELS

// Pooling is memory-bound; one implementation parallelised over planes when
// the OpenMP backend is active.
template <typename T>
void maxpool_forward(const PoolShape& s, std::span<const T> x, std::span<T> y,
                     std::span<std::size_t> argmax);
template <typename T>
void maxpool_backward(const PoolShape& s, std::span<const T> dy, std::span<const std::size_t> argmax,
                      std::span<T> dx);
template <typename T>
void meanpool_forward(const PoolShape& s, std::span<const T> x, std::span<T> y);
template <typename T>
void meanpool_backward(const PoolShape& s, std::span<const T> dy, std::span<T> dx);

}  // namespace asl::kernels
