#include <algorithm>
#include <atomic>

#include "asl/kernels.hpp"

#ifdef ASL_HAVE_OPENMP
#include <omp.h>
#endif

namespace asl::kernels {
namespace {

std::atomic<Backend> g_backend{openmp_compiled() ? Backend::openmp : Backend::serial};
std::atomic<bool> g_deterministic{true};

bool parallel_active() { return g_backend.load(std::memory_order_relaxed) == Backend::openmp; }

}  // namespace

void set_backend(Backend b) noexcept { g_backend.store(b); }
Backend backend() noexcept { return g_backend.load(); }
void set_deterministic(bool on) noexcept { g_deterministic.store(on); }
bool deterministic() noexcept { return g_deterministic.load(); }

bool openmp_compiled() noexcept {
#ifdef ASL_HAVE_OPENMP
  return true;
#else
  return false;
#endif
}

int thread_count() noexcept {
#ifdef ASL_HAVE_OPENMP
  return parallel_active() ? omp_get_max_threads() : 1;
#else
  return 1;
#endif
}

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m,
            std::size_t k, std::size_t n) {
  parallel_active() ? openmp::matmul<T>(a, b, out, m, k, n) : serial::matmul<T>(a, b, out, m, k, n);
}

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y) {
  parallel_active() ? openmp::conv2d_forward<T>(s, x, w, bias, y)
                    : serial::conv2d_forward<T>(s, x, w, bias, y);
}

template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx) {
  parallel_active() ? openmp::conv2d_backward_input<T>(s, dy, w, dx)
                    : serial::conv2d_backward_input<T>(s, dy, w, dx);
}

template <typename T>
void conv2d_backward_params(const ConvShape& s, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw, std::span<T> db) {
  parallel_active() ? openmp::conv2d_backward_params<T>(s, x, dy, dw, db)
                    : serial::conv2d_backward_params<T>(s, x, dy, dw, db);
}

// ---------------------------------------------------------------------------
// Pooling. Out-of-range taps read as zero (zero padding); a max taken from
// padding records kPaddedArgmax and receives no gradient. Mean pooling always
// divides by the full window area.

template <typename T>
void maxpool_forward(const PoolShape& s, std::span<const T> x, std::span<T> y,
                     std::span<std::size_t> argmax) {
  const std::size_t oh_n = s.out_h(), ow_n = s.out_w();
  const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(s.batch * s.channels);
  const bool par = parallel_active();
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const std::size_t in_base = static_cast<std::size_t>(pl) * s.in_h * s.in_w;
    const std::size_t out_base = static_cast<std::size_t>(pl) * oh_n * ow_n;
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
      for (std::size_t ow = 0; ow < ow_n; ++ow) {
        T best{};
        std::size_t best_at = kPaddedArgmax;
        bool first = true;
        for (std::size_t u = 0; u < s.kernel; ++u) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s.stride + u) -
                                    static_cast<std::ptrdiff_t>(s.pad);
          for (std::size_t v = 0; v < s.kernel; ++v) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * s.stride + v) -
                                      static_cast<std::ptrdiff_t>(s.pad);
            const bool inside = ih >= 0 && ih < static_cast<std::ptrdiff_t>(s.in_h) && iw >= 0 &&
                                iw < static_cast<std::ptrdiff_t>(s.in_w);
            const std::size_t at = inside ? in_base + ih * s.in_w + iw : kPaddedArgmax;
            const T val = inside ? x[at] : T{0};
            // Strict comparison keeps the first row-major maximum.
            if (first || val > best) {
              best = val;
              best_at = at;
              first = false;
            }
          }
        }
        y[out_base + oh * ow_n + ow] = best;
        argmax[out_base + oh * ow_n + ow] = best_at;
      }
    }
  }
}

template <typename T>
void maxpool_backward(const PoolShape& s, std::span<const T> dy, std::span<const std::size_t> argmax,
                      std::span<T> dx) {
  std::fill(dx.begin(), dx.end(), T{0});
  const std::size_t per_plane = s.out_h() * s.out_w();
  const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(s.batch * s.channels);
  const bool par = parallel_active();
  // Windows of one plane only route into that plane, so planes are independent.
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const std::size_t base = static_cast<std::size_t>(pl) * per_plane;
    for (std::size_t i = base; i < base + per_plane; ++i) {
      if (argmax[i] != kPaddedArgmax) dx[argmax[i]] += dy[i];
    }
  }
}

template <typename T>
void meanpool_forward(const PoolShape& s, std::span<const T> x, std::span<T> y) {
  const std::size_t oh_n = s.out_h(), ow_n = s.out_w();
  const T inv_area = T{1} / static_cast<T>(s.kernel * s.kernel);
  const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(s.batch * s.channels);
  const bool par = parallel_active();
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const std::size_t in_base = static_cast<std::size_t>(pl) * s.in_h * s.in_w;
    const std::size_t out_base = static_cast<std::size_t>(pl) * oh_n * ow_n;
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
      for (std::size_t ow = 0; ow < ow_n; ++ow) {
        T acc{0};
        for (std::size_t u = 0; u < s.kernel; ++u) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s.stride + u) -
                                    static_cast<std::ptrdiff_t>(s.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(s.in_h)) continue;
          for (std::size_t v = 0; v < s.kernel; ++v) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * s.stride + v) -
                                      static_cast<std::ptrdiff_t>(s.pad);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(s.in_w)) continue;
            acc += x[in_base + ih * s.in_w + iw];
          }
        }
        y[out_base + oh * ow_n + ow] = acc * inv_area;
      }
    }
  }
}

template <typename T>
void meanpool_backward(const PoolShape& s, std::span<const T> dy, std::span<T> dx) {
  std::fill(dx.begin(), dx.end(), T{0});
  const std::size_t oh_n = s.out_h(), ow_n = s.out_w();
  const T inv_area = T{1} / static_cast<T>(s.kernel * s.kernel);
  const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(s.batch * s.channels);
  const bool par = parallel_active();
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const std::size_t in_base = static_cast<std::size_t>(pl) * s.in_h * s.in_w;
    const std::size_t out_base = static_cast<std::size_t>(pl) * oh_n * ow_n;
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
      for (std::size_t ow = 0; ow < ow_n; ++ow) {
        const T g = dy[out_base + oh * ow_n + ow] * inv_area;
        for (std::size_t u = 0; u < s.kernel; ++u) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s.stride + u) -
                                    static_cast<std::ptrdiff_t>(s.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(s.in_h)) continue;
          for (std::size_t v = 0; v < s.kernel; ++v) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * s.stride + v) -
                                      static_cast<std::ptrdiff_t>(s.pad);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(s.in_w)) continue;
            dx[in_base + ih * s.in_w + iw] += g;
          }
        }
      }
    }
  }
}

#define ASL_INSTANTIATE(T)                                                                       \
  template void matmul<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,    \
                          std::size_t, std::size_t);                                             \
  template void conv2d_forward<T>(const ConvShape&, std::span<const T>, std::span<const T>,     \
                                  std::span<const T>, std::span<T>);                             \
  template void conv2d_backward_input<T>(const ConvShape&, std::span<const T>,                  \
                                         std::span<const T>, std::span<T>);                      \
  template void conv2d_backward_params<T>(const ConvShape&, std::span<const T>,                 \
                                          std::span<const T>, std::span<T>, std::span<T>);       \
  template void maxpool_forward<T>(const PoolShape&, std::span<const T>, std::span<T>,          \
                                   std::span<std::size_t>);                                      \
  template void maxpool_backward<T>(const PoolShape&, std::span<const T>,                       \
                                    std::span<const std::size_t>, std::span<T>);                 \
  template void meanpool_forward<T>(const PoolShape&, std::span<const T>, std::span<T>);        \
  template void meanpool_backward<T>(const PoolShape&, std::span<const T>, std::span<T>);
ASL_INSTANTIATE(float)
ASL_INSTANTIATE(double)
#undef ASL_INSTANTIATE

}  // namespace asl::kernels
