// Direct-loop reference kernels. Accumulation order per output element:
//   matmul                 p ascending
//   conv forward           (ci, u, v) ascending, bias added last
//   conv backward params   (n, oh, ow) ascending
//   conv backward input    per (ci, u, v): sum over co first, then scattered
//                          in (u, v, oh, ow) order
#include "asl/kernels.hpp"

namespace asl::kernels::serial {

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      out[i * n + j] = acc;
    }
  }
}

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y) {
  const std::size_t oh_n = s.out_h(), ow_n = s.out_w();
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      for (std::size_t oh = 0; oh < oh_n; ++oh) {
        for (std::size_t ow = 0; ow < ow_n; ++ow) {
          T acc{0};
          for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
            for (std::size_t u = 0; u < s.kernel_h; ++u) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s.stride_h + u) -
                                        static_cast<std::ptrdiff_t>(s.pad_h);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(s.in_h)) continue;
              for (std::size_t v = 0; v < s.kernel_w; ++v) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * s.stride_w + v) -
                                          static_cast<std::ptrdiff_t>(s.pad_w);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(s.in_w)) continue;
                acc += x[((n * s.in_channels + ci) * s.in_h + ih) * s.in_w + iw] *
                       w[((co * s.in_channels + ci) * s.kernel_h + u) * s.kernel_w + v];
              }
            }
          }
          y[((n * s.out_channels + co) * oh_n + oh) * ow_n + ow] = acc + bias[co];
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx) {
  const std::size_t oh_n = s.out_h(), ow_n = s.out_w();
  std::fill(dx.begin(), dx.end(), T{0});
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
      for (std::size_t u = 0; u < s.kernel_h; ++u) {
        for (std::size_t v = 0; v < s.kernel_w; ++v) {
          for (std::size_t oh = 0; oh < oh_n; ++oh) {
            for (std::size_t ow = 0; ow < ow_n; ++ow) {
              T t{0};
              for (std::size_t co = 0; co < s.out_channels; ++co) {
                t += w[((co * s.in_channels + ci) * s.kernel_h + u) * s.kernel_w + v] *
                     dy[((n * s.out_channels + co) * oh_n + oh) * ow_n + ow];
              }
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s.stride_h + u) -
                                        static_cast<std::ptrdiff_t>(s.pad_h);
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * s.stride_w + v) -
                                        static_cast<std::ptrdiff_t>(s.pad_w);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(s.in_h) || iw < 0 ||
                  iw >= static_cast<std::ptrdiff_t>(s.in_w)) {
                continue;
              }
              dx[((n * s.in_channels + ci) * s.in_h + ih) * s.in_w + iw] += t;
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_params(const ConvShape& s, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw, std::span<T> db) {
  const std::size_t oh_n = s.out_h(), ow_n = s.out_w();
  for (std::size_t co = 0; co < s.out_channels; ++co) {
    T bacc{0};
    for (std::size_t n = 0; n < s.batch; ++n) {
      for (std::size_t l = 0; l < oh_n * ow_n; ++l) bacc += dy[(n * s.out_channels + co) * oh_n * ow_n + l];
    }
    db[co] = bacc;
    for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
      for (std::size_t u = 0; u < s.kernel_h; ++u) {
        for (std::size_t v = 0; v < s.kernel_w; ++v) {
          T acc{0};
          for (std::size_t n = 0; n < s.batch; ++n) {
            for (std::size_t oh = 0; oh < oh_n; ++oh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s.stride_h + u) -
                                        static_cast<std::ptrdiff_t>(s.pad_h);
              for (std::size_t ow = 0; ow < ow_n; ++ow) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * s.stride_w + v) -
                                          static_cast<std::ptrdiff_t>(s.pad_w);
                // Padded taps contribute an exact zero, so adding it is skipped.
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(s.in_h) || iw < 0 ||
                    iw >= static_cast<std::ptrdiff_t>(s.in_w)) {
                  continue;
                }
                acc += dy[((n * s.out_channels + co) * oh_n + oh) * ow_n + ow] *
                       x[((n * s.in_channels + ci) * s.in_h + ih) * s.in_w + iw];
              }
            }
          }
          dw[((co * s.in_channels + ci) * s.kernel_h + u) * s.kernel_w + v] = acc;
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
                                          std::span<const T>, std::span<T>, std::span<T>);
ASL_INSTANTIATE(float)
ASL_INSTANTIATE(double)
#undef ASL_INSTANTIATE

}  // namespace asl::kernels::serial
