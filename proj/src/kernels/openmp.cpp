// im2col/GEMM kernels parallelised over independent outputs. Per-element
// accumulation order is kept identical to kernels/serial.cpp; see the header
// comment there. Zero-padded taps enter the GEMM as exact zeros, which leaves
// every partial sum unchanged.
#include <algorithm>
#include <vector>

#include "asl/kernels.hpp"

#ifdef ASL_HAVE_OPENMP
#include <omp.h>
#endif

namespace asl::kernels::openmp {
namespace {

// Upper bound on im2col scratch (elements) before the batch is processed in chunks.
constexpr std::size_t kColumnBudget = std::size_t{1} << 22;

std::size_t batch_chunk(const ConvShape& s) {
  const std::size_t per_sample = s.patch() * s.out_h() * s.out_w();
  return std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(per_sample, 1), 1, s.batch);
}

/// cols[p, b*L + l] for samples [n0, n0+nb); p = (ci, u, v).
template <typename T>
void im2col(const ConvShape& s, std::span<const T> x, std::size_t n0, std::size_t nb,
            std::vector<T>& cols) {
  const std::size_t oh_n = s.out_h(), ow_n = s.out_w(), L = oh_n * ow_n;
  const std::size_t P = s.patch(), J = nb * L;
  cols.assign(P * J, T{0});
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pi = 0; pi < static_cast<std::ptrdiff_t>(P); ++pi) {
    const std::size_t p = static_cast<std::size_t>(pi);
    const std::size_t ci = p / (s.kernel_h * s.kernel_w);
    const std::size_t u = (p / s.kernel_w) % s.kernel_h;
    const std::size_t v = p % s.kernel_w;
    T* row = cols.data() + p * J;
    for (std::size_t b = 0; b < nb; ++b) {
      const T* plane = x.data() + ((n0 + b) * s.in_channels + ci) * s.in_h * s.in_w;
      for (std::size_t oh = 0; oh < oh_n; ++oh) {
        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s.stride_h + u) -
                                  static_cast<std::ptrdiff_t>(s.pad_h);
        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(s.in_h)) continue;
        T* dst = row + b * L + oh * ow_n;
        const T* src = plane + ih * s.in_w;
        for (std::size_t ow = 0; ow < ow_n; ++ow) {
          const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * s.stride_w + v) -
                                    static_cast<std::ptrdiff_t>(s.pad_w);
          if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(s.in_w)) dst[ow] = src[iw];
        }
      }
    }
  }
}

/// Transposed layout rows[j, p], used where the reduction runs over j.
template <typename T>
void transpose_into(const std::vector<T>& cols, std::size_t P, std::size_t J, std::vector<T>& rows) {
  rows.resize(P * J);
  constexpr std::size_t kTile = 32;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t jt = 0; jt < static_cast<std::ptrdiff_t>(J); jt += kTile) {
    const std::size_t j0 = static_cast<std::size_t>(jt);
    const std::size_t j1 = std::min(J, j0 + kTile);
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t j = j0; j < j1; ++j) rows[j * P + p] = cols[p * J + j];
    }
  }
}

/// dym[co, b*L + l] = dy[n0+b, co, l]
template <typename T>
void gather_upstream(const ConvShape& s, std::span<const T> dy, std::size_t n0, std::size_t nb,
                     std::vector<T>& dym) {
  const std::size_t L = s.out_h() * s.out_w(), J = nb * L;
  dym.resize(s.out_channels * J);
  for (std::size_t co = 0; co < s.out_channels; ++co) {
    for (std::size_t b = 0; b < nb; ++b) {
      const T* src = dy.data() + ((n0 + b) * s.out_channels + co) * L;
      std::copy(src, src + L, dym.data() + co * J + b * L);
    }
  }
}

}  // namespace

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m,
            std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    T* row = out.data() + i * n;
    std::fill(row, row + n, T{0});
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y) {
  const std::size_t L = s.out_h() * s.out_w(), P = s.patch();
  const std::size_t chunk = batch_chunk(s);
  std::vector<T> cols, acc;
  for (std::size_t n0 = 0; n0 < s.batch; n0 += chunk) {
    const std::size_t nb = std::min(chunk, s.batch - n0), J = nb * L;
    im2col(s, x, n0, nb, cols);
    acc.assign(s.out_channels * J, T{0});
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(s.out_channels); ++c) {
      const std::size_t co = static_cast<std::size_t>(c);
      T* row = acc.data() + co * J;
      for (std::size_t p = 0; p < P; ++p) {
        const T wv = w[co * P + p];
        const T* crow = cols.data() + p * J;
        for (std::size_t j = 0; j < J; ++j) row[j] += wv * crow[j];
      }
      for (std::size_t b = 0; b < nb; ++b) {
        T* dst = y.data() + ((n0 + b) * s.out_channels + co) * L;
        const T* src = row + b * L;
        for (std::size_t l = 0; l < L; ++l) dst[l] = src[l] + bias[co];
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvShape& s, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx) {
  const std::size_t oh_n = s.out_h(), ow_n = s.out_w(), L = oh_n * ow_n, P = s.patch();
  const std::size_t kk = s.kernel_h * s.kernel_w;
  const std::size_t chunk = batch_chunk(s);
  std::fill(dx.begin(), dx.end(), T{0});
  std::vector<T> dym, dcols;
  for (std::size_t n0 = 0; n0 < s.batch; n0 += chunk) {
    const std::size_t nb = std::min(chunk, s.batch - n0), J = nb * L;
    gather_upstream(s, dy, n0, nb, dym);
    dcols.assign(P * J, T{0});
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t pi = 0; pi < static_cast<std::ptrdiff_t>(P); ++pi) {
      const std::size_t p = static_cast<std::size_t>(pi);
      T* row = dcols.data() + p * J;
      for (std::size_t co = 0; co < s.out_channels; ++co) {
        const T wv = w[co * P + p];
        const T* drow = dym.data() + co * J;
        for (std::size_t j = 0; j < J; ++j) row[j] += wv * drow[j];
      }
    }
    // col2im: each (sample, input channel) plane is owned by one iteration.
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t pl = 0; pl < static_cast<std::ptrdiff_t>(nb * s.in_channels); ++pl) {
      const std::size_t b = static_cast<std::size_t>(pl) / s.in_channels;
      const std::size_t ci = static_cast<std::size_t>(pl) % s.in_channels;
      T* plane = dx.data() + ((n0 + b) * s.in_channels + ci) * s.in_h * s.in_w;
      for (std::size_t uv = 0; uv < kk; ++uv) {
        const std::size_t u = uv / s.kernel_w, v = uv % s.kernel_w;
        const T* src = dcols.data() + (ci * kk + uv) * J + b * L;
        for (std::size_t oh = 0; oh < oh_n; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s.stride_h + u) -
                                    static_cast<std::ptrdiff_t>(s.pad_h);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(s.in_h)) continue;
          for (std::size_t ow = 0; ow < ow_n; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * s.stride_w + v) -
                                      static_cast<std::ptrdiff_t>(s.pad_w);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(s.in_w)) continue;
            plane[ih * s.in_w + iw] += src[oh * ow_n + ow];
          }
        }
      }
    }
  }
}

namespace {

template <typename T>
void backward_params_ordered(const ConvShape& s, std::span<const T> x, std::span<const T> dy,
                             std::span<T> dw, std::span<T> db) {
  const std::size_t L = s.out_h() * s.out_w(), P = s.patch();
  const std::size_t chunk = batch_chunk(s);
  std::fill(dw.begin(), dw.end(), T{0});
  std::fill(db.begin(), db.end(), T{0});
  std::vector<T> cols, rows, dym;
  for (std::size_t n0 = 0; n0 < s.batch; n0 += chunk) {
    const std::size_t nb = std::min(chunk, s.batch - n0), J = nb * L;
    im2col(s, x, n0, nb, cols);
    transpose_into(cols, P, J, rows);
    gather_upstream(s, dy, n0, nb, dym);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(s.out_channels); ++c) {
      const std::size_t co = static_cast<std::size_t>(c);
      T* wrow = dw.data() + co * P;
      const T* drow = dym.data() + co * J;
      T bacc = db[co];
      for (std::size_t j = 0; j < J; ++j) {
        const T g = drow[j];
        bacc += g;
        const T* r = rows.data() + j * P;
        for (std::size_t p = 0; p < P; ++p) wrow[p] += g * r[p];
      }
      db[co] = bacc;
    }
  }
}

#ifdef ASL_HAVE_OPENMP
// Each thread reduces a contiguous slice of the batch into private buffers;
// the slices are then summed in completion order.
template <typename T>
void backward_params_split(const ConvShape& s, std::span<const T> x, std::span<const T> dy,
                           std::span<T> dw, std::span<T> db) {
  std::fill(dw.begin(), dw.end(), T{0});
  std::fill(db.begin(), db.end(), T{0});
  const std::size_t in_plane = s.in_channels * s.in_h * s.in_w;
  const std::size_t out_plane = s.out_channels * s.out_h() * s.out_w();
#pragma omp parallel
  {
    std::vector<T> local_w(dw.size(), T{0}), local_b(db.size(), T{0});
    std::vector<T> part_w(dw.size()), part_b(db.size());
    ConvShape one = s;
    one.batch = 1;
#pragma omp for schedule(static)
    for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(s.batch); ++n) {
      serial::conv2d_backward_params<T>(one, x.subspan(n * in_plane, in_plane),
                                        dy.subspan(n * out_plane, out_plane), part_w, part_b);
      for (std::size_t i = 0; i < part_w.size(); ++i) local_w[i] += part_w[i];
      for (std::size_t i = 0; i < part_b.size(); ++i) local_b[i] += part_b[i];
    }
#pragma omp critical(asl_conv_dw_reduce)
    {
      for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += local_w[i];
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += local_b[i];
    }
  }
}
#endif

}  // namespace

template <typename T>
void conv2d_backward_params(const ConvShape& s, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw, std::span<T> db) {
#ifdef ASL_HAVE_OPENMP
  if (!deterministic() && omp_get_max_threads() > 1 && s.batch > 1) {
    backward_params_split(s, x, dy, dw, db);
    return;
  }
#endif
  backward_params_ordered(s, x, dy, dw, db);
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

}  // namespace asl::kernels::openmp
