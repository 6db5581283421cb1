#include <gtest/gtest.h>

#include <cstring>
#include <vector>

#include "asl/kernels.hpp"
#include "asl/tensor.hpp"

namespace asl {
namespace {

using kernels::ConvShape;
using kernels::PoolShape;

std::vector<double> random_values(Prng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform() * 2 - 1;
  return v;
}

// Direct six-loop convolution with explicit zero padding; bias added after the window sum.
std::vector<double> loop_conv(const ConvShape& s, const std::vector<double>& x, const std::vector<double>& w,
                              const std::vector<double>& b) {
  const std::size_t oh = s.out_h(), ow = s.out_w();
  std::vector<double> y(s.batch * s.out_channels * oh * ow);
  for (std::size_t n = 0; n < s.batch; ++n)
    for (std::size_t k = 0; k < s.out_channels; ++k)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double z = 0;
          for (std::size_t c = 0; c < s.in_channels; ++c)
            for (std::size_t u = 0; u < s.kernel_h; ++u)
              for (std::size_t v = 0; v < s.kernel_w; ++v) {
                const long r = static_cast<long>(i * s.stride_h + u) - static_cast<long>(s.pad_h);
                const long q = static_cast<long>(j * s.stride_w + v) - static_cast<long>(s.pad_w);
                if (r < 0 || q < 0 || r >= static_cast<long>(s.in_h) || q >= static_cast<long>(s.in_w)) continue;
                z += x[((n * s.in_channels + c) * s.in_h + r) * s.in_w + q] *
                     w[((k * s.in_channels + c) * s.kernel_h + u) * s.kernel_w + v];
              }
          y[((n * s.out_channels + k) * oh + i) * ow + j] = z + b[k];
        }
  return y;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

ConvShape random_conv(Prng& rng) {
  ConvShape s;
  s.batch = 1 + rng.below(2);
  s.in_channels = 1 + rng.below(3);
  s.in_h = 3 + rng.below(6);
  s.in_w = 3 + rng.below(6);
  s.out_channels = 1 + rng.below(3);
  s.kernel_h = s.kernel_w = 1 + 2 * rng.below(2);
  s.stride_h = s.stride_w = 1 + rng.below(2);
  s.pad_h = s.pad_w = rng.below(2) ? (s.kernel_h - 1) / 2 : 0;
  return s;
}

struct ConvData {
  std::vector<double> x, w, b;
};

ConvData conv_data(Prng& rng, const ConvShape& s) {
  return {random_values(rng, s.batch * s.in_channels * s.in_h * s.in_w),
          random_values(rng, s.out_channels * s.patch()), random_values(rng, s.out_channels)};
}

std::vector<double> run_forward(const ConvShape& s, const ConvData& d) {
  std::vector<double> y(s.batch * s.out_channels * s.out_h() * s.out_w());
  kernels::conv2d_forward<double>(s, d.x, d.w, d.b, y);
  return y;
}

TEST(ConvKernel, MatchesLoopOracleExample) {
  ConvShape s;
  s.batch = 1;
  s.in_channels = 2;
  s.in_h = s.in_w = 5;
  s.out_channels = 3;
  s.kernel_h = s.kernel_w = 3;
  Prng rng(1);
  const auto d = conv_data(rng, s);
  for (auto b : {kernels::Backend::serial, kernels::Backend::openmp}) {
    kernels::ScopedBackend scope(b);
    EXPECT_TRUE(same_bits(run_forward(s, d), loop_conv(s, d.x, d.w, d.b)));
  }
}

TEST(ConvKernel, MatchesLoopOracleOnRandomShapes) {
  Prng rng(2);
  for (int trial = 0; trial < 60; ++trial) {
    const auto s = random_conv(rng);
    const auto d = conv_data(rng, s);
    const auto want = loop_conv(s, d.x, d.w, d.b);
    for (auto b : {kernels::Backend::serial, kernels::Backend::openmp}) {
      kernels::ScopedBackend scope(b);
      ASSERT_TRUE(same_bits(run_forward(s, d), want)) << "trial " << trial;
    }
  }
}

TEST(ConvKernel, AllShapesUpToTwoThreeEightEight) {
  Prng rng(3);
  for (std::size_t n = 1; n <= 2; ++n)
    for (std::size_t c = 1; c <= 3; ++c)
      for (std::size_t h = 3; h <= 8; ++h) {
        ConvShape s;
        s.batch = n;
        s.in_channels = c;
        s.in_h = h;
        s.in_w = 11 - h;
        s.out_channels = 2;
        s.kernel_h = s.kernel_w = 3;
        s.pad_h = s.pad_w = 1;
        const auto d = conv_data(rng, s);
        ASSERT_TRUE(same_bits(run_forward(s, d), loop_conv(s, d.x, d.w, d.b)));
      }
}

TEST(ConvKernel, BackwardBackendsAgreeBitwise) {
  Prng rng(4);
  kernels::set_deterministic(true);
  for (int trial = 0; trial < 40; ++trial) {
    const auto s = random_conv(rng);
    const auto d = conv_data(rng, s);
    const auto dy = random_values(rng, s.batch * s.out_channels * s.out_h() * s.out_w());
    std::vector<double> dx_s(d.x.size()), dx_o(d.x.size());
    std::vector<double> dw_s(d.w.size()), dw_o(d.w.size()), db_s(d.b.size()), db_o(d.b.size());
    kernels::serial::conv2d_backward_input<double>(s, dy, d.w, dx_s);
    kernels::openmp::conv2d_backward_input<double>(s, dy, d.w, dx_o);
    kernels::serial::conv2d_backward_params<double>(s, d.x, dy, dw_s, db_s);
    kernels::openmp::conv2d_backward_params<double>(s, d.x, dy, dw_o, db_o);
    ASSERT_TRUE(same_bits(dx_s, dx_o));
    ASSERT_TRUE(same_bits(dw_s, dw_o));
    ASSERT_TRUE(same_bits(db_s, db_o));
  }
}

TEST(ConvKernel, BackwardInputIsAdjointOfForward) {
  // <conv(x), dy> with zero bias equals <x, conv_backward_input(dy)>.
  Prng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_conv(rng);
    auto d = conv_data(rng, s);
    std::fill(d.b.begin(), d.b.end(), 0.0);
    const auto y = run_forward(s, d);
    const auto dy = random_values(rng, y.size());
    std::vector<double> dx(d.x.size());
    kernels::serial::conv2d_backward_input<double>(s, dy, d.w, dx);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * dy[i];
    for (std::size_t i = 0; i < dx.size(); ++i) rhs += d.x[i] * dx[i];
    ASSERT_NEAR(lhs, rhs, 1e-10);
  }
}

TEST(MatmulKernel, BackendsAgreeBitwise) {
  Prng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 1 + rng.below(20), k = 1 + rng.below(20), n = 1 + rng.below(20);
    const auto a = random_values(rng, m * k), b = random_values(rng, k * n);
    std::vector<double> s(m * n), o(m * n);
    kernels::serial::matmul<double>(a, b, s, m, k, n);
    kernels::openmp::matmul<double>(a, b, o, m, k, n);
    ASSERT_TRUE(same_bits(s, o));
  }
}

TEST(PoolKernel, MaxAndMeanOfOneWindow) {
  PoolShape s;
  s.in_h = s.in_w = 2;
  const std::vector<double> x{1, 2, 3, 4};
  std::vector<double> y(1);
  std::vector<std::size_t> arg(1);
  kernels::maxpool_forward<double>(s, x, y, arg);
  EXPECT_EQ(y[0], 4.0);
  EXPECT_EQ(arg[0], 3u);
  kernels::meanpool_forward<double>(s, x, y);
  EXPECT_EQ(y[0], 2.5);
}

TEST(PoolKernel, ConstantImageStaysConstant) {
  PoolShape s;
  s.channels = 2;
  s.in_h = 6;
  s.in_w = 4;
  const std::vector<double> x(48, 1.75);
  std::vector<double> y(12);
  std::vector<std::size_t> arg(12);
  kernels::maxpool_forward<double>(s, x, y, arg);
  for (double v : y) EXPECT_EQ(v, 1.75);
  kernels::meanpool_forward<double>(s, x, y);
  for (double v : y) EXPECT_EQ(v, 1.75);
}

TEST(PoolKernel, TiesGoToFirstElement) {
  PoolShape s;
  s.in_h = s.in_w = 2;
  const std::vector<double> x{7, 7, 7, 7};
  std::vector<double> y(1);
  std::vector<std::size_t> arg(1);
  kernels::maxpool_forward<double>(s, x, y, arg);
  EXPECT_EQ(arg[0], 0u);
}

TEST(PoolKernel, MeanBackwardSpreadsQuarter) {
  PoolShape s;
  s.in_h = s.in_w = 4;
  const std::vector<double> dy{4, 8, 12, 16};
  std::vector<double> dx(16, -1.0);
  kernels::meanpool_backward<double>(s, dy, dx);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(dx[r * 4 + c], dy[(r / 2) * 2 + c / 2] / 4);
}

TEST(PoolKernel, MaxBackwardRoutesToArgmax) {
  PoolShape s;
  s.in_h = s.in_w = 2;
  const std::vector<double> x{1, 9, 3, 4};
  std::vector<double> y(1);
  std::vector<std::size_t> arg(1);
  kernels::maxpool_forward<double>(s, x, y, arg);
  std::vector<double> dx(4, 5.0);
  const std::vector<double> dy{2.5};
  kernels::maxpool_backward<double>(s, dy, arg, dx);
  EXPECT_EQ(dx, (std::vector<double>{0, 2.5, 0, 0}));
}

TEST(PoolKernel, BackendsAgree) {
  Prng rng(8);
  PoolShape s;
  s.batch = 2;
  s.channels = 3;
  s.in_h = 8;
  s.in_w = 6;
  s.kernel = 3;
  s.stride = 2;
  s.pad = 1;
  const auto x = random_values(rng, 2 * 3 * 8 * 6);
  const std::size_t n = 2 * 3 * s.out_h() * s.out_w();
  std::vector<double> y1(n), y2(n), m1(n), m2(n);
  std::vector<std::size_t> a1(n), a2(n);
  {
    kernels::ScopedBackend scope(kernels::Backend::serial);
    kernels::maxpool_forward<double>(s, x, y1, a1);
    kernels::meanpool_forward<double>(s, x, m1);
  }
  {
    kernels::ScopedBackend scope(kernels::Backend::openmp);
    kernels::maxpool_forward<double>(s, x, y2, a2);
    kernels::meanpool_forward<double>(s, x, m2);
  }
  EXPECT_TRUE(same_bits(y1, y2));
  EXPECT_TRUE(same_bits(m1, m2));
  EXPECT_EQ(a1, a2);
}

TEST(Backend, ScopedSwitchRestores) {
  kernels::set_backend(kernels::Backend::openmp);
  {
    kernels::ScopedBackend scope(kernels::Backend::serial);
    EXPECT_EQ(kernels::backend(), kernels::Backend::serial);
  }
  EXPECT_EQ(kernels::backend(), kernels::Backend::openmp);
  EXPECT_GE(kernels::thread_count(), 1);
}

}  // namespace
}  // namespace asl
