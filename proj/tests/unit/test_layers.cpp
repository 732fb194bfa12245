#include "doctest.h"

#include <cmath>
#include <random>

#include "model/layers.hpp"
#include "support/gradcheck.hpp"

using namespace cactus::model;

namespace {

Activation<double> random_activation(int c, int n, int h, int w, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Activation<double> a;
  a.resize(c, n, h, w);
  for (auto& v : a.data) v = normal(rng);
  return a;
}

double x_at(const Activation<double>& x, int c, int n, int y, int xx) {
  if (y < 0 || xx < 0 || y >= x.height || xx >= x.width) return 0.0;
  return x.at(c, n)[static_cast<std::size_t>(y) * x.width + xx];
}

// Direct seven-loop convolution.
Activation<double> conv_oracle(const ConvGeometry& g, const std::vector<double>& w,
                               const Activation<double>& x) {
  Activation<double> y;
  const int oh = g.out_extent(x.height), ow = g.out_extent(x.width);
  y.resize(g.out_channels, x.batch, oh, ow);
  for (int o = 0; o < g.out_channels; ++o)
    for (int n = 0; n < x.batch; ++n)
      for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
          double s = 0.0;
          for (int i = 0; i < g.in_channels; ++i)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx)
                s += w[((static_cast<std::size_t>(o) * g.in_channels + i) * g.kernel + ky) * g.kernel + kx] *
                     x_at(x, i, n, r * g.stride + ky - g.padding, c * g.stride + kx - g.padding);
          y.at(o, n)[static_cast<std::size_t>(r) * ow + c] = s;
        }
  return y;
}

}  // namespace

TEST_SUITE("layers") {

TEST_CASE("convolution forward and backward match direct loops") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::vector<ConvGeometry> geometries{
      {3, 5, 7, 2, 3}, {4, 6, 3, 1, 1}, {4, 6, 3, 2, 1}, {6, 3, 1, 2, 0}, {2, 2, 1, 1, 0}};
  for (const auto& g : geometries) {
    auto x = random_activation(g.in_channels, 2, 11, 9, rng);
    std::vector<double> w(g.weight_count());
    for (auto& v : w) v = normal(rng);
    Activation<double> y;
    conv_forward(g, w.data(), x, y);
    const auto ref = conv_oracle(g, w, x);
    REQUIRE(y.data.size() == ref.data.size());
    for (std::size_t i = 0; i < y.data.size(); ++i) REQUIRE(y.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-10));

    auto dy = random_activation(g.out_channels, 2, y.height, y.width, rng);
    std::vector<double> dw(w.size(), 0.0);
    Activation<double> dx;
    conv_backward(g, w.data(), x, dy, dw.data(), &dx);
    // The adjoint of a linear map: dW = sum dy * x-patch, dX = sum dy * w.
    std::vector<double> dw_ref(w.size(), 0.0);
    Activation<double> dx_ref;
    dx_ref.resize(x.channels, x.batch, x.height, x.width);
    for (int o = 0; o < g.out_channels; ++o)
      for (int n = 0; n < x.batch; ++n)
        for (int r = 0; r < y.height; ++r)
          for (int c = 0; c < y.width; ++c) {
            const double d = dy.at(o, n)[static_cast<std::size_t>(r) * y.width + c];
            for (int i = 0; i < g.in_channels; ++i)
              for (int ky = 0; ky < g.kernel; ++ky)
                for (int kx = 0; kx < g.kernel; ++kx) {
                  const int yy = r * g.stride + ky - g.padding, xx = c * g.stride + kx - g.padding;
                  if (yy < 0 || xx < 0 || yy >= x.height || xx >= x.width) continue;
                  const std::size_t wi =
                      ((static_cast<std::size_t>(o) * g.in_channels + i) * g.kernel + ky) * g.kernel + kx;
                  dw_ref[wi] += d * x_at(x, i, n, yy, xx);
                  dx_ref.at(i, n)[static_cast<std::size_t>(yy) * x.width + xx] += d * w[wi];
                }
          }
    for (std::size_t i = 0; i < dw.size(); ++i) REQUIRE(dw[i] == doctest::Approx(dw_ref[i]).epsilon(1e-10));
    for (std::size_t i = 0; i < dx.data.size(); ++i)
      REQUIRE(dx.data[i] == doctest::Approx(dx_ref.data[i]).epsilon(1e-10));
  }
}

TEST_CASE("float and double convolution agree") {
  std::mt19937_64 rng(2);
  const ConvGeometry g{8, 16, 3, 1, 1};
  auto xd = random_activation(8, 2, 10, 10, rng);
  std::vector<double> wd(g.weight_count());
  std::normal_distribution<double> normal(0.0, 0.2);
  for (auto& v : wd) v = normal(rng);
  Activation<float> xf;
  xf.resize(8, 2, 10, 10);
  for (std::size_t i = 0; i < xd.data.size(); ++i) xf.data[i] = static_cast<float>(xd.data[i]);
  std::vector<float> wf(wd.begin(), wd.end());
  Activation<double> yd;
  Activation<float> yf;
  conv_forward(g, wd.data(), xd, yd);
  conv_forward(g, wf.data(), xf, yf);
  for (std::size_t i = 0; i < yd.data.size(); ++i) REQUIRE(yf.data[i] == doctest::Approx(yd.data[i]).epsilon(1e-4));
}

TEST_CASE("training batch norm normalizes per channel and tracks unbiased running variance") {
  std::mt19937_64 rng(3);
  auto x = random_activation(3, 4, 5, 5, rng);
  for (auto& v : x.data) v = 2.0 * v + 1.5;
  std::vector<double> gamma{1.0, 2.0, 0.5}, beta{0.0, -1.0, 3.0};
  std::vector<double> rmean(3, 0.0), rvar(3, 1.0);
  Activation<double> y;
  BatchNormCache<double> cache;
  batchnorm_forward_train(BatchNormParams{}, gamma.data(), beta.data(), rmean.data(), rvar.data(), x, y, cache);
  const double m = static_cast<double>(x.plane());
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < x.plane(); ++i) mean += x.channel(c)[i];
    mean /= m;
    for (std::size_t i = 0; i < x.plane(); ++i) var += (x.channel(c)[i] - mean) * (x.channel(c)[i] - mean);
    var /= m;
    for (std::size_t i = 0; i < x.plane(); ++i) {
      const double expected = gamma[c] * (x.channel(c)[i] - mean) / std::sqrt(var + 1e-5) + beta[c];
      REQUIRE(y.channel(c)[i] == doctest::Approx(expected).epsilon(1e-10));
    }
    CHECK(rmean[c] == doctest::Approx(0.1 * mean).epsilon(1e-12));
    CHECK(rvar[c] == doctest::Approx(0.9 + 0.1 * var * m / (m - 1)).epsilon(1e-12));
  }
}

TEST_CASE("batch norm backward matches finite differences") {
  std::mt19937_64 rng(4);
  auto x = random_activation(2, 3, 3, 3, rng);
  auto dy = random_activation(2, 3, 3, 3, rng);
  std::vector<double> gamma{1.3, 0.7}, beta{0.1, -0.2};
  auto objective = [&](const Activation<double>& in, const std::vector<double>& g, const std::vector<double>& b) {
    std::vector<double> rm(2, 0.0), rv(2, 1.0);
    Activation<double> y;
    BatchNormCache<double> cache;
    batchnorm_forward_train(BatchNormParams{}, g.data(), b.data(), rm.data(), rv.data(), in, y, cache);
    double s = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * dy.data[i];
    return s;
  };
  std::vector<double> rm(2, 0.0), rv(2, 1.0);
  Activation<double> y, dx;
  BatchNormCache<double> cache;
  batchnorm_forward_train(BatchNormParams{}, gamma.data(), beta.data(), rm.data(), rv.data(), x, y, cache);
  std::vector<double> dgamma(2, 0.0), dbeta(2, 0.0);
  batchnorm_backward(gamma.data(), x, cache, dy, dgamma.data(), dbeta.data(), dx);
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    auto up = x, down = x;
    up.data[i] += h;
    down.data[i] -= h;
    const double numeric = (objective(up, gamma, beta) - objective(down, gamma, beta)) / (2 * h);
    REQUIRE(dx.data[i] == doctest::Approx(numeric).epsilon(1e-6));
  }
  for (int c = 0; c < 2; ++c) {
    auto gu = gamma, gd = gamma;
    gu[c] += h;
    gd[c] -= h;
    CHECK(dgamma[c] == doctest::Approx((objective(x, gu, beta) - objective(x, gd, beta)) / (2 * h)).epsilon(1e-6));
    auto bu = beta, bd = beta;
    bu[c] += h;
    bd[c] -= h;
    CHECK(dbeta[c] == doctest::Approx((objective(x, gamma, bu) - objective(x, gamma, bd)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("eval batch norm uses running statistics") {
  Activation<double> x, y;
  x.resize(1, 1, 1, 2);
  x.data = {1.0, 3.0};
  const double gamma = 2.0, beta = 1.0, mean = 1.0, var = 4.0;
  batchnorm_forward_eval(BatchNormParams{}, &gamma, &beta, &mean, &var, x, y);
  CHECK(y.data[0] == doctest::Approx(1.0));
  CHECK(y.data[1] == doctest::Approx(2.0 * 2.0 / std::sqrt(4.0 + 1e-5) + 1.0));
}

TEST_CASE("max pool picks the window maximum and routes gradients to it") {
  std::mt19937_64 rng(5);
  auto x = random_activation(2, 2, 7, 6, rng);
  Activation<double> y;
  std::vector<std::int32_t> argmax;
  maxpool_forward(x, y, &argmax);
  CHECK(y.height == 4);
  CHECK(y.width == 3);
  for (int c = 0; c < 2; ++c)
    for (int n = 0; n < 2; ++n)
      for (int r = 0; r < y.height; ++r)
        for (int q = 0; q < y.width; ++q) {
          double best = -1e300;
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int yy = r * 2 + ky - 1, xx = q * 2 + kx - 1;
              if (yy >= 0 && xx >= 0 && yy < x.height && xx < x.width)
                best = std::max(best, x.at(c, n)[static_cast<std::size_t>(yy) * x.width + xx]);
            }
          REQUIRE(y.at(c, n)[static_cast<std::size_t>(r) * y.width + q] == best);
        }
  auto dy = random_activation(2, 2, y.height, y.width, rng);
  Activation<double> dx;
  maxpool_backward(x, dy, argmax, dx);
  double sum_dx = 0.0, sum_dy = 0.0;
  for (double v : dx.data) sum_dx += v;
  for (double v : dy.data) sum_dy += v;
  CHECK(sum_dx == doctest::Approx(sum_dy));
}

TEST_CASE("global average pool and its backward") {
  std::mt19937_64 rng(6);
  auto x = random_activation(3, 2, 4, 5, rng);
  const auto f = global_average_pool(x);
  for (int c = 0; c < 3; ++c)
    for (int n = 0; n < 2; ++n) {
      double s = 0.0;
      for (std::size_t i = 0; i < x.spatial(); ++i) s += x.at(c, n)[i];
      CHECK(f.at(c, n) == doctest::Approx(s / 20.0));
    }
  Activation<double> dx;
  global_average_pool_backward(f, 4, 5, dx);
  CHECK(dx.at(1, 1)[7] == doctest::Approx(f.at(1, 1) / 20.0));
}

TEST_CASE("relu and its backward") {
  Activation<double> x;
  x.resize(1, 1, 1, 4);
  x.data = {-1.0, 0.0, 2.0, -3.0};
  relu_inplace(x);
  CHECK(x.data == std::vector<double>{0.0, 0.0, 2.0, 0.0});
  Activation<double> g = x;
  g.data = {1.0, 1.0, 1.0, 1.0};
  relu_backward_inplace(x, g);
  CHECK(g.data == std::vector<double>{0.0, 0.0, 1.0, 0.0});
}

TEST_CASE("one-block encoder gradients match central differences") {
  for (std::uint64_t seed : {11u, 12u}) {
    const auto cce = gradient_check(false, 100, seed);
    const auto mse = gradient_check(true, 100, seed);
    CHECK(cce.coordinates == 100);
    CHECK(cce.max_relative_error < 1e-4);
    CHECK(mse.max_relative_error < 1e-4);
  }
}

}  // TEST_SUITE
