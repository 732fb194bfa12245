#include "model/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "model/blas.hpp"

namespace cactus::model {

thread_local MacCounter* MacCounter::active_ = nullptr;

void configure_blas_single_thread() { openblas_set_num_threads(1); }

namespace {

// Column buffers are bounded so large batches are processed in sample chunks.
constexpr std::size_t kMaxColumnElements = std::size_t{1} << 23;

template <typename T>
std::vector<T>& workspace(int slot) {
  thread_local std::vector<T> buffers[2];
  return buffers[slot];
}

// cols[(c*k + ki)*k + kj][(n - n0)*HoWo + oy*Wo + ox]
template <typename T>
void im2col(const ConvGeometry& g, const Activation<T>& x, int n0, int count, int out_h,
            int out_w, T* cols) {
  const int k = g.kernel;
  const std::size_t cols_per_row = static_cast<std::size_t>(count) * out_h * out_w;
  for (int c = 0; c < g.in_channels; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + static_cast<std::size_t>((c * k + ki) * k + kj) * cols_per_row;
        for (int n = 0; n < count; ++n) {
          const T* src = x.at(c, n0 + n);
          for (int oy = 0; oy < out_h; ++oy) {
            T* dst = row + (static_cast<std::size_t>(n) * out_h + oy) * out_w;
            const int iy = oy * g.stride - g.padding + ki;
            if (iy < 0 || iy >= x.height) {
              std::fill(dst, dst + out_w, T(0));
              continue;
            }
            const T* src_row = src + static_cast<std::size_t>(iy) * x.width;
            if (g.stride == 1) {
              const int ix0 = kj - g.padding;
              for (int ox = 0; ox < out_w; ++ox) {
                const int ix = ix0 + ox;
                dst[ox] = (ix >= 0 && ix < x.width) ? src_row[ix] : T(0);
              }
            } else {
              for (int ox = 0; ox < out_w; ++ox) {
                const int ix = ox * g.stride - g.padding + kj;
                dst[ox] = (ix >= 0 && ix < x.width) ? src_row[ix] : T(0);
              }
            }
          }
        }
      }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, int n0, int count, int out_h, int out_w,
                Activation<T>& dx) {
  const int k = g.kernel;
  const std::size_t cols_per_row = static_cast<std::size_t>(count) * out_h * out_w;
  for (int c = 0; c < g.in_channels; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + static_cast<std::size_t>((c * k + ki) * k + kj) * cols_per_row;
        for (int n = 0; n < count; ++n) {
          T* dst = dx.at(c, n0 + n);
          for (int oy = 0; oy < out_h; ++oy) {
            const int iy = oy * g.stride - g.padding + ki;
            if (iy < 0 || iy >= dx.height) continue;
            const T* src = row + (static_cast<std::size_t>(n) * out_h + oy) * out_w;
            T* dst_row = dst + static_cast<std::size_t>(iy) * dx.width;
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * g.stride - g.padding + kj;
              if (ix >= 0 && ix < dx.width) dst_row[ix] += src[ox];
            }
          }
        }
      }
}

int chunk_size(const ConvGeometry& g, int batch, std::size_t out_spatial) {
  const std::size_t per_sample = static_cast<std::size_t>(g.patch()) * out_spatial;
  const std::size_t fit = std::max<std::size_t>(1, kMaxColumnElements / std::max<std::size_t>(1, per_sample));
  return static_cast<int>(std::min<std::size_t>(fit, static_cast<std::size_t>(batch)));
}

}  // namespace

template <typename T>
void conv_forward(const ConvGeometry& g, const T* weight, const Activation<T>& x,
                  Activation<T>& y) {
  const int out_h = g.out_extent(x.height);
  const int out_w = g.out_extent(x.width);
  y.resize(g.out_channels, x.batch, out_h, out_w);
  const std::size_t out_spatial = y.spatial();
  const int patch = g.patch();
  const int chunk = chunk_size(g, x.batch, out_spatial);
  auto& cols = workspace<T>(0);
  const int ldc = static_cast<int>(y.plane());
  for (int n0 = 0; n0 < x.batch; n0 += chunk) {
    const int count = std::min(chunk, x.batch - n0);
    const int columns = static_cast<int>(count * out_spatial);
    cols.resize(static_cast<std::size_t>(patch) * columns);
    im2col(g, x, n0, count, out_h, out_w, cols.data());
    gemm(false, false, g.out_channels, columns, patch, T(1), weight, patch, cols.data(), columns,
         T(0), y.data.data() + static_cast<std::size_t>(n0) * out_spatial, ldc);
  }
  MacCounter::add_conv(static_cast<std::uint64_t>(g.out_channels) * patch * y.plane());
}

template <typename T>
void conv_backward(const ConvGeometry& g, const T* weight, const Activation<T>& x,
                   const Activation<T>& dy, T* dweight, Activation<T>* dx) {
  const int out_h = dy.height;
  const int out_w = dy.width;
  const std::size_t out_spatial = dy.spatial();
  const int patch = g.patch();
  const int chunk = chunk_size(g, x.batch, out_spatial);
  auto& cols = workspace<T>(0);
  auto& dcols = workspace<T>(1);
  const int ld_dy = static_cast<int>(dy.plane());
  if (dx) dx->resize(x.channels, x.batch, x.height, x.width);
  for (int n0 = 0; n0 < x.batch; n0 += chunk) {
    const int count = std::min(chunk, x.batch - n0);
    const int columns = static_cast<int>(count * out_spatial);
    const T* dy_block = dy.data.data() + static_cast<std::size_t>(n0) * out_spatial;
    if (dweight) {
      cols.resize(static_cast<std::size_t>(patch) * columns);
      im2col(g, x, n0, count, out_h, out_w, cols.data());
      gemm(false, true, g.out_channels, patch, columns, T(1), dy_block, ld_dy, cols.data(),
           columns, T(1), dweight, patch);
    }
    if (dx) {
      dcols.resize(static_cast<std::size_t>(patch) * columns);
      gemm(true, false, patch, columns, g.out_channels, T(1), weight, patch, dy_block, ld_dy,
           T(0), dcols.data(), columns);
      col2im_add(g, dcols.data(), n0, count, out_h, out_w, *dx);
    }
  }
}

template <typename T>
void batchnorm_forward_train(const BatchNormParams& p, const T* gamma, const T* beta,
                             T* running_mean, T* running_var, const Activation<T>& x,
                             Activation<T>& y, BatchNormCache<T>& cache) {
  y.resize(x.channels, x.batch, x.height, x.width);
  cache.mean.assign(static_cast<std::size_t>(x.channels), T(0));
  cache.inv_std.assign(static_cast<std::size_t>(x.channels), T(0));
  const std::size_t m = x.plane();
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.channel(c);
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) sum += src[i];
    const double mean = sum / static_cast<double>(m);
    double sq = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double d = src[i] - mean;
      sq += d * d;
    }
    const double var = sq / static_cast<double>(m);
    const double inv_std = 1.0 / std::sqrt(var + p.epsilon);
    cache.mean[static_cast<std::size_t>(c)] = static_cast<T>(mean);
    cache.inv_std[static_cast<std::size_t>(c)] = static_cast<T>(inv_std);
    const T scale = static_cast<T>(gamma[c] * inv_std);
    const T shift = static_cast<T>(beta[c] - gamma[c] * inv_std * mean);
    T* dst = y.channel(c);
    for (std::size_t i = 0; i < m; ++i) dst[i] = src[i] * scale + shift;
    const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
    running_mean[c] = static_cast<T>((1.0 - p.momentum) * running_mean[c] + p.momentum * mean);
    running_var[c] = static_cast<T>((1.0 - p.momentum) * running_var[c] + p.momentum * unbiased);
  }
}

template <typename T>
void batchnorm_forward_eval(const BatchNormParams& p, const T* gamma, const T* beta,
                            const T* running_mean, const T* running_var, const Activation<T>& x,
                            Activation<T>& y) {
  y.resize(x.channels, x.batch, x.height, x.width);
  const std::size_t m = x.plane();
  for (int c = 0; c < x.channels; ++c) {
    const double inv_std = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + p.epsilon);
    const T scale = static_cast<T>(gamma[c] * inv_std);
    const T shift = static_cast<T>(beta[c] - gamma[c] * inv_std * running_mean[c]);
    const T* src = x.channel(c);
    T* dst = y.channel(c);
    for (std::size_t i = 0; i < m; ++i) dst[i] = src[i] * scale + shift;
  }
}

template <typename T>
void batchnorm_backward(const T* gamma, const Activation<T>& x, const BatchNormCache<T>& cache,
                        const Activation<T>& dy, T* dgamma, T* dbeta, Activation<T>& dx) {
  dx.resize(x.channels, x.batch, x.height, x.width);
  const std::size_t m = x.plane();
  for (int c = 0; c < x.channels; ++c) {
    const double mean = cache.mean[static_cast<std::size_t>(c)];
    const double inv_std = cache.inv_std[static_cast<std::size_t>(c)];
    const T* src = x.channel(c);
    const T* g = dy.channel(c);
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      sum_dy += g[i];
      sum_dy_xhat += g[i] * (src[i] - mean) * inv_std;
    }
    dgamma[c] += static_cast<T>(sum_dy_xhat);
    dbeta[c] += static_cast<T>(sum_dy);
    const double k = gamma[c] * inv_std / static_cast<double>(m);
    const double md = static_cast<double>(m);
    T* out = dx.channel(c);
    for (std::size_t i = 0; i < m; ++i) {
      const double xhat = (src[i] - mean) * inv_std;
      out[i] = static_cast<T>(k * (md * g[i] - sum_dy - xhat * sum_dy_xhat));
    }
  }
}

template <typename T>
void relu_inplace(Activation<T>& x) {
  for (T& v : x.data) v = v > T(0) ? v : T(0);
}

template <typename T>
void relu_backward_inplace(const Activation<T>& y, Activation<T>& grad) {
  for (std::size_t i = 0; i < grad.data.size(); ++i)
    if (!(y.data[i] > T(0))) grad.data[i] = T(0);
}

template <typename T>
void maxpool_forward(const Activation<T>& x, Activation<T>& y, std::vector<std::int32_t>* argmax) {
  constexpr int k = 3, stride = 2, pad = 1;
  const int out_h = (x.height + 2 * pad - k) / stride + 1;
  const int out_w = (x.width + 2 * pad - k) / stride + 1;
  y.resize(x.channels, x.batch, out_h, out_w);
  if (argmax) argmax->assign(y.data.size(), 0);
  std::size_t o = 0;
  for (int c = 0; c < x.channels; ++c)
    for (int n = 0; n < x.batch; ++n) {
      const T* src = x.at(c, n);
      const std::size_t base = static_cast<std::size_t>(src - x.data.data());
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          int best_at = 0;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= x.height) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= x.width) continue;
              const T v = src[iy * x.width + ix];
              if (v > best) {
                best = v;
                best_at = iy * x.width + ix;
              }
            }
          }
          y.data[o] = best;
          if (argmax) (*argmax)[o] = static_cast<std::int32_t>(base + static_cast<std::size_t>(best_at));
        }
    }
}

template <typename T>
void maxpool_backward(const Activation<T>& x, const Activation<T>& dy,
                      const std::vector<std::int32_t>& argmax, Activation<T>& dx) {
  dx.resize(x.channels, x.batch, x.height, x.width);
  for (std::size_t o = 0; o < dy.data.size(); ++o)
    dx.data[static_cast<std::size_t>(argmax[o])] += dy.data[o];
}

template <typename T>
Features<T> global_average_pool(const Activation<T>& x) {
  Features<T> f;
  f.dim = x.channels;
  f.batch = x.batch;
  f.data.assign(static_cast<std::size_t>(f.dim) * f.batch, T(0));
  const std::size_t hw = x.spatial();
  for (int c = 0; c < x.channels; ++c)
    for (int n = 0; n < x.batch; ++n) {
      const T* src = x.at(c, n);
      T sum = 0;
      for (std::size_t i = 0; i < hw; ++i) sum += src[i];
      f.at(c, n) = sum / static_cast<T>(hw);
    }
  return f;
}

template <typename T>
void global_average_pool_backward(const Features<T>& dfeatures, int height, int width,
                                  Activation<T>& dx) {
  dx.resize(dfeatures.dim, dfeatures.batch, height, width);
  const std::size_t hw = dx.spatial();
  for (int c = 0; c < dfeatures.dim; ++c)
    for (int n = 0; n < dfeatures.batch; ++n) {
      const T g = dfeatures.at(c, n) / static_cast<T>(hw);
      T* dst = dx.at(c, n);
      std::fill(dst, dst + hw, g);
    }
}

#define CACTUS_INSTANTIATE_LAYERS(T)                                                           \
  template void conv_forward<T>(const ConvGeometry&, const T*, const Activation<T>&,           \
                                Activation<T>&);                                               \
  template void conv_backward<T>(const ConvGeometry&, const T*, const Activation<T>&,          \
                                 const Activation<T>&, T*, Activation<T>*);                    \
  template void batchnorm_forward_train<T>(const BatchNormParams&, const T*, const T*, T*, T*, \
                                           const Activation<T>&, Activation<T>&,               \
                                           BatchNormCache<T>&);                                \
  template void batchnorm_forward_eval<T>(const BatchNormParams&, const T*, const T*,          \
                                          const T*, const T*, const Activation<T>&,            \
                                          Activation<T>&);                                     \
  template void batchnorm_backward<T>(const T*, const Activation<T>&,                          \
                                      const BatchNormCache<T>&, const Activation<T>&, T*, T*,  \
                                      Activation<T>&);                                         \
  template void relu_inplace<T>(Activation<T>&);                                               \
  template void relu_backward_inplace<T>(const Activation<T>&, Activation<T>&);                \
  template void maxpool_forward<T>(const Activation<T>&, Activation<T>&,                       \
                                   std::vector<std::int32_t>*);                                \
  template void maxpool_backward<T>(const Activation<T>&, const Activation<T>&,                \
                                    const std::vector<std::int32_t>&, Activation<T>&);         \
  template Features<T> global_average_pool<T>(const Activation<T>&);                           \
  template void global_average_pool_backward<T>(const Features<T>&, int, int, Activation<T>&);

CACTUS_INSTANTIATE_LAYERS(float)
CACTUS_INSTANTIATE_LAYERS(double)

#undef CACTUS_INSTANTIATE_LAYERS

}  // namespace cactus::model
