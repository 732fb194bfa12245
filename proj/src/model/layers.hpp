#pragma once

#include <cstdint>
#include <vector>

#include "model/tensor.hpp"

namespace cactus::model {

struct ConvGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;

  int out_extent(int in) const { return (in + 2 * padding - kernel) / stride + 1; }
  int patch() const { return in_channels * kernel * kernel; }
  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * patch();
  }
};

/// Bias-free 2-D convolution. weight layout [out][in][k][k].
template <typename T>
void conv_forward(const ConvGeometry& g, const T* weight, const Activation<T>& x,
                  Activation<T>& y);

/// Accumulates into `dweight`; writes the input gradient to `dx` when non-null.
template <typename T>
void conv_backward(const ConvGeometry& g, const T* weight, const Activation<T>& x,
                   const Activation<T>& dy, T* dweight, Activation<T>* dx);

struct BatchNormParams {
  double momentum = 0.1;
  double epsilon = 1e-5;
};

/// Per-channel batch statistics kept for the backward pass.
template <typename T>
struct BatchNormCache {
  std::vector<T> mean;
  std::vector<T> inv_std;
};

/// Training-mode batch norm: normalizes with batch statistics and updates the
/// running estimates (unbiased variance, as PyTorch does).
template <typename T>
void batchnorm_forward_train(const BatchNormParams& p, const T* gamma, const T* beta,
                             T* running_mean, T* running_var, const Activation<T>& x,
                             Activation<T>& y, BatchNormCache<T>& cache);

template <typename T>
void batchnorm_forward_eval(const BatchNormParams& p, const T* gamma, const T* beta,
                            const T* running_mean, const T* running_var, const Activation<T>& x,
                            Activation<T>& y);

/// Backward through training-mode batch norm given its input `x`.
template <typename T>
void batchnorm_backward(const T* gamma, const Activation<T>& x, const BatchNormCache<T>& cache,
                        const Activation<T>& dy, T* dgamma, T* dbeta, Activation<T>& dx);

template <typename T>
void relu_inplace(Activation<T>& x);

/// dx *= (y > 0), in place on the gradient.
template <typename T>
void relu_backward_inplace(const Activation<T>& y, Activation<T>& grad);

/// 3x3 stride-2 pad-1 max pool. `argmax` stores flat input offsets.
template <typename T>
void maxpool_forward(const Activation<T>& x, Activation<T>& y, std::vector<std::int32_t>* argmax);

template <typename T>
void maxpool_backward(const Activation<T>& x, const Activation<T>& dy,
                      const std::vector<std::int32_t>& argmax, Activation<T>& dx);

template <typename T>
Features<T> global_average_pool(const Activation<T>& x);

/// Spreads dfeatures evenly over each spatial map.
template <typename T>
void global_average_pool_backward(const Features<T>& dfeatures, int height, int width,
                                  Activation<T>& dx);

}  // namespace cactus::model
