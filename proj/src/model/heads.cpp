#include "model/heads.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "common/error.hpp"
#include "model/blas.hpp"

namespace cactus::model {

template <typename T>
LinearHead<T>::LinearHead(int in, int out)
    : in_dim(in),
      out_dim(out),
      weight(static_cast<std::size_t>(in) * out, T(0)),
      bias(static_cast<std::size_t>(out), T(0)),
      weight_grad(weight.size(), T(0)),
      bias_grad(bias.size(), T(0)) {
  require(in > 0 && out > 0, "head dimensions must be positive");
}

template <typename T>
void LinearHead<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (T& w : weight) w = static_cast<T>(dist(rng));
  for (T& b : bias) b = static_cast<T>(dist(rng));
  zero_grad();
}

template <typename T>
void LinearHead<T>::zero_grad() {
  std::fill(weight_grad.begin(), weight_grad.end(), T(0));
  std::fill(bias_grad.begin(), bias_grad.end(), T(0));
}

template <typename T>
Features<T> LinearHead<T>::forward(const Features<T>& x) const {
  if (x.dim != in_dim)
    fail(ErrorCode::InvalidArgument, "head expects " + std::to_string(in_dim) +
                                         "-dim features, got " + std::to_string(x.dim));
  Features<T> y;
  y.dim = out_dim;
  y.batch = x.batch;
  y.data.assign(static_cast<std::size_t>(out_dim) * x.batch, T(0));
  for (int n = 0; n < x.batch; ++n)
    for (int o = 0; o < out_dim; ++o) {
      const T* w = weight.data() + static_cast<std::size_t>(o) * in_dim;
      T acc = T(0);
      for (int d = 0; d < in_dim; ++d) acc += w[d] * x.at(d, n);
      y.at(o, n) = acc + bias[static_cast<std::size_t>(o)];
    }
  MacCounter::add_linear(static_cast<std::uint64_t>(in_dim) * out_dim * x.batch);
  return y;
}

template <typename T>
void LinearHead<T>::backward(const Features<T>& x, const Features<T>& dy, Features<T>* dx) {
  for (int o = 0; o < out_dim; ++o) {
    T* gw = weight_grad.data() + static_cast<std::size_t>(o) * in_dim;
    for (int n = 0; n < x.batch; ++n) {
      const T g = dy.at(o, n);
      bias_grad[static_cast<std::size_t>(o)] += g;
      for (int d = 0; d < in_dim; ++d) gw[d] += g * x.at(d, n);
    }
  }
  if (!dx) return;
  dx->dim = in_dim;
  dx->batch = x.batch;
  dx->data.assign(static_cast<std::size_t>(in_dim) * x.batch, T(0));
  for (int o = 0; o < out_dim; ++o) {
    const T* w = weight.data() + static_cast<std::size_t>(o) * in_dim;
    for (int n = 0; n < x.batch; ++n) {
      const T g = dy.at(o, n);
      for (int d = 0; d < in_dim; ++d) dx->at(d, n) += w[d] * g;
    }
  }
}

template <typename T>
Features<T> softmax(const Features<T>& logits) {
  Features<T> p = logits;
  for (int n = 0; n < logits.batch; ++n) {
    T top = logits.at(0, n);
    for (int k = 1; k < logits.dim; ++k) top = std::max(top, logits.at(k, n));
    double sum = 0.0;
    for (int k = 0; k < logits.dim; ++k) sum += std::exp(static_cast<double>(logits.at(k, n) - top));
    for (int k = 0; k < logits.dim; ++k)
      p.at(k, n) = static_cast<T>(std::exp(static_cast<double>(logits.at(k, n) - top)) / sum);
  }
  return p;
}

template <typename T>
double cross_entropy(const Features<T>& logits, std::span<const int> labels,
                     std::type_identity_t<Features<T>>* dlogits) {
  require(static_cast<int>(labels.size()) == logits.batch, "label count does not match batch");
  require(logits.batch > 0, "cross-entropy of an empty batch");
  double total = 0.0;
  if (dlogits) *dlogits = logits;
  const double inv_batch = 1.0 / logits.batch;
  for (int n = 0; n < logits.batch; ++n) {
    const int y = labels[static_cast<std::size_t>(n)];
    require(y >= 0 && y < logits.dim, "label out of range");
    double top = logits.at(0, n);
    for (int k = 1; k < logits.dim; ++k) top = std::max<double>(top, logits.at(k, n));
    double sum = 0.0;
    for (int k = 0; k < logits.dim; ++k) sum += std::exp(logits.at(k, n) - top);
    const double log_sum = std::log(sum) + top;
    total += log_sum - logits.at(y, n);
    if (dlogits)
      for (int k = 0; k < logits.dim; ++k) {
        const double p = std::exp(logits.at(k, n) - log_sum);
        dlogits->at(k, n) = static_cast<T>((p - (k == y ? 1.0 : 0.0)) * inv_batch);
      }
  }
  return total * inv_batch;
}

template <typename T>
double mean_squared_error(const Features<T>& prediction, std::span<const std::type_identity_t<T>> target,
                          std::type_identity_t<Features<T>>* dprediction) {
  require(prediction.dim == 1, "mean squared error expects a scalar output");
  require(static_cast<int>(target.size()) == prediction.batch, "target count does not match batch");
  require(prediction.batch > 0, "mean squared error of an empty batch");
  if (dprediction) *dprediction = prediction;
  double total = 0.0;
  const double inv_batch = 1.0 / prediction.batch;
  for (int n = 0; n < prediction.batch; ++n) {
    const double r = static_cast<double>(prediction.data[static_cast<std::size_t>(n)]) -
                     static_cast<double>(target[static_cast<std::size_t>(n)]);
    total += r * r;
    if (dprediction) dprediction->data[static_cast<std::size_t>(n)] = static_cast<T>(2.0 * r * inv_batch);
  }
  return total * inv_batch;
}

template struct LinearHead<float>;
template struct LinearHead<double>;
template Features<float> softmax(const Features<float>&);
template Features<double> softmax(const Features<double>&);
template double cross_entropy(const Features<float>&, std::span<const int>, Features<float>*);
template double cross_entropy(const Features<double>&, std::span<const int>, Features<double>*);
template double mean_squared_error(const Features<float>&, std::span<const float>, Features<float>*);
template double mean_squared_error(const Features<double>&, std::span<const double>, Features<double>*);

}  // namespace cactus::model
