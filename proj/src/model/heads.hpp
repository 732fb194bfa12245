#pragma once

#include <cstdint>
#include <span>
#include <type_traits>
#include <vector>

#include "model/tensor.hpp"

namespace cactus::model {

enum class HeadKind { Classification, Grading };

/// Affine map in_dim -> out_dim with bias. Weight layout [out][in].
///
/// Evaluated with a fixed-order scalar loop rather than GEMM so every output
/// row is computed identically regardless of how many rows the head has.
template <typename T>
struct LinearHead {
  int in_dim = 0;
  int out_dim = 0;
  std::vector<T> weight;
  std::vector<T> bias;
  std::vector<T> weight_grad;
  std::vector<T> bias_grad;

  LinearHead() = default;
  LinearHead(int in, int out);

  /// U(-1/sqrt(in), 1/sqrt(in)) for weights and bias.
  void initialize(std::uint64_t seed);
  void zero_grad();
  std::size_t param_count() const { return weight.size() + bias.size(); }

  Features<T> forward(const Features<T>& x) const;
  /// Accumulates parameter gradients; writes d(loss)/dx when `dx` is non-null.
  void backward(const Features<T>& x, const Features<T>& dy, Features<T>* dx);

  template <typename U>
  LinearHead<U> converted() const {
    LinearHead<U> out(in_dim, out_dim);
    for (std::size_t i = 0; i < weight.size(); ++i) out.weight[i] = static_cast<U>(weight[i]);
    for (std::size_t i = 0; i < bias.size(); ++i) out.bias[i] = static_cast<U>(bias[i]);
    return out;
  }
};

/// Column-wise softmax of logits [K][batch].
template <typename T>
Features<T> softmax(const Features<T>& logits);

/// Mean categorical cross-entropy over the batch; `dlogits` receives its
/// gradient when non-null.
template <typename T>
double cross_entropy(const Features<T>& logits, std::span<const int> labels,
                     std::type_identity_t<Features<T>>* dlogits = nullptr);

/// Mean squared error of a [1][batch] prediction.
template <typename T>
double mean_squared_error(const Features<T>& prediction, std::span<const std::type_identity_t<T>> target,
                          std::type_identity_t<Features<T>>* dprediction = nullptr);

inline double clamp_grade(double raw) { return raw < 0.0 ? 0.0 : (raw > 10.0 ? 10.0 : raw); }

extern template struct LinearHead<float>;
extern template struct LinearHead<double>;

}  // namespace cactus::model
