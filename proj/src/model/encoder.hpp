#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "model/layers.hpp"
#include "model/tensor.hpp"

namespace cactus::model {

/// Residual encoder topology: 7x7/2 stem conv + BN + ReLU + 3x3/2 max pool,
/// then stages of basic blocks whose width doubles per stage, then global
/// average pooling. The default is the standard 18-layer configuration.
struct EncoderSpec {
  int in_channels = 3;
  int base_width = 64;
  std::vector<int> stage_blocks{2, 2, 2, 2};

  int feature_dim() const {
    return base_width << (static_cast<int>(stage_blocks.size()) - 1);
  }
  static EncoderSpec resnet18() { return {}; }
  bool operator==(const EncoderSpec&) const = default;
};

/// Named parameter or buffer. Buffers (batch-norm running statistics) are
/// persisted but never trained.
template <typename T>
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool trainable = true;
};

template <typename T>
class Encoder {
 public:
  struct BlockCache {
    Activation<T> conv1_out, act1, conv2_out, down_out, out;
    BatchNormCache<T> bn1, bn2, down_bn;
  };

  /// Intermediate tensors from a training-mode forward pass.
  struct Cache {
    const Activation<T>* input = nullptr;
    Activation<T> stem_conv, stem_act, pooled;
    std::vector<std::int32_t> pool_argmax;
    BatchNormCache<T> stem_bn;
    std::vector<BlockCache> blocks;
  };

  explicit Encoder(EncoderSpec spec = EncoderSpec::resnet18());

  const EncoderSpec& spec() const { return spec_; }
  std::vector<ParamTensor<T>>& params() { return params_; }
  const std::vector<ParamTensor<T>>& params() const { return params_; }

  /// He-normal (fan-out) convolution weights, unit BN scale, zero BN shift.
  void initialize(std::uint64_t seed);

  /// Inference with running statistics. `final_map` receives the last
  /// residual-stage output (before pooling) when non-null.
  Features<T> forward_eval(const Activation<T>& input, Activation<T>* final_map = nullptr) const;

  /// Batch-statistics forward; updates running statistics. `input` must outlive
  /// the cache.
  Features<T> forward_train(const Activation<T>& input, Cache& cache);

  /// Accumulates parameter gradients for d(loss)/d(features).
  void backward(Cache& cache, const Features<T>& dfeatures);

  void zero_grad();
  std::size_t trainable_count() const;

  template <typename U>
  Encoder<U> converted() const {
    Encoder<U> out(spec_);
    for (std::size_t i = 0; i < params_.size(); ++i)
      for (std::size_t j = 0; j < params_[i].value.size(); ++j)
        out.params()[i].value[j] = static_cast<U>(params_[i].value[j]);
    return out;
  }

 private:
  struct ConvLayer {
    ConvGeometry geometry;
    int weight = -1;
  };
  struct BnLayer {
    int gamma = -1, beta = -1, mean = -1, var = -1;
  };
  struct Block {
    ConvLayer conv1, conv2, down;
    BnLayer bn1, bn2, down_bn;
    bool has_down = false;
  };

  ConvLayer add_conv(const std::string& name, ConvGeometry geometry);
  BnLayer add_bn(const std::string& name, int channels);

  void bn_train(const BnLayer& bn, const Activation<T>& x, Activation<T>& y,
                BatchNormCache<T>& cache);
  void bn_eval(const BnLayer& bn, const Activation<T>& x, Activation<T>& y) const;
  void bn_backward(const BnLayer& bn, const Activation<T>& x, const BatchNormCache<T>& cache,
                   const Activation<T>& dy, Activation<T>& dx);
  const T* value(int index) const { return params_[static_cast<std::size_t>(index)].value.data(); }
  T* grad(int index) { return params_[static_cast<std::size_t>(index)].grad.data(); }

  EncoderSpec spec_;
  std::vector<ParamTensor<T>> params_;
  ConvLayer stem_conv_;
  BnLayer stem_bn_;
  std::vector<Block> blocks_;
  BatchNormParams bn_params_;
};

extern template class Encoder<float>;
extern template class Encoder<double>;

}  // namespace cactus::model
