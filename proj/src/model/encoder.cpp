#include "model/encoder.hpp"

#include <cmath>
#include <random>

#include "common/error.hpp"

namespace cactus::model {

template <typename T>
Encoder<T>::Encoder(EncoderSpec spec) : spec_(std::move(spec)) {
  require(spec_.in_channels > 0 && spec_.base_width > 0 && !spec_.stage_blocks.empty(),
          "invalid encoder spec");
  stem_conv_ = add_conv("conv1", {spec_.in_channels, spec_.base_width, 7, 2, 3});
  stem_bn_ = add_bn("bn1", spec_.base_width);
  int in = spec_.base_width;
  for (std::size_t s = 0; s < spec_.stage_blocks.size(); ++s) {
    const int width = spec_.base_width << s;
    require(spec_.stage_blocks[s] > 0, "each stage needs at least one block");
    for (int b = 0; b < spec_.stage_blocks[s]; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string prefix = "layer" + std::to_string(s + 1) + "." + std::to_string(b) + ".";
      Block block;
      block.conv1 = add_conv(prefix + "conv1", {in, width, 3, stride, 1});
      block.bn1 = add_bn(prefix + "bn1", width);
      block.conv2 = add_conv(prefix + "conv2", {width, width, 3, 1, 1});
      block.bn2 = add_bn(prefix + "bn2", width);
      if (stride != 1 || in != width) {
        block.has_down = true;
        block.down = add_conv(prefix + "downsample.0", {in, width, 1, stride, 0});
        block.down_bn = add_bn(prefix + "downsample.1", width);
      }
      blocks_.push_back(block);
      in = width;
    }
  }
}

template <typename T>
typename Encoder<T>::ConvLayer Encoder<T>::add_conv(const std::string& name, ConvGeometry g) {
  ParamTensor<T> p;
  p.name = name + ".weight";
  p.shape = {g.out_channels, g.in_channels, g.kernel, g.kernel};
  p.value.assign(g.weight_count(), T(0));
  p.grad.assign(g.weight_count(), T(0));
  params_.push_back(std::move(p));
  return {g, static_cast<int>(params_.size()) - 1};
}

template <typename T>
typename Encoder<T>::BnLayer Encoder<T>::add_bn(const std::string& name, int channels) {
  auto push = [&](const char* suffix, T fill, bool trainable) {
    ParamTensor<T> p;
    p.name = name + suffix;
    p.shape = {channels};
    p.value.assign(static_cast<std::size_t>(channels), fill);
    p.grad.assign(static_cast<std::size_t>(channels), T(0));
    p.trainable = trainable;
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
  };
  BnLayer bn;
  bn.gamma = push(".weight", T(1), true);
  bn.beta = push(".bias", T(0), true);
  bn.mean = push(".running_mean", T(0), false);
  bn.var = push(".running_var", T(1), false);
  return bn;
}

template <typename T>
void Encoder<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& p : params_) {
    if (p.shape.size() == 4) {
      const double fan_out = static_cast<double>(p.shape[0]) * p.shape[2] * p.shape[3];
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_out));
      for (T& v : p.value) v = static_cast<T>(dist(rng));
    } else {
      const bool is_scale = p.name.ends_with(".weight") || p.name.ends_with(".running_var");
      std::fill(p.value.begin(), p.value.end(), is_scale ? T(1) : T(0));
    }
  }
  zero_grad();
}

template <typename T>
void Encoder<T>::bn_train(const BnLayer& bn, const Activation<T>& x, Activation<T>& y,
                          BatchNormCache<T>& cache) {
  batchnorm_forward_train(bn_params_, value(bn.gamma), value(bn.beta),
                          params_[static_cast<std::size_t>(bn.mean)].value.data(),
                          params_[static_cast<std::size_t>(bn.var)].value.data(), x, y, cache);
}

template <typename T>
void Encoder<T>::bn_eval(const BnLayer& bn, const Activation<T>& x, Activation<T>& y) const {
  batchnorm_forward_eval(bn_params_, value(bn.gamma), value(bn.beta), value(bn.mean),
                         value(bn.var), x, y);
}

template <typename T>
void Encoder<T>::bn_backward(const BnLayer& bn, const Activation<T>& x,
                             const BatchNormCache<T>& cache, const Activation<T>& dy,
                             Activation<T>& dx) {
  batchnorm_backward(value(bn.gamma), x, cache, dy, grad(bn.gamma), grad(bn.beta), dx);
}

template <typename T>
Features<T> Encoder<T>::forward_eval(const Activation<T>& input, Activation<T>* final_map) const {
  if (input.channels != spec_.in_channels)
    fail(ErrorCode::InvalidArgument, "encoder expects " + std::to_string(spec_.in_channels) +
                                         " input channels, got " +
                                         std::to_string(input.channels));
  require(input.height >= 8 && input.width >= 8 && input.batch > 0,
          "encoder input must be a non-empty batch of at least 8x8");
  Activation<T> a, b;
  conv_forward(stem_conv_.geometry, value(stem_conv_.weight), input, a);
  bn_eval(stem_bn_, a, b);
  relu_inplace(b);
  Activation<T> x;
  maxpool_forward(b, x, nullptr);
  Activation<T> t1, t2, shortcut;
  for (const Block& block : blocks_) {
    conv_forward(block.conv1.geometry, value(block.conv1.weight), x, t1);
    bn_eval(block.bn1, t1, t2);
    relu_inplace(t2);
    conv_forward(block.conv2.geometry, value(block.conv2.weight), t2, t1);
    Activation<T> out;
    bn_eval(block.bn2, t1, out);
    if (block.has_down) {
      conv_forward(block.down.geometry, value(block.down.weight), x, t1);
      bn_eval(block.down_bn, t1, shortcut);
      for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += shortcut.data[i];
    } else {
      for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += x.data[i];
    }
    relu_inplace(out);
    x = std::move(out);
  }
  Features<T> features = global_average_pool(x);
  if (final_map) *final_map = std::move(x);
  return features;
}

template <typename T>
Features<T> Encoder<T>::forward_train(const Activation<T>& input, Cache& cache) {
  if (input.channels != spec_.in_channels)
    fail(ErrorCode::InvalidArgument, "encoder expects " + std::to_string(spec_.in_channels) +
                                         " input channels, got " +
                                         std::to_string(input.channels));
  require(input.height >= 8 && input.width >= 8 && input.batch > 0,
          "encoder input must be a non-empty batch of at least 8x8");
  cache.input = &input;
  conv_forward(stem_conv_.geometry, value(stem_conv_.weight), input, cache.stem_conv);
  bn_train(stem_bn_, cache.stem_conv, cache.stem_act, cache.stem_bn);
  relu_inplace(cache.stem_act);
  maxpool_forward(cache.stem_act, cache.pooled, &cache.pool_argmax);
  cache.blocks.resize(blocks_.size());
  const Activation<T>* x = &cache.pooled;
  Activation<T> shortcut;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& block = blocks_[i];
    BlockCache& bc = cache.blocks[i];
    conv_forward(block.conv1.geometry, value(block.conv1.weight), *x, bc.conv1_out);
    bn_train(block.bn1, bc.conv1_out, bc.act1, bc.bn1);
    relu_inplace(bc.act1);
    conv_forward(block.conv2.geometry, value(block.conv2.weight), bc.act1, bc.conv2_out);
    bn_train(block.bn2, bc.conv2_out, bc.out, bc.bn2);
    if (block.has_down) {
      conv_forward(block.down.geometry, value(block.down.weight), *x, bc.down_out);
      bn_train(block.down_bn, bc.down_out, shortcut, bc.down_bn);
      for (std::size_t j = 0; j < bc.out.data.size(); ++j) bc.out.data[j] += shortcut.data[j];
    } else {
      for (std::size_t j = 0; j < bc.out.data.size(); ++j) bc.out.data[j] += x->data[j];
    }
    relu_inplace(bc.out);
    x = &bc.out;
  }
  return global_average_pool(*x);
}

template <typename T>
void Encoder<T>::backward(Cache& cache, const Features<T>& dfeatures) {
  require(!cache.blocks.empty() && cache.input != nullptr, "backward needs a training cache");
  const Activation<T>& last = cache.blocks.back().out;
  Activation<T> grad_out;
  global_average_pool_backward(dfeatures, last.height, last.width, grad_out);

  Activation<T> d_main, d_mid, d_input, d_short;
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    const Block& block = blocks_[i];
    BlockCache& bc = cache.blocks[i];
    const Activation<T>& x = i == 0 ? cache.pooled : cache.blocks[i - 1].out;
    relu_backward_inplace(bc.out, grad_out);

    bn_backward(block.bn2, bc.conv2_out, bc.bn2, grad_out, d_main);
    conv_backward(block.conv2.geometry, value(block.conv2.weight), bc.act1, d_main,
                  grad(block.conv2.weight), &d_mid);
    relu_backward_inplace(bc.act1, d_mid);
    bn_backward(block.bn1, bc.conv1_out, bc.bn1, d_mid, d_main);
    conv_backward(block.conv1.geometry, value(block.conv1.weight), x, d_main,
                  grad(block.conv1.weight), &d_input);
    if (block.has_down) {
      bn_backward(block.down_bn, bc.down_out, bc.down_bn, grad_out, d_main);
      conv_backward(block.down.geometry, value(block.down.weight), x, d_main,
                    grad(block.down.weight), &d_short);
      for (std::size_t j = 0; j < d_input.data.size(); ++j) d_input.data[j] += d_short.data[j];
    } else {
      for (std::size_t j = 0; j < d_input.data.size(); ++j) d_input.data[j] += grad_out.data[j];
    }
    std::swap(grad_out, d_input);
  }

  Activation<T> d_stem;
  maxpool_backward(cache.stem_act, grad_out, cache.pool_argmax, d_stem);
  relu_backward_inplace(cache.stem_act, d_stem);
  bn_backward(stem_bn_, cache.stem_conv, cache.stem_bn, d_stem, d_main);
  conv_backward(stem_conv_.geometry, value(stem_conv_.weight), *cache.input, d_main,
                grad(stem_conv_.weight), static_cast<Activation<T>*>(nullptr));
}

template <typename T>
void Encoder<T>::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T(0));
}

template <typename T>
std::size_t Encoder<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable) n += p.value.size();
  return n;
}

template class Encoder<float>;
template class Encoder<double>;

}  // namespace cactus::model
