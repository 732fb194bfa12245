#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "data/manifest.hpp"
#include "model/tensor.hpp"

namespace cactus::train {

/// Samples of one split with their preprocessed tensors. Tensors are cached
/// in memory when they fit `cache_budget_bytes`, otherwise each batch is
/// decoded and preprocessed on demand.
class PreparedSplit {
 public:
  PreparedSplit(const data::DatasetManifest& manifest, std::vector<std::size_t> indices,
                data::PreprocessSpec spec, std::size_t cache_budget_bytes = std::size_t{1} << 30);

  std::size_t size() const { return indices_.size(); }
  const data::ImageSample& sample(std::size_t row) const {
    return manifest_->samples[indices_[row]];
  }
  const data::PreprocessSpec& spec() const { return spec_; }

  model::Activation<float> batch(std::span<const std::size_t> rows) const;
  /// Rows [begin, end) in order.
  model::Activation<float> range(std::size_t begin, std::size_t end) const;

 private:
  const data::DatasetManifest* manifest_;
  std::vector<std::size_t> indices_;
  data::PreprocessSpec spec_;
  std::vector<float> cache_;
};

}  // namespace cactus::train
