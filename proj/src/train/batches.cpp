#include "train/batches.hpp"

#include <algorithm>
#include <numeric>

#include "common/error.hpp"

namespace cactus::train {

PreparedSplit::PreparedSplit(const data::DatasetManifest& manifest,
                             std::vector<std::size_t> indices, data::PreprocessSpec spec,
                             std::size_t cache_budget_bytes)
    : manifest_(&manifest), indices_(std::move(indices)), spec_(std::move(spec)) {
  for (std::size_t i : indices_) require(i < manifest.samples.size(), "sample index out of range");
  const std::size_t per = spec_.output_size();
  if (indices_.size() * per * sizeof(float) > cache_budget_bytes) return;
  cache_.resize(indices_.size() * per);
  for (std::size_t r = 0; r < indices_.size(); ++r) {
    const auto image = data::load_image(manifest, sample(r));
    data::preprocess_into(*image, spec_, std::span<float>(cache_.data() + r * per, per));
  }
}

model::Activation<float> PreparedSplit::batch(std::span<const std::size_t> rows) const {
  require(!rows.empty(), "empty batch");
  const int s = spec_.target_size;
  const std::size_t hw = static_cast<std::size_t>(s) * s;
  const std::size_t per = spec_.output_size();
  model::Activation<float> out;
  out.resize(3, static_cast<int>(rows.size()), s, s);
  std::vector<float> scratch;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < indices_.size(), "batch row out of range");
    const float* src;
    if (!cache_.empty()) {
      src = cache_.data() + rows[i] * per;
    } else {
      scratch.resize(per);
      data::preprocess_into(*data::load_image(*manifest_, sample(rows[i])), spec_, scratch);
      src = scratch.data();
    }
    for (int c = 0; c < 3; ++c)
      std::copy_n(src + c * hw, hw, out.at(c, static_cast<int>(i)));
  }
  return out;
}

model::Activation<float> PreparedSplit::range(std::size_t begin, std::size_t end) const {
  std::vector<std::size_t> rows(end - begin);
  std::iota(rows.begin(), rows.end(), begin);
  return batch(rows);
}

}  // namespace cactus::train
