#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "data/image.hpp"

namespace cactus::data {

struct CropBox {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  bool operator==(const CropBox&) const = default;
};

/// Per-channel normalization applied after intensities are scaled to [0, 1].
struct Normalization {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};

  bool operator==(const Normalization&) const = default;
};

struct PreprocessSpec {
  std::optional<CropBox> crop;
  int target_size = 224;
  Normalization normalization;

  std::size_t output_size() const {
    return 3u * static_cast<std::size_t>(target_size) * static_cast<std::size_t>(target_size);
  }

  bool operator==(const PreprocessSpec&) const = default;
};

/// Bilinear resample with half-pixel centres (align_corners = false). Output
/// values stay in the source intensity units.
std::vector<float> resize_bilinear(const GrayImage& image, int out_width, int out_height);

/// Crop then resize to target_size x target_size, scaled to [0, 1]. Throws
/// when the crop box falls outside the image.
std::vector<float> crop_and_resize(const GrayImage& image, const PreprocessSpec& spec);

/// Full pipeline producing a 3 x S x S planar tensor written to `out`
/// (out.size() must equal spec.output_size()).
void preprocess_into(const GrayImage& image, const PreprocessSpec& spec, std::span<float> out);

std::vector<float> preprocess(const GrayImage& image, const PreprocessSpec& spec);

}  // namespace cactus::data
