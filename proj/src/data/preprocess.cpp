#include "data/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"

namespace cactus::data {

namespace {

GrayImage apply_crop(const GrayImage& image, const CropBox& box) {
  if (box.width <= 0 || box.height <= 0 || box.x < 0 || box.y < 0 ||
      box.x + box.width > image.width || box.y + box.height > image.height)
    fail(ErrorCode::InvalidArgument,
         "crop box (" + std::to_string(box.x) + "," + std::to_string(box.y) + "," +
             std::to_string(box.width) + "x" + std::to_string(box.height) +
             ") outside image bounds " + std::to_string(image.width) + "x" +
             std::to_string(image.height));
  GrayImage out(box.width, box.height);
  for (int y = 0; y < box.height; ++y)
    std::copy_n(image.pixels.begin() + static_cast<std::ptrdiff_t>(y + box.y) * image.width + box.x,
                box.width, out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * box.width);
  return out;
}

}  // namespace

std::vector<float> resize_bilinear(const GrayImage& image, int out_width, int out_height) {
  require(!image.empty(), "cannot resize an empty image");
  require(out_width > 0 && out_height > 0, "resize target must be positive");
  std::vector<float> out(static_cast<std::size_t>(out_width) * out_height);
  const double sx = static_cast<double>(image.width) / out_width;
  const double sy = static_cast<double>(image.height) / out_height;

  // Precompute horizontal taps; they are shared by every output row.
  std::vector<int> x0(static_cast<std::size_t>(out_width)), x1(x0.size());
  std::vector<float> wx(x0.size());
  for (int x = 0; x < out_width; ++x) {
    double src = (x + 0.5) * sx - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(image.width - 1));
    const int lo = static_cast<int>(std::floor(src));
    x0[static_cast<std::size_t>(x)] = lo;
    x1[static_cast<std::size_t>(x)] = std::min(lo + 1, image.width - 1);
    wx[static_cast<std::size_t>(x)] = static_cast<float>(src - lo);
  }
  for (int y = 0; y < out_height; ++y) {
    double src = (y + 0.5) * sy - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(image.height - 1));
    const int y0 = static_cast<int>(std::floor(src));
    const int y1 = std::min(y0 + 1, image.height - 1);
    const float wy = static_cast<float>(src - y0);
    const std::uint8_t* r0 = image.pixels.data() + static_cast<std::size_t>(y0) * image.width;
    const std::uint8_t* r1 = image.pixels.data() + static_cast<std::size_t>(y1) * image.width;
    float* dst = out.data() + static_cast<std::size_t>(y) * out_width;
    for (int x = 0; x < out_width; ++x) {
      const auto i = static_cast<std::size_t>(x);
      const float top = r0[x0[i]] + wx[i] * (static_cast<float>(r0[x1[i]]) - r0[x0[i]]);
      const float bottom = r1[x0[i]] + wx[i] * (static_cast<float>(r1[x1[i]]) - r1[x0[i]]);
      dst[x] = top + wy * (bottom - top);
    }
  }
  return out;
}

std::vector<float> crop_and_resize(const GrayImage& image, const PreprocessSpec& spec) {
  require(!image.empty(), "cannot preprocess an empty image");
  require(spec.target_size > 0, "target size must be positive");
  std::vector<float> plane =
      spec.crop ? resize_bilinear(apply_crop(image, *spec.crop), spec.target_size, spec.target_size)
                : resize_bilinear(image, spec.target_size, spec.target_size);
  for (float& v : plane) v /= 255.0f;
  return plane;
}

void preprocess_into(const GrayImage& image, const PreprocessSpec& spec, std::span<float> out) {
  require(out.size() == spec.output_size(), "preprocess output buffer has the wrong size");
  for (double s : spec.normalization.std) require(s > 0.0, "normalization std must be positive");
  const std::vector<float> plane = crop_and_resize(image, spec);
  const std::size_t n = plane.size();
  for (std::size_t c = 0; c < 3; ++c) {
    const float mean = static_cast<float>(spec.normalization.mean[c]);
    const float inv_std = static_cast<float>(1.0 / spec.normalization.std[c]);
    float* dst = out.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) dst[i] = (plane[i] - mean) * inv_std;
  }
}

std::vector<float> preprocess(const GrayImage& image, const PreprocessSpec& spec) {
  std::vector<float> out(spec.output_size());
  preprocess_into(image, spec, out);
  return out;
}

}  // namespace cactus::data
