#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "data/image.hpp"
#include "model/bundle.hpp"

namespace cactus::explain {

enum class Method { GradCam, GradCamPlusPlus };

std::string_view to_string(Method method);
Method method_from_string(std::string_view text);

/// Either a class index into the bundle's class list or the raw grade output.
struct Target {
  bool grade = false;
  int class_index = 0;

  static Target grade_output() { return {true, 0}; }
  static Target class_logit(int index) { return {false, index}; }
};

struct SaliencyMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;  // row-major, in [0, 1]
  Target target;
  Method method = Method::GradCamPlusPlus;

  /// Unnormalized rectified map at the final convolutional resolution.
  int coarse_width = 0;
  int coarse_height = 0;
  std::vector<float> coarse;

  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Per-channel weights from the gradient of the target scalar with respect to
/// the final convolutional map, weighted sum, rectification, bilinear upsampling
/// to the input resolution and division by the maximum. `input` must hold one
/// preprocessed frame.
SaliencyMap compute_saliency(const model::ModelBundle& bundle,
                             const model::Activation<float>& input, Target target,
                             Method method = Method::GradCamPlusPlus);

/// Blends the jet-coloured map over the frame: each pixel moves towards its
/// colour by alpha * map value, so a zero map leaves the frame unchanged.
data::RgbImage overlay(const data::GrayImage& frame, const SaliencyMap& map, double alpha = 0.5);

/// Raw grid: "CAMF", uint32 width, uint32 height, then float32 values, all
/// little-endian.
void write_float_grid(const std::filesystem::path& path, int width, int height,
                      const std::vector<float>& values);
std::vector<float> read_float_grid(const std::filesystem::path& path, int& width, int& height);

}  // namespace cactus::explain
