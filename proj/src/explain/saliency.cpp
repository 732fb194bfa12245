#include "explain/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "common/colormap.hpp"
#include "common/error.hpp"
#include "model/layers.hpp"

namespace cactus::explain {

using model::Activation;
using model::Features;

std::string_view to_string(Method method) {
  return method == Method::GradCam ? "gradcam" : "gradcam++";
}

Method method_from_string(std::string_view text) {
  if (text == "gradcam" || text == "grad-cam") return Method::GradCam;
  if (text == "gradcam++" || text == "gradcampp" || text == "grad-cam++")
    return Method::GradCamPlusPlus;
  fail(ErrorCode::InvalidArgument, "unknown saliency method '" + std::string(text) + "'");
}

namespace {

std::vector<float> upsample(const std::vector<float>& src, int sw, int sh, int dw, int dh) {
  std::vector<float> out(static_cast<std::size_t>(dw) * dh);
  const double sx = static_cast<double>(sw) / dw;
  const double sy = static_cast<double>(sh) / dh;
  for (int y = 0; y < dh; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(sh - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, sh - 1);
    const double wy = fy - y0;
    for (int x = 0; x < dw; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(sw - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, sw - 1);
      const double wx = fx - x0;
      auto at = [&](int yy, int xx) { return static_cast<double>(src[static_cast<std::size_t>(yy) * sw + xx]); };
      const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                       wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
      out[static_cast<std::size_t>(y) * dw + x] = static_cast<float>(v);
    }
  }
  return out;
}

}  // namespace

SaliencyMap compute_saliency(const model::ModelBundle& bundle, const Activation<float>& input,
                             Target target, Method method) {
  require(input.batch == 1, "saliency expects a single frame");
  const model::LinearHead<float>* head = nullptr;
  int row = 0;
  if (target.grade) {
    if (!bundle.grader) fail(ErrorCode::State, "bundle has no grading head");
    head = &*bundle.grader;
  } else {
    if (!bundle.classifier) fail(ErrorCode::State, "bundle has no classification head");
    if (target.class_index < 0 || target.class_index >= bundle.classifier->out_dim)
      fail(ErrorCode::InvalidArgument,
           "target class " + std::to_string(target.class_index) + " is out of range");
    head = &*bundle.classifier;
    row = target.class_index;
  }

  Activation<float> map;
  (void)model::forward_features(bundle, input, &map);

  // d(target)/d(features) is the head row; the pooling backward spreads it
  // over the final map.
  Features<float> dfeatures;
  dfeatures.dim = head->in_dim;
  dfeatures.batch = 1;
  dfeatures.data.assign(head->weight.begin() + static_cast<std::ptrdiff_t>(row) * head->in_dim,
                        head->weight.begin() + static_cast<std::ptrdiff_t>(row + 1) * head->in_dim);
  Activation<float> grad;
  model::global_average_pool_backward(dfeatures, map.height, map.width, grad);

  const int channels = map.channels;
  const std::size_t hw = map.spatial();
  std::vector<double> weights(static_cast<std::size_t>(channels), 0.0);
  for (int c = 0; c < channels; ++c) {
    const float* a = map.at(c, 0);
    const float* g = grad.at(c, 0);
    if (method == Method::GradCam) {
      double sum = 0.0;
      for (std::size_t i = 0; i < hw; ++i) sum += g[i];
      weights[static_cast<std::size_t>(c)] = sum / static_cast<double>(hw);
    } else {
      double activation_sum = 0.0;
      for (std::size_t i = 0; i < hw; ++i) activation_sum += a[i];
      double w = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        const double g1 = g[i];
        if (g1 == 0.0) continue;
        const double g2 = g1 * g1;
        const double alpha = g2 / (2.0 * g2 + activation_sum * g2 * g1 + 1e-7);
        w += alpha * std::max(g1, 0.0);
      }
      weights[static_cast<std::size_t>(c)] = w;
    }
  }

  SaliencyMap out;
  out.target = target;
  out.method = method;
  out.coarse_width = map.width;
  out.coarse_height = map.height;
  out.coarse.assign(hw, 0.0f);
  for (std::size_t i = 0; i < hw; ++i) {
    double v = 0.0;
    for (int c = 0; c < channels; ++c) v += weights[static_cast<std::size_t>(c)] * map.at(c, 0)[i];
    out.coarse[i] = static_cast<float>(std::max(v, 0.0));
  }
  out.width = input.width;
  out.height = input.height;
  out.values = upsample(out.coarse, map.width, map.height, out.width, out.height);
  const float top = *std::max_element(out.values.begin(), out.values.end());
  if (top > 0.0f)
    for (float& v : out.values) v = std::clamp(v / top, 0.0f, 1.0f);
  else
    std::fill(out.values.begin(), out.values.end(), 0.0f);
  return out;
}

data::RgbImage overlay(const data::GrayImage& frame, const SaliencyMap& map, double alpha) {
  require(alpha >= 0.0 && alpha <= 1.0, "overlay alpha must lie in [0, 1]");
  require(!frame.empty() && !map.values.empty(), "overlay needs a frame and a map");
  // The map is resampled to the frame so any source resolution works.
  const std::vector<float> m = (map.width == frame.width && map.height == frame.height)
                                   ? map.values
                                   : upsample(map.values, map.width, map.height, frame.width, frame.height);
  data::RgbImage out(frame.width, frame.height);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double a = alpha * m[i];
    const auto rgb = jet(m[i]);
    for (int c = 0; c < 3; ++c)
      out.pixels[i * 3 + static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(
          std::lround((1.0 - a) * frame.pixels[i] + a * rgb[static_cast<std::size_t>(c)]));
  }
  return out;
}

void write_float_grid(const std::filesystem::path& path, int width, int height,
                      const std::vector<float>& values) {
  require(values.size() == static_cast<std::size_t>(width) * height, "grid size mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  const std::uint32_t dims[2] = {static_cast<std::uint32_t>(width), static_cast<std::uint32_t>(height)};
  out.write("CAMF", 4);
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
}

std::vector<float> read_float_grid(const std::filesystem::path& path, int& width, int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  char magic[4];
  std::uint32_t dims[2];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || std::memcmp(magic, "CAMF", 4) != 0) fail(ErrorCode::Format, "not a float grid file");
  width = static_cast<int>(dims[0]);
  height = static_cast<int>(dims[1]);
  std::vector<float> values(static_cast<std::size_t>(dims[0]) * dims[1]);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!in) fail(ErrorCode::Format, "float grid file is truncated");
  return values;
}

}  // namespace cactus::explain
