#include "model/accounting.hpp"

#include "common/error.hpp"

namespace cactus::model {

namespace {

std::uint64_t conv_params(int in, int out, int k) {
  return static_cast<std::uint64_t>(in) * out * k * k;
}

std::uint64_t encoder_params(const EncoderSpec& spec) {
  std::uint64_t total = conv_params(spec.in_channels, spec.base_width, 7) + 2ULL * spec.base_width;
  int in = spec.base_width;
  for (std::size_t s = 0; s < spec.stage_blocks.size(); ++s) {
    const int width = spec.base_width << s;
    for (int b = 0; b < spec.stage_blocks[s]; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      total += conv_params(in, width, 3) + conv_params(width, width, 3) + 4ULL * width;
      if (stride != 1 || in != width) total += conv_params(in, width, 1) + 2ULL * width;
      in = width;
    }
  }
  return total;
}

std::uint64_t head_params(int in, int out) { return static_cast<std::uint64_t>(in) * out + out; }

class CostBuilder {
 public:
  explicit CostBuilder(FlopReport& report) : report_(report) {}

  void conv(const std::string& name, int in, int out, int k, int stride, int pad, int& h, int& w) {
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (w + 2 * pad - k) / stride + 1;
    const std::uint64_t macs = static_cast<std::uint64_t>(out) * oh * ow * in * k * k;
    report_.layers.push_back({name, "conv", {out, oh, ow}, macs, 0});
    report_.conv_macs += macs;
    h = oh;
    w = ow;
  }
  void batchnorm(const std::string& name, int c, int h, int w) {
    const std::uint64_t ops = 2ULL * c * h * w;  // scale and shift after folding
    report_.layers.push_back({name, "batchnorm", {c, h, w}, 0, ops});
    report_.batchnorm_ops += ops;
  }
  void elementwise(const std::string& name, const char* kind, int c, int h, int w,
                   std::uint64_t per_element) {
    const std::uint64_t ops = per_element * c * h * w;
    report_.layers.push_back({name, kind, {c, h, w}, 0, ops});
    report_.activation_ops += ops;
  }
  void linear(const std::string& name, int in, int out) {
    const std::uint64_t macs = static_cast<std::uint64_t>(in) * out;
    report_.layers.push_back({name, "linear", {out}, macs, static_cast<std::uint64_t>(out)});
    report_.linear_macs += macs;
    report_.bias_adds += static_cast<std::uint64_t>(out);
  }

 private:
  FlopReport& report_;
};

}  // namespace

std::uint64_t count_trainable_params(const EncoderSpec& spec, int num_classes, Components include,
                                     Components frozen) {
  require(num_classes >= 0, "class count must be non-negative");
  const int dim = spec.feature_dim();
  std::uint64_t total = 0;
  if (include.encoder && !frozen.encoder) total += encoder_params(spec);
  if (include.classifier && !frozen.classifier) {
    require(num_classes > 0, "classification head needs at least one class");
    total += head_params(dim, num_classes);
  }
  if (include.grader && !frozen.grader) total += head_params(dim, 1);
  return total;
}

std::uint64_t count_trainable_params(const ModelBundle& bundle, Components include,
                                     Components frozen) {
  std::uint64_t total = 0;
  if (include.encoder && !frozen.encoder) total += bundle.encoder.trainable_count();
  if (include.classifier && !frozen.classifier) {
    if (!bundle.classifier) fail(ErrorCode::State, "bundle has no classification head");
    total += bundle.classifier->param_count();
  }
  if (include.grader && !frozen.grader) {
    if (!bundle.grader) fail(ErrorCode::State, "bundle has no grading head");
    total += bundle.grader->param_count();
  }
  return total;
}

FlopReport estimate_flops(const EncoderSpec& spec, int input_size, int num_classes, bool grader) {
  require(input_size >= 8, "input size must be at least 8");
  FlopReport report;
  CostBuilder b(report);
  int h = input_size, w = input_size;
  b.conv("conv1", spec.in_channels, spec.base_width, 7, 2, 3, h, w);
  b.batchnorm("bn1", spec.base_width, h, w);
  b.elementwise("relu", "relu", spec.base_width, h, w, 1);
  h = (h + 2 - 3) / 2 + 1;
  w = (w + 2 - 3) / 2 + 1;
  b.elementwise("maxpool", "maxpool", spec.base_width, h, w, 8);  // 9-way max = 8 comparisons
  int in = spec.base_width;
  for (std::size_t s = 0; s < spec.stage_blocks.size(); ++s) {
    const int width = spec.base_width << s;
    for (int blk = 0; blk < spec.stage_blocks[s]; ++blk) {
      const int stride = (s > 0 && blk == 0) ? 2 : 1;
      const std::string p = "layer" + std::to_string(s + 1) + "." + std::to_string(blk) + ".";
      const int in_h = h, in_w = w;
      b.conv(p + "conv1", in, width, 3, stride, 1, h, w);
      b.batchnorm(p + "bn1", width, h, w);
      b.elementwise(p + "relu1", "relu", width, h, w, 1);
      b.conv(p + "conv2", width, width, 3, 1, 1, h, w);
      b.batchnorm(p + "bn2", width, h, w);
      if (stride != 1 || in != width) {
        int dh = in_h, dw = in_w;
        b.conv(p + "downsample.0", in, width, 1, stride, 0, dh, dw);
        b.batchnorm(p + "downsample.1", width, dh, dw);
      }
      b.elementwise(p + "add", "add", width, h, w, 1);
      b.elementwise(p + "relu2", "relu", width, h, w, 1);
      in = width;
    }
  }
  b.elementwise("avgpool", "avgpool", in, h, w, 1);
  if (num_classes > 0) b.linear("classifier", in, num_classes);
  if (grader) b.linear("grader", in, 1);
  return report;
}

FlopComparison compare_shared_vs_separate(const EncoderSpec& spec, int input_size,
                                          int num_classes) {
  FlopComparison c;
  c.shared = estimate_flops(spec, input_size, num_classes, true);
  c.classifier_only = estimate_flops(spec, input_size, num_classes, false);
  c.grader_only = estimate_flops(spec, input_size, 0, true);
  c.separate_over_shared =
      static_cast<double>(c.classifier_only.macs() + c.grader_only.macs()) /
      static_cast<double>(c.shared.macs());
  return c;
}

nlohmann::json to_json(const FlopReport& report, bool per_layer) {
  nlohmann::json out{{"conv_macs", report.conv_macs},
                     {"linear_macs", report.linear_macs},
                     {"macs", report.macs()},
                     {"flops_mac1", report.flops(MacConvention::One)},
                     {"flops_mac2", report.flops(MacConvention::Two)},
                     {"bias_adds", report.bias_adds},
                     {"batchnorm_ops", report.batchnorm_ops},
                     {"activation_ops", report.activation_ops}};
  if (per_layer) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : report.layers)
      layers.push_back({{"name", l.name},
                        {"kind", l.kind},
                        {"output_shape", l.output_shape},
                        {"macs", l.macs},
                        {"other_ops", l.other_ops}});
    out["layers"] = layers;
  }
  return out;
}

}  // namespace cactus::model
