#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "model/bundle.hpp"
#include "model/encoder.hpp"

namespace cactus::model {

struct Components {
  bool encoder = false;
  bool classifier = false;
  bool grader = false;
};

/// Closed-form trainable parameter count. Components in `frozen` contribute 0;
/// batch-norm running statistics are buffers and never count.
std::uint64_t count_trainable_params(const EncoderSpec& spec, int num_classes, Components include,
                                     Components frozen = {});

/// Counts the trainable entries actually allocated in a bundle.
std::uint64_t count_trainable_params(const ModelBundle& bundle, Components include,
                                     Components frozen = {});

enum class MacConvention { One = 1, Two = 2 };

struct LayerCost {
  std::string name;
  std::string kind;  // conv, batchnorm, relu, maxpool, add, avgpool, linear
  std::vector<int> output_shape;
  std::uint64_t macs = 0;       // multiply-accumulates (conv, linear)
  std::uint64_t other_ops = 0;  // elementwise work, bias adds, comparisons
};

struct FlopReport {
  std::vector<LayerCost> layers;
  std::uint64_t conv_macs = 0;
  std::uint64_t linear_macs = 0;
  std::uint64_t bias_adds = 0;
  std::uint64_t batchnorm_ops = 0;
  std::uint64_t activation_ops = 0;  // ReLU, max pool, residual adds, average pool

  std::uint64_t macs() const { return conv_macs + linear_macs; }
  /// MACs counted as one or two floating-point operations.
  std::uint64_t flops(MacConvention convention) const {
    return macs() * static_cast<std::uint64_t>(convention);
  }
};

/// Analytic per-layer cost for one input_size x input_size frame through the
/// encoder plus the listed heads.
FlopReport estimate_flops(const EncoderSpec& spec, int input_size, int num_classes, bool grader);

struct FlopComparison {
  FlopReport shared;             // encoder + both heads
  FlopReport classifier_only;    // encoder + classification head
  FlopReport grader_only;        // encoder + grading head
  double separate_over_shared = 0.0;
};

FlopComparison compare_shared_vs_separate(const EncoderSpec& spec, int input_size, int num_classes);

nlohmann::json to_json(const FlopReport& report, bool per_layer);

}  // namespace cactus::model
