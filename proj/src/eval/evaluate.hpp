#pragma once

#include <optional>
#include <string>
#include <vector>

#include "data/manifest.hpp"
#include "eval/metrics.hpp"
#include "json.hpp"
#include "model/accounting.hpp"
#include "model/bundle.hpp"

namespace cactus::eval {

struct BundleEvaluation {
  data::Split split = data::Split::Test;
  std::optional<ClassificationReport> classification;
  std::optional<GradingReport> grading;
  std::size_t skipped = 0;  // samples whose view is outside the class list
};

/// Runs the bundle over one split. Classification covers samples whose view
/// is in the bundle's class list; grading covers every sample.
BundleEvaluation evaluate_bundle(const model::ModelBundle& bundle,
                                 const data::DatasetManifest& manifest, data::Split split,
                                 int batch_size = 64);

nlohmann::json to_json(const BundleEvaluation& evaluation);
std::string to_text(const BundleEvaluation& evaluation);

/// Confusion matrix rendered as a heatmap, `cell` pixels per entry, rows
/// normalized by their truth count.
data::RgbImage render_confusion(const ConfusionMatrix& matrix, int cell = 48);

struct LatencyStats {
  std::string name;
  int iterations = 0;
  double mean_ms = 0.0;
  double std_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
};

/// Batch-1 eval-mode wall-clock latency of `fn` after `warmup` excluded calls.
template <typename Fn>
LatencyStats measure_latency(std::string name, int iterations, int warmup, Fn&& fn);

LatencyStats summarize_latency(std::string name, std::vector<double> samples_ms);

struct BenchmarkOptions {
  model::EncoderSpec encoder;
  int num_classes = 6;
  int input_size = 224;
  int iterations = 1000;
  int warmup = 100;
  std::uint64_t seed = 0;
};

struct ComputeReport {
  std::vector<std::pair<std::string, std::uint64_t>> parameters;
  std::vector<LatencyStats> latency;  // shared, classification, grading, mtl
  model::FlopComparison flops;
  double separate_latency_sum_ms = 0.0;
};

/// Times the shared two-head model, each single-head model and the MTL model
/// and checks the parameter column against the closed forms.
ComputeReport benchmark_compute(const BenchmarkOptions& options);

nlohmann::json to_json(const ComputeReport& report);
std::string to_text(const ComputeReport& report);

}  // namespace cactus::eval

#include <chrono>

template <typename Fn>
cactus::eval::LatencyStats cactus::eval::measure_latency(std::string name, int iterations,
                                                         int warmup, Fn&& fn) {
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(iterations));
  for (int i = 0; i < iterations; ++i) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    samples.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
  }
  return summarize_latency(std::move(name), std::move(samples));
}
