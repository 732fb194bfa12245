#include "eval/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "common/colormap.hpp"
#include "common/error.hpp"
#include "train/batches.hpp"

namespace cactus::eval {

using nlohmann::json;

BundleEvaluation evaluate_bundle(const model::ModelBundle& bundle,
                                 const data::DatasetManifest& manifest, data::Split split,
                                 int batch_size) {
  require(batch_size > 0, "batch size must be positive");
  if (!manifest.is_split()) fail(ErrorCode::State, "manifest has no split assignment");
  if (!bundle.classifier && !bundle.grader) fail(ErrorCode::State, "bundle has no heads");
  const auto indices = manifest.indices(split);
  if (indices.empty())
    fail(ErrorCode::InvalidArgument, std::string(data::to_string(split)) + " split is empty");
  const train::PreparedSplit prepared(manifest, indices, bundle.preprocess, 0);

  BundleEvaluation out;
  out.split = split;
  std::vector<int> truths, predictions;
  std::vector<double> grade_truth, grade_raw;
  const auto step = static_cast<std::size_t>(batch_size);
  for (std::size_t begin = 0; begin < prepared.size(); begin += step) {
    const std::size_t end = std::min(prepared.size(), begin + step);
    const auto pred = model::predict(bundle, prepared.range(begin, end));
    for (std::size_t r = begin; r < end; ++r) {
      const auto& sample = prepared.sample(r);
      const std::size_t col = r - begin;
      if (bundle.classifier) {
        const int truth = bundle.class_index(sample.view);
        if (truth < 0) {
          ++out.skipped;
        } else {
          truths.push_back(truth);
          predictions.push_back(pred.classes.predicted[col]);
        }
      }
      if (bundle.grader) {
        grade_truth.push_back(sample.grade.value());
        grade_raw.push_back(pred.grades.raw[col]);
      }
    }
  }
  if (bundle.classifier && !truths.empty()) {
    std::vector<std::string> labels;
    for (auto v : bundle.classes) labels.emplace_back(data::to_string(v));
    out.classification = classification_report(truths, predictions,
                                                static_cast<int>(bundle.classes.size()), labels);
  }
  if (bundle.grader) out.grading = grading_report(grade_truth, grade_raw);
  return out;
}

json to_json(const BundleEvaluation& evaluation) {
  json out{{"split", std::string(data::to_string(evaluation.split))},
           {"skipped", evaluation.skipped}};
  out["classification"] = evaluation.classification ? to_json(*evaluation.classification) : json();
  out["grading"] = evaluation.grading ? to_json(*evaluation.grading) : json();
  if (evaluation.classification) out["accuracy"] = evaluation.classification->accuracy;
  if (evaluation.grading) out["mse"] = evaluation.grading->mse;
  return out;
}

std::string to_text(const BundleEvaluation& evaluation) {
  std::ostringstream out;
  out << "split " << data::to_string(evaluation.split) << '\n';
  if (evaluation.classification) out << to_text(*evaluation.classification);
  if (evaluation.skipped) out << "skipped " << evaluation.skipped << " samples outside the class list\n";
  if (evaluation.grading) out << to_text(*evaluation.grading);
  return out.str();
}

data::RgbImage render_confusion(const ConfusionMatrix& matrix, int cell) {
  require(cell > 0 && matrix.k > 0, "invalid heatmap geometry");
  data::RgbImage image(matrix.k * cell, matrix.k * cell);
  for (int t = 0; t < matrix.k; ++t) {
    const auto row = matrix.row_sum(t);
    for (int p = 0; p < matrix.k; ++p) {
      const double v = row ? static_cast<double>(matrix.at(t, p)) / static_cast<double>(row) : 0.0;
      const auto rgb = jet(v);
      for (int y = t * cell; y < (t + 1) * cell; ++y)
        for (int x = p * cell; x < (p + 1) * cell; ++x) {
          const bool border = (x % cell == 0) || (y % cell == 0);
          auto* px = &image.pixels[(static_cast<std::size_t>(y) * image.width + x) * 3];
          for (int c = 0; c < 3; ++c) px[c] = border ? 255 : rgb[static_cast<std::size_t>(c)];
        }
    }
  }
  return image;
}

LatencyStats summarize_latency(std::string name, std::vector<double> samples) {
  require(!samples.empty(), "no latency samples");
  LatencyStats s;
  s.name = std::move(name);
  s.iterations = static_cast<int>(samples.size());
  const double n = static_cast<double>(samples.size());
  s.mean_ms = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double var = 0.0;
  for (double v : samples) var += (v - s.mean_ms) * (v - s.mean_ms);
  s.std_ms = samples.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  std::sort(samples.begin(), samples.end());
  auto quantile = [&](double q) {
    const double pos = q * (n - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(samples.size() - 1, lo + 1);
    return samples[lo] + (pos - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
  };
  s.p50_ms = quantile(0.5);
  s.p95_ms = quantile(0.95);
  return s;
}

ComputeReport benchmark_compute(const BenchmarkOptions& options) {
  require(options.iterations > 0 && options.warmup >= 0, "invalid iteration counts");
  require(options.num_classes > 0 && options.num_classes <= data::kNumViews,
          "class count must lie in 1..6");
  const std::vector<data::ViewClass> classes(data::kAllViews.begin(),
                                             data::kAllViews.begin() + options.num_classes);
  const auto& spec = options.encoder;
  const int k = options.num_classes;

  ComputeReport report;
  model::ModelBundle shared = model::make_bundle(spec, classes, true, options.seed);
  model::ModelBundle classifier_only = shared;
  classifier_only.grader.reset();
  model::ModelBundle grader_only = shared;
  grader_only.classifier.reset();
  grader_only.classes.clear();
  const model::ModelBundle mtl = model::make_bundle(spec, classes, true, options.seed + 1);

  using model::Components;
  const struct {
    const char* name;
    Components include, frozen;
    const model::ModelBundle* bundle;
  } rows[] = {
      {"classification", {true, true, false}, {}, &classifier_only},
      {"grading_without_tl", {true, false, true}, {}, &grader_only},
      {"grading_with_tl", {true, false, true}, {true, false, false}, &grader_only},
      {"mtl", {true, true, true}, {}, &mtl},
  };
  for (const auto& row : rows) {
    const auto closed = model::count_trainable_params(spec, k, row.include, row.frozen);
    const auto counted = model::count_trainable_params(*row.bundle, row.include, row.frozen);
    if (closed != counted)
      fail(ErrorCode::Internal, std::string("parameter count mismatch for ") + row.name);
    report.parameters.emplace_back(row.name, closed);
  }

  model::Activation<float> input;
  input.resize(3, 1, options.input_size, options.input_size);
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  for (float& v : input.data) v = gauss(rng);

  auto time = [&](const char* name, const model::ModelBundle& bundle) {
    return measure_latency(name, options.iterations, options.warmup,
                           [&] { (void)model::predict(bundle, input); });
  };
  report.latency.push_back(time("shared_two_head", shared));
  report.latency.push_back(time("classification_only", classifier_only));
  report.latency.push_back(time("grading_only", grader_only));
  report.latency.push_back(time("mtl", mtl));
  report.separate_latency_sum_ms = report.latency[1].mean_ms + report.latency[2].mean_ms;
  report.flops = model::compare_shared_vs_separate(spec, options.input_size, k);
  return report;
}

json to_json(const ComputeReport& report) {
  json params = json::object();
  for (const auto& [name, count] : report.parameters) params[name] = count;
  json latency = json::array();
  for (const auto& l : report.latency)
    latency.push_back({{"name", l.name},
                       {"iterations", l.iterations},
                       {"mean_ms", l.mean_ms},
                       {"std_ms", l.std_ms},
                       {"p50_ms", l.p50_ms},
                       {"p95_ms", l.p95_ms}});
  return {{"trainable_parameters", params},
          {"latency", latency},
          {"separate_latency_sum_ms", report.separate_latency_sum_ms},
          {"flops",
           {{"shared", model::to_json(report.flops.shared, false)},
            {"classification_only", model::to_json(report.flops.classifier_only, false)},
            {"grading_only", model::to_json(report.flops.grader_only, false)},
            {"separate_over_shared", report.flops.separate_over_shared}}}};
}

std::string to_text(const ComputeReport& report) {
  std::ostringstream out;
  char line[200];
  out << "trainable parameters\n";
  for (const auto& [name, count] : report.parameters) {
    std::snprintf(line, sizeof(line), "  %-22s %12llu\n", name.c_str(),
                  static_cast<unsigned long long>(count));
    out << line;
  }
  out << "latency per frame (batch 1)\n";
  for (const auto& l : report.latency) {
    std::snprintf(line, sizeof(line), "  %-22s mean %8.3f ms  std %7.3f  p50 %8.3f  p95 %8.3f  (n=%d)\n",
                  l.name.c_str(), l.mean_ms, l.std_ms, l.p50_ms, l.p95_ms, l.iterations);
    out << line;
  }
  std::snprintf(line, sizeof(line), "  two separate models   %8.3f ms\n", report.separate_latency_sum_ms);
  out << line;
  std::snprintf(line, sizeof(line),
                "MACs shared %.4g  separate %.4g  ratio %.4f  (GFLOPs at 2/MAC: %.3f shared)\n",
                static_cast<double>(report.flops.shared.macs()),
                static_cast<double>(report.flops.classifier_only.macs() + report.flops.grader_only.macs()),
                report.flops.separate_over_shared,
                static_cast<double>(report.flops.shared.flops(model::MacConvention::Two)) / 1e9);
  out << line;
  return out.str();
}

}  // namespace cactus::eval
