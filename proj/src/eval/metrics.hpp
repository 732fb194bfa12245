#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "data/view.hpp"
#include "json.hpp"

namespace cactus::eval {

/// K x K counts, rows = true class, columns = predicted class.
struct ConfusionMatrix {
  int k = 0;
  std::vector<std::uint64_t> counts;

  std::uint64_t at(int truth, int predicted) const {
    return counts[static_cast<std::size_t>(truth) * k + predicted];
  }
  std::uint64_t total() const;
  std::uint64_t row_sum(int truth) const;
  std::uint64_t column_sum(int predicted) const;
};

ConfusionMatrix confusion_matrix(std::span<const int> truths, std::span<const int> predictions,
                                 int k);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
  bool undefined = false;  // some denominator was 0 and the value was set to 0
};

struct ClassificationReport {
  std::vector<std::string> labels;
  ConfusionMatrix confusion;
  std::vector<ClassMetrics> per_class;
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  bool zero_division = false;
};

/// Metrics derived from the confusion matrix; macro averages are unweighted
/// means over all K classes. `labels` defaults to the class indices.
ClassificationReport classification_report(std::span<const int> truths,
                                           std::span<const int> predictions, int k,
                                           std::vector<std::string> labels = {});

struct GradingReport {
  std::size_t count = 0;
  double mse = 0.0;
  double mae = 0.0;
  std::array<double, data::kNumGradeBands> band_mse{};        // by true grade band
  std::array<std::size_t, data::kNumGradeBands> band_count{};
};

/// Errors of raw (unclamped) outputs against true grades. Sums run over the
/// sorted terms, so the result does not depend on sample order.
GradingReport grading_report(std::span<const double> truth, std::span<const double> raw);

nlohmann::json to_json(const ClassificationReport& report);
nlohmann::json to_json(const GradingReport& report);
std::string to_text(const ClassificationReport& report);
std::string to_text(const GradingReport& report);
std::string confusion_csv(const ClassificationReport& report);

}  // namespace cactus::eval
