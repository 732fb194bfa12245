#include "eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "common/error.hpp"

namespace cactus::eval {

using nlohmann::json;

namespace {

double sorted_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double sum = 0.0;
  for (double t : terms) sum += t;
  return sum;
}

}  // namespace

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(int truth) const {
  std::uint64_t t = 0;
  for (int p = 0; p < k; ++p) t += at(truth, p);
  return t;
}

std::uint64_t ConfusionMatrix::column_sum(int predicted) const {
  std::uint64_t t = 0;
  for (int r = 0; r < k; ++r) t += at(r, predicted);
  return t;
}

ConfusionMatrix confusion_matrix(std::span<const int> truths, std::span<const int> predictions,
                                 int k) {
  require(k > 0, "class count must be positive");
  require(truths.size() == predictions.size(), "truth and prediction counts differ");
  ConfusionMatrix m;
  m.k = k;
  m.counts.assign(static_cast<std::size_t>(k) * k, 0);
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const int t = truths[i];
    const int p = predictions[i];
    if (t < 0 || t >= k || p < 0 || p >= k)
      fail(ErrorCode::InvalidArgument, "label out of range at position " + std::to_string(i));
    ++m.counts[static_cast<std::size_t>(t) * k + p];
  }
  return m;
}

ClassificationReport classification_report(std::span<const int> truths,
                                           std::span<const int> predictions, int k,
                                           std::vector<std::string> labels) {
  ClassificationReport r;
  r.confusion = confusion_matrix(truths, predictions, k);
  if (labels.empty())
    for (int i = 0; i < k; ++i) labels.push_back(std::to_string(i));
  require(static_cast<int>(labels.size()) == k, "label count must equal the class count");
  r.labels = std::move(labels);
  const auto total = r.confusion.total();
  std::uint64_t trace = 0;
  for (int c = 0; c < k; ++c) {
    ClassMetrics m;
    const auto tp = r.confusion.at(c, c);
    trace += tp;
    const auto predicted = r.confusion.column_sum(c);
    m.support = r.confusion.row_sum(c);
    if (predicted > 0) m.precision = static_cast<double>(tp) / static_cast<double>(predicted);
    else m.undefined = true;
    if (m.support > 0) m.recall = static_cast<double>(tp) / static_cast<double>(m.support);
    else m.undefined = true;
    if (m.precision + m.recall > 0.0) m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    else m.undefined = true;
    r.zero_division = r.zero_division || m.undefined;
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
    r.per_class.push_back(m);
  }
  r.macro_precision /= k;
  r.macro_recall /= k;
  r.macro_f1 /= k;
  r.accuracy = total > 0 ? static_cast<double>(trace) / static_cast<double>(total) : 0.0;
  return r;
}

GradingReport grading_report(std::span<const double> truth, std::span<const double> raw) {
  require(truth.size() == raw.size(), "truth and output counts differ");
  require(!truth.empty(), "grading report of an empty set");
  GradingReport r;
  r.count = truth.size();
  std::vector<double> squared, absolute;
  std::array<std::vector<double>, data::kNumGradeBands> by_band;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = raw[i] - truth[i];
    squared.push_back(e * e);
    absolute.push_back(std::abs(e));
    by_band[static_cast<std::size_t>(data::grade_band(truth[i]).index)].push_back(e * e);
  }
  const double n = static_cast<double>(r.count);
  r.mse = sorted_sum(std::move(squared)) / n;
  r.mae = sorted_sum(std::move(absolute)) / n;
  for (std::size_t b = 0; b < by_band.size(); ++b) {
    r.band_count[b] = by_band[b].size();
    if (!by_band[b].empty())
      r.band_mse[b] = sorted_sum(std::move(by_band[b])) / static_cast<double>(r.band_count[b]);
  }
  return r;
}

json to_json(const ClassificationReport& report) {
  json classes = json::array();
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& m = report.per_class[c];
    classes.push_back({{"label", report.labels[c]},
                       {"precision", m.precision},
                       {"recall", m.recall},
                       {"f1", m.f1},
                       {"support", m.support},
                       {"zero_division", m.undefined}});
  }
  json matrix = json::array();
  for (int t = 0; t < report.confusion.k; ++t) {
    json row = json::array();
    for (int p = 0; p < report.confusion.k; ++p) row.push_back(report.confusion.at(t, p));
    matrix.push_back(row);
  }
  return {{"accuracy", report.accuracy},
          {"averaging", "macro"},
          {"macro_precision", report.macro_precision},
          {"macro_recall", report.macro_recall},
          {"macro_f1", report.macro_f1},
          {"zero_division", report.zero_division},
          {"classes", classes},
          {"confusion_matrix", matrix},
          {"samples", report.confusion.total()}};
}

json to_json(const GradingReport& report) {
  json bands = json::array();
  for (int b = 0; b < data::kNumGradeBands; ++b) {
    const auto& band = data::grade_bands()[static_cast<std::size_t>(b)];
    bands.push_back({{"band", b},
                     {"lower", band.lower},
                     {"upper", band.upper},
                     {"count", report.band_count[static_cast<std::size_t>(b)]},
                     {"mse", report.band_mse[static_cast<std::size_t>(b)]}});
  }
  return {{"count", report.count}, {"mse", report.mse}, {"mae", report.mae}, {"bands", bands}};
}

std::string to_text(const ClassificationReport& report) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-10s %10s %10s %10s %8s\n", "class", "precision", "recall",
                "f1", "support");
  out << line;
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& m = report.per_class[c];
    std::snprintf(line, sizeof(line), "%-10s %10.4f %10.4f %10.4f %8llu%s\n",
                  report.labels[c].c_str(), m.precision, m.recall, m.f1,
                  static_cast<unsigned long long>(m.support), m.undefined ? " *" : "");
    out << line;
  }
  std::snprintf(line, sizeof(line), "%-10s %10.4f %10.4f %10.4f %8llu\n", "macro avg",
                report.macro_precision, report.macro_recall, report.macro_f1,
                static_cast<unsigned long long>(report.confusion.total()));
  out << line;
  std::snprintf(line, sizeof(line), "accuracy   %.4f\n", report.accuracy);
  out << line;
  if (report.zero_division) out << "* zero denominator, value reported as 0\n";
  return out.str();
}

std::string to_text(const GradingReport& report) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "samples %zu  mse %.6f  mae %.6f\n", report.count, report.mse,
                report.mae);
  out << line;
  for (int b = 0; b < data::kNumGradeBands; ++b) {
    const auto& band = data::grade_bands()[static_cast<std::size_t>(b)];
    const auto n = report.band_count[static_cast<std::size_t>(b)];
    if (n == 0) continue;
    std::snprintf(line, sizeof(line), "  band [%g,%g%c  n=%-6zu mse %.6f\n", band.lower, band.upper,
                  b + 1 == data::kNumGradeBands ? ']' : ')', n,
                  report.band_mse[static_cast<std::size_t>(b)]);
    out << line;
  }
  return out.str();
}

std::string confusion_csv(const ClassificationReport& report) {
  std::ostringstream out;
  out << "truth\\predicted";
  for (const auto& l : report.labels) out << ',' << l;
  out << '\n';
  for (int t = 0; t < report.confusion.k; ++t) {
    out << report.labels[static_cast<std::size_t>(t)];
    for (int p = 0; p < report.confusion.k; ++p) out << ',' << report.confusion.at(t, p);
    out << '\n';
  }
  return out.str();
}

}  // namespace cactus::eval
