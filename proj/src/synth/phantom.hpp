#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "data/image.hpp"
#include "data/manifest.hpp"
#include "data/view.hpp"

namespace cactus::synth {

using data::ViewClass;

/// Knobs for one synthetic phantom frame. Degradations are applied on top of
/// a fixed per-view geometric template.
struct SynthConfig {
  ViewClass view = ViewClass::A4C;
  double completeness = 1.0;        // [0,1]; 1 keeps the whole template
  double clarity = 1.0;             // [0,1]; 1 removes all speckle
  double speckle_sigma = 0.0;       // >= 0, multiplicative noise at clarity 0
  double speckle_grain = 1.0 / 56;  // grain size as a fraction of the frame width
  double gain_shift = 0.0;          // additive brightness offset in [0,1] units
  double occlusion_fraction = 0.0;  // [0,1]; sector share removed at completeness 0
  std::uint64_t seed = 0;
  int size = 448;

  /// Throws cactus::Error on out-of-range fields.
  void validate() const;
};

/// Relative weight of completeness in the grade; clarity gets 1 - weight.
inline constexpr double kCompletenessWeight = 0.5;

/// Noise-free template for `view`. RANDOM has no template, so its clean image
/// is the seeded noise field itself.
data::GrayImage clean_template(ViewClass view, int size, std::uint64_t seed = 0);

data::ImageSample render_view(const SynthConfig& config);

/// 0 for RANDOM, otherwise clamp(10 * (w c + (1 - w) k), 1, 10).
data::GradeValue grade_of(const SynthConfig& config,
                          double completeness_weight = kCompletenessWeight);

struct EmissionRecord {
  std::string id;
  SynthConfig config;
  double grade = 0.0;
};

struct SyntheticDataset {
  data::DatasetManifest manifest;  // samples carry in-memory pixels, no split yet
  std::vector<EmissionRecord> emission_log;
};

struct GenerateOptions {
  int n_per_class = 3;
  /// Width of the quality interval: completeness and clarity are drawn from
  /// U(1 - grade_spread, 1). 1.0 spans the whole grading scale.
  double grade_spread = 1.0;
  std::uint64_t seed = 0;
  int size = 448;
  double speckle_sigma = 0.8;
  double speckle_grain = 1.0 / 56;
  double occlusion_fraction = 0.6;
  double max_gain_shift = 0.08;
  std::vector<ViewClass> views{data::kAllViews.begin(), data::kAllViews.end()};
};

SyntheticDataset generate_dataset(const GenerateOptions& options);

/// Writes <dir>/<VIEW>/<id>.png, manifest.jsonl, grades.csv and
/// emission_log.csv. The returned manifest references the files on disk.
data::DatasetManifest write_dataset(const SyntheticDataset& dataset,
                                    const std::filesystem::path& dir);

void write_emission_log(const std::filesystem::path& path,
                        const std::vector<EmissionRecord>& log);

}  // namespace cactus::synth
