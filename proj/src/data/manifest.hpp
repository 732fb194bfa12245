#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "data/image.hpp"
#include "data/preprocess.hpp"
#include "data/view.hpp"

namespace cactus::data {

enum class Split { Train = 0, Val = 1, Test = 2 };

std::string_view to_string(Split split);
Split split_from_string(std::string_view text);

/// Scanner settings recorded with a frame. Every field is optional except the
/// frame rate, which defaults to 30 fps.
struct AcquisitionMetadata {
  std::optional<double> depth_cm;
  std::optional<double> gain_db;
  std::optional<double> dynamic_range_db;
  std::optional<double> power_w;
  std::optional<double> probe_frequency_mhz;
  std::optional<double> machine_frequency_hz;
  double fps = 30.0;

  /// Throws for non-positive physical quantities; returns human-readable
  /// warnings for values outside the usual acquisition ranges.
  std::vector<std::string> validate() const;

  bool operator==(const AcquisitionMetadata&) const = default;
};

struct ImageSample {
  std::string id;
  std::shared_ptr<const GrayImage> image;  // null until loaded from source_path
  ViewClass view = ViewClass::RANDOM;
  GradeValue grade;
  std::optional<AcquisitionMetadata> metadata;
  std::string source_path;  // relative to the manifest's base directory
};

struct DatasetManifest {
  std::vector<ImageSample> samples;
  std::map<std::string, Split> split_assignment;
  Normalization normalization;
  std::uint64_t seed = 0;
  std::filesystem::path base_dir;

  std::array<int, kNumViews> class_counts() const;
  bool is_split() const { return !samples.empty() && split_assignment.size() == samples.size(); }
  std::optional<Split> split_of(const std::string& id) const;
  /// Indices of the samples assigned to `split`, in manifest order.
  std::vector<std::size_t> indices(Split split) const;
};

/// Returns the in-memory frame or decodes it from disk.
std::shared_ptr<const GrayImage> load_image(const DatasetManifest& manifest,
                                            const ImageSample& sample);

// --- JSONL persistence -------------------------------------------------------

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

// --- ingestion ---------------------------------------------------------------

enum class IngestLayout { ClassFolders, ManifestFile };

IngestLayout ingest_layout_from_string(std::string_view text);

/// Class-folder layout: root/<VIEW>/*.png plus a grades sidecar
/// (root/grades.csv with header `id,view,grade`, or root/grades.jsonl).
/// Manifest-file layout: root/manifest.jsonl. Metadata warnings are appended
/// to `warnings` when given.
DatasetManifest ingest_directory(const std::filesystem::path& root, IngestLayout layout,
                                 std::vector<std::string>* warnings = nullptr);

// --- splitting and statistics -----------------------------------------------

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

/// floor(0.7 n) / floor(0.1 n) / remainder.
SplitSizes split_sizes(std::size_t n);

/// Per-class 70/10/20 split, deterministic for a given seed. Classes that
/// are absent are skipped; a class with 1 or 2 samples is an error. When
/// `stats_spec` is given, normalization is recomputed from the TRAIN images
/// preprocessed with that spec's crop and size.
DatasetManifest stratified_split(DatasetManifest manifest, std::uint64_t seed,
                                 const std::optional<PreprocessSpec>& stats_spec = std::nullopt);

/// Mean/std of [0,1] intensities over the TRAIN split after crop and resize.
Normalization compute_normalization(const DatasetManifest& manifest, const PreprocessSpec& spec);

struct DatasetStatistics {
  std::size_t total = 0;
  std::array<int, kNumViews> class_counts{};
  std::array<std::array<int, kNumGradeBands>, kNumViews> grade_histogram{};
  std::array<std::array<int, 3>, kNumViews> split_counts{};  // only when split
};

DatasetStatistics dataset_statistics(const DatasetManifest& manifest);

/// Samples (and their split assignments) whose view is in `views`.
DatasetManifest select_views(const DatasetManifest& manifest, const std::vector<ViewClass>& views);

}  // namespace cactus::data
