#include "data/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "common/error.hpp"
#include "json.hpp"

namespace cactus::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 3> kSplitNames{"TRAIN", "VAL", "TEST"};

struct MetadataRange {
  const char* name;
  std::optional<double> AcquisitionMetadata::*field;
  double lo;
  double hi;
  bool must_be_positive;
};

constexpr std::array<MetadataRange, 6> kMetadataRanges{{
    {"depth_cm", &AcquisitionMetadata::depth_cm, 13.0, 17.0, true},
    {"gain_db", &AcquisitionMetadata::gain_db, -30.0, 30.0, false},
    {"dynamic_range_db", &AcquisitionMetadata::dynamic_range_db, 1.0, 10.0, true},
    {"power_w", &AcquisitionMetadata::power_w, 2.0, 20.0, true},
    {"probe_frequency_mhz", &AcquisitionMetadata::probe_frequency_mhz, 1.5, 3.6, true},
    {"machine_frequency_hz", &AcquisitionMetadata::machine_frequency_hz, 71.5, 71.5, true},
}};

json metadata_to_json(const AcquisitionMetadata& meta) {
  json out = json::object();
  for (const auto& range : kMetadataRanges)
    if (const auto& value = meta.*(range.field)) out[range.name] = *value;
  out["fps"] = meta.fps;
  return out;
}

AcquisitionMetadata metadata_from_json(const json& in) {
  AcquisitionMetadata meta;
  for (const auto& range : kMetadataRanges)
    if (in.contains(range.name) && !in.at(range.name).is_null())
      meta.*(range.field) = in.at(range.name).get<double>();
  if (in.contains("fps") && !in.at("fps").is_null()) meta.fps = in.at("fps").get<double>();
  return meta;
}

std::string lower(std::string text) {
  std::transform(text.begin(), text.end(), text.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return text;
}

std::string trim(std::string_view text) {
  const auto begin = text.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  const auto end = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(begin, end - begin + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(field));
      field.clear();
    } else {
      field += c;
    }
  }
  fields.push_back(trim(field));
  return fields;
}

double parse_number(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double value = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return value;
  } catch (const std::exception&) {
    fail(ErrorCode::Format, "cannot parse " + what + " '" + text + "'");
  }
}

struct SidecarRow {
  ViewClass view;
  double grade;
  std::optional<AcquisitionMetadata> metadata;
};

std::map<std::string, SidecarRow> read_grades_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::Format, path.string() + " is empty");
  const auto header = split_csv_line(line);
  auto column = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (lower(header[i]) == name) return i;
    return std::nullopt;
  };
  const auto id_col = column("id");
  const auto view_col = column("view");
  const auto grade_col = column("grade");
  if (!id_col || !view_col || !grade_col)
    fail(ErrorCode::Format, path.string() + ": header must contain id,view,grade");
  std::vector<std::pair<const MetadataRange*, std::size_t>> meta_cols;
  for (const auto& range : kMetadataRanges)
    if (auto c = column(range.name)) meta_cols.emplace_back(&range, *c);
  const auto fps_col = column("fps");

  std::map<std::string, SidecarRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() < header.size())
      fail(ErrorCode::Format, path.string() + ":" + std::to_string(line_no) + ": too few columns");
    const std::string& id = fields[*id_col];
    SidecarRow row{view_from_string(fields[*view_col]),
                   parse_number(fields[*grade_col], "grade for " + id), std::nullopt};
    if (!meta_cols.empty() || fps_col) {
      AcquisitionMetadata meta;
      for (const auto& [range, col] : meta_cols)
        if (!fields[col].empty()) meta.*(range->field) = parse_number(fields[col], range->name);
      if (fps_col && !fields[*fps_col].empty()) meta.fps = parse_number(fields[*fps_col], "fps");
      row.metadata = meta;
    }
    if (!rows.emplace(id, row).second)
      fail(ErrorCode::Format, "duplicate id " + id + " in " + path.string());
  }
  return rows;
}

std::map<std::string, SidecarRow> read_grades_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::map<std::string, SidecarRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const json record = json::parse(line);
    const auto id = record.at("id").get<std::string>();
    SidecarRow row{view_from_string(record.at("view").get<std::string>()),
                   record.at("grade").get<double>(), std::nullopt};
    if (record.contains("metadata")) row.metadata = metadata_from_json(record.at("metadata"));
    if (!rows.emplace(id, row).second)
      fail(ErrorCode::Format, "duplicate id " + id + " in " + path.string());
  }
  return rows;
}

bool is_png(const fs::path& path) { return lower(path.extension().string()) == ".png"; }

void check_unique_ids(const DatasetManifest& manifest) {
  std::set<std::string> seen;
  for (const auto& s : manifest.samples)
    if (!seen.insert(s.id).second) fail(ErrorCode::Format, "duplicate sample id " + s.id);
}

}  // namespace

std::string_view to_string(Split split) { return kSplitNames[static_cast<std::size_t>(split)]; }

Split split_from_string(std::string_view text) {
  for (std::size_t i = 0; i < kSplitNames.size(); ++i)
    if (kSplitNames[i] == text) return static_cast<Split>(i);
  fail(ErrorCode::Format, "unknown split " + std::string(text));
}

std::vector<std::string> AcquisitionMetadata::validate() const {
  std::vector<std::string> warnings;
  for (const auto& range : kMetadataRanges) {
    const auto& value = this->*(range.field);
    if (!value) continue;
    if (range.must_be_positive && !(*value > 0.0))
      fail(ErrorCode::InvalidArgument,
           std::string(range.name) + " must be positive, got " + std::to_string(*value));
    if (*value < range.lo || *value > range.hi) {
      std::ostringstream msg;
      msg << range.name << "=" << *value << " outside the usual range [" << range.lo << ", "
          << range.hi << "]";
      warnings.push_back(msg.str());
    }
  }
  if (!(fps > 0.0)) fail(ErrorCode::InvalidArgument, "fps must be positive");
  if (fps != 30.0) warnings.push_back("fps=" + std::to_string(fps) + " differs from 30");
  return warnings;
}

std::array<int, kNumViews> DatasetManifest::class_counts() const {
  std::array<int, kNumViews> counts{};
  for (const auto& s : samples) ++counts[static_cast<std::size_t>(index_of(s.view))];
  return counts;
}

std::optional<Split> DatasetManifest::split_of(const std::string& id) const {
  const auto it = split_assignment.find(id);
  if (it == split_assignment.end()) return std::nullopt;
  return it->second;
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (split_of(samples[i].id) == split) out.push_back(i);
  return out;
}

std::shared_ptr<const GrayImage> load_image(const DatasetManifest& manifest,
                                            const ImageSample& sample) {
  if (sample.image) return sample.image;
  if (sample.source_path.empty())
    fail(ErrorCode::State, "sample " + sample.id + " has neither pixels nor a source path");
  const fs::path path = fs::path(sample.source_path).is_absolute()
                            ? fs::path(sample.source_path)
                            : manifest.base_dir / sample.source_path;
  return std::make_shared<const GrayImage>(read_png_gray(path));
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  json header = {{"type", "header"},
                 {"normalization",
                  {{"mean", manifest.normalization.mean}, {"std", manifest.normalization.std}}},
                 {"seed", manifest.seed}};
  out << header.dump() << '\n';
  for (const auto& s : manifest.samples) {
    json record = {{"id", s.id},
                   {"path", s.source_path},
                   {"view", to_string(s.view)},
                   {"grade", s.grade.value()},
                   {"split", nullptr}};
    if (const auto split = manifest.split_of(s.id)) record["split"] = to_string(*split);
    if (s.metadata) record["metadata"] = metadata_to_json(*s.metadata);
    out << record.dump() << '\n';
  }
  if (!out) fail(ErrorCode::Io, "failed writing " + path.string());
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  DatasetManifest manifest;
  manifest.base_dir = path.parent_path();
  std::string line;
  int line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorCode::Format, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (record.value("type", "") == "header") {
        const auto& norm = record.at("normalization");
        manifest.normalization.mean = norm.at("mean").get<std::array<double, 3>>();
        manifest.normalization.std = norm.at("std").get<std::array<double, 3>>();
        manifest.seed = record.value("seed", std::uint64_t{0});
        saw_header = true;
        continue;
      }
      ImageSample sample;
      sample.id = record.at("id").get<std::string>();
      sample.source_path = record.at("path").get<std::string>();
      sample.view = view_from_string(record.at("view").get<std::string>());
      const double grade = record.at("grade").get<double>();
      check_grade_for_view(sample.view, grade, sample.id);
      sample.grade = GradeValue(grade);
      if (record.contains("metadata") && !record.at("metadata").is_null())
        sample.metadata = metadata_from_json(record.at("metadata"));
      if (record.contains("split") && !record.at("split").is_null())
        manifest.split_assignment[sample.id] =
            split_from_string(record.at("split").get<std::string>());
      manifest.samples.push_back(std::move(sample));
    } catch (const json::exception& e) {
      fail(ErrorCode::Format, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!saw_header) fail(ErrorCode::Format, path.string() + ": missing header record");
  check_unique_ids(manifest);
  return manifest;
}

IngestLayout ingest_layout_from_string(std::string_view text) {
  if (text == "class-folders") return IngestLayout::ClassFolders;
  if (text == "manifest-file") return IngestLayout::ManifestFile;
  fail(ErrorCode::InvalidArgument, "unknown layout " + std::string(text));
}

DatasetManifest ingest_directory(const fs::path& root, IngestLayout layout,
                                 std::vector<std::string>* warnings) {
  if (!fs::is_directory(root)) fail(ErrorCode::Io, "dataset root " + root.string() + " not found");

  if (layout == IngestLayout::ManifestFile) {
    DatasetManifest manifest = read_manifest(root / "manifest.jsonl");
    for (const auto& s : manifest.samples)
      if (s.metadata && warnings)
        for (auto& w : s.metadata->validate()) warnings->push_back(s.id + ": " + w);
    return manifest;
  }

  std::map<std::string, SidecarRow> grades;
  if (fs::exists(root / "grades.csv")) {
    grades = read_grades_csv(root / "grades.csv");
  } else if (fs::exists(root / "grades.jsonl")) {
    grades = read_grades_jsonl(root / "grades.jsonl");
  } else {
    fail(ErrorCode::Io, "no grades.csv or grades.jsonl sidecar in " + root.string());
  }

  std::vector<fs::path> folders;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) folders.push_back(entry.path());
  std::sort(folders.begin(), folders.end());

  DatasetManifest manifest;
  manifest.base_dir = root;
  for (const auto& folder : folders) {
    const std::string name = folder.filename().string();
    const auto view = parse_view(name);
    if (!view) fail(ErrorCode::InvalidArgument, "unknown view class " + name);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(folder))
      if (entry.is_regular_file() && is_png(entry.path())) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      ImageSample sample;
      sample.id = file.stem().string();
      sample.view = *view;
      sample.source_path = fs::relative(file, root).generic_string();
      const auto it = grades.find(sample.id);
      if (it == grades.end()) fail(ErrorCode::Format, "no grade for sample " + sample.id);
      if (it->second.view != *view)
        fail(ErrorCode::Format, "sample " + sample.id + " is in folder " + name +
                                    " but the sidecar says " +
                                    std::string(to_string(it->second.view)));
      check_grade_for_view(sample.view, it->second.grade, sample.id);
      sample.grade = GradeValue(it->second.grade);
      sample.metadata = it->second.metadata;
      if (sample.metadata && warnings)
        for (auto& w : sample.metadata->validate()) warnings->push_back(sample.id + ": " + w);
      manifest.samples.push_back(std::move(sample));
    }
  }
  check_unique_ids(manifest);
  return manifest;
}

SplitSizes split_sizes(std::size_t n) {
  SplitSizes sizes;
  sizes.train = n * 7 / 10;
  sizes.val = n / 10;
  sizes.test = n - sizes.train - sizes.val;
  return sizes;
}

DatasetManifest stratified_split(DatasetManifest manifest, std::uint64_t seed,
                                 const std::optional<PreprocessSpec>& stats_spec) {
  require(!manifest.samples.empty(), "cannot split an empty manifest");
  std::mt19937_64 rng(seed);
  manifest.split_assignment.clear();
  for (ViewClass view : kAllViews) {
    std::vector<std::string> ids;
    for (const auto& s : manifest.samples)
      if (s.view == view) ids.push_back(s.id);
    if (ids.empty()) continue;
    if (ids.size() < 3)
      fail(ErrorCode::InvalidArgument, "class " + std::string(to_string(view)) + " has only " +
                                           std::to_string(ids.size()) +
                                           " samples; at least 3 are needed to split");
    std::sort(ids.begin(), ids.end());
    std::shuffle(ids.begin(), ids.end(), rng);
    const SplitSizes sizes = split_sizes(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Split split = i < sizes.train                ? Split::Train
                          : i < sizes.train + sizes.val ? Split::Val
                                                         : Split::Test;
      manifest.split_assignment[ids[i]] = split;
    }
  }
  manifest.seed = seed;
  if (stats_spec) manifest.normalization = compute_normalization(manifest, *stats_spec);
  return manifest;
}

Normalization compute_normalization(const DatasetManifest& manifest, const PreprocessSpec& spec) {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t count = 0;
  for (const auto& sample : manifest.samples) {
    if (manifest.split_of(sample.id) != Split::Train) continue;
    const auto image = load_image(manifest, sample);
    for (float v : crop_and_resize(*image, spec)) {
      sum += v;
      sum_sq += static_cast<double>(v) * v;
    }
    count += spec.output_size() / 3;
  }
  require(count > 0, "normalization needs at least one TRAIN sample");
  const double mean = sum / static_cast<double>(count);
  const double var = std::max(sum_sq / static_cast<double>(count) - mean * mean, 0.0);
  const double std = std::max(std::sqrt(var), 1e-6);
  Normalization norm;
  norm.mean = {mean, mean, mean};
  norm.std = {std, std, std};
  return norm;
}

DatasetStatistics dataset_statistics(const DatasetManifest& manifest) {
  DatasetStatistics stats;
  stats.total = manifest.samples.size();
  for (const auto& s : manifest.samples) {
    const auto v = static_cast<std::size_t>(index_of(s.view));
    ++stats.class_counts[v];
    ++stats.grade_histogram[v][static_cast<std::size_t>(s.grade.band())];
    if (const auto split = manifest.split_of(s.id))
      ++stats.split_counts[v][static_cast<std::size_t>(*split)];
  }
  return stats;
}

DatasetManifest select_views(const DatasetManifest& manifest, const std::vector<ViewClass>& views) {
  DatasetManifest out;
  out.normalization = manifest.normalization;
  out.seed = manifest.seed;
  out.base_dir = manifest.base_dir;
  for (const auto& sample : manifest.samples) {
    if (std::find(views.begin(), views.end(), sample.view) == views.end()) continue;
    out.samples.push_back(sample);
    if (auto it = manifest.split_assignment.find(sample.id); it != manifest.split_assignment.end())
      out.split_assignment.emplace(it->first, it->second);
  }
  return out;
}

}  // namespace cactus::data
