#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "common/error.hpp"
#include "data/image.hpp"
#include "data/manifest.hpp"
#include "data/preprocess.hpp"
#include "data/view.hpp"
#include "support/temp_dir.hpp"

using namespace cactus;
using namespace cactus::data;
namespace fs = std::filesystem;

namespace {

DatasetManifest toy_manifest(const std::vector<std::pair<ViewClass, int>>& counts) {
  DatasetManifest m;
  int next = 0;
  for (auto [view, n] : counts)
    for (int i = 0; i < n; ++i) {
      ImageSample s;
      s.id = std::string(to_string(view)) + "_" + std::to_string(next++);
      auto img = std::make_shared<GrayImage>(8, 8, static_cast<std::uint8_t>(next % 256));
      s.image = img;
      s.view = view;
      s.grade = GradeValue(view == ViewClass::RANDOM ? 0.0 : 5.0);
      m.samples.push_back(s);
    }
  return m;
}

// Reference bilinear sample with half-pixel centres and edge clamping.
double bilinear_oracle(const GrayImage& img, double sx, double sy) {
  sx = std::clamp(sx, 0.0, img.width - 1.0);
  sy = std::clamp(sy, 0.0, img.height - 1.0);
  const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
  const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  const double fx = sx - x0, fy = sy - y0;
  return (1 - fy) * ((1 - fx) * img.at(x0, y0) + fx * img.at(x1, y0)) +
         fy * ((1 - fx) * img.at(x0, y1) + fx * img.at(x1, y1));
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("view names round trip and unknown names are rejected") {
  for (auto v : kAllViews) CHECK(view_from_string(to_string(v)) == v);
  CHECK_FALSE(parse_view("XYZ").has_value());
  CHECK_THROWS_AS(view_from_string("XYZ"), Error);
}

TEST_CASE("grade bands follow the table rows") {
  CHECK(grade_band(0.5).index == 0);
  CHECK(std::string(grade_band(0.5).description).find("does not capture a specific cardiac window") !=
        std::string::npos);
  CHECK(grade_band(5.0).index == 5);
  CHECK(grade_band(5.0).lower == 5.0);
  CHECK(grade_band(5.0).upper == 6.0);
  const auto top = grade_band(10.0);
  CHECK(top.index == 7);
  CHECK(top.lower == 7.0);
  CHECK(top.upper == 10.0);
  CHECK(std::string(top.description).find("optimal gain/power") != std::string::npos);
  CHECK_THROWS_AS(grade_band(-0.01), Error);
  CHECK_THROWS_AS(grade_band(10.01), Error);
}

TEST_CASE("grade band of any value inside band k is k") {
  for (int i = 0; i < 1000; ++i) {
    const double v = 10.0 * i / 999.0;
    const int expected = v >= 7.0 ? 7 : static_cast<int>(std::floor(v));
    REQUIRE(grade_band(v).index == expected);
    const auto& b = grade_bands()[static_cast<std::size_t>(expected)];
    CHECK(v >= b.lower);
    CHECK((v < b.upper || (expected == 7 && v <= 10.0)));
  }
}

TEST_CASE("grade validity per view") {
  CHECK_NOTHROW(check_grade_for_view(ViewClass::RANDOM, 0.0, "r"));
  CHECK_THROWS_AS(check_grade_for_view(ViewClass::RANDOM, 3.0, "r"), Error);
  CHECK_THROWS_AS(check_grade_for_view(ViewClass::A4C, 11.0, "a"), Error);
  CHECK_NOTHROW(check_grade_for_view(ViewClass::A4C, 10.0, "a"));
}

TEST_CASE("split sizes use floor, floor, remainder") {
  const auto s = split_sizes(10);
  CHECK(s.train == 7);
  CHECK(s.val == 1);
  CHECK(s.test == 2);
  for (std::size_t n = 3; n < 200; ++n) {
    const auto z = split_sizes(n);
    CHECK(z.train == (7 * n) / 10);
    CHECK(z.val == n / 10);
    CHECK(z.train + z.val + z.test == n);
  }
}

TEST_CASE("stratified split partitions each class and is deterministic") {
  const auto m = toy_manifest({{ViewClass::A4C, 10}, {ViewClass::PL, 23}, {ViewClass::RANDOM, 7}});
  const auto a = stratified_split(m, 42);
  const auto b = stratified_split(m, 42);
  CHECK(a.split_assignment == b.split_assignment);
  REQUIRE(a.is_split());
  std::map<ViewClass, std::array<int, 3>> per_class;
  for (const auto& s : a.samples) ++per_class[s.view][static_cast<int>(*a.split_of(s.id))];
  for (auto [view, n] : std::vector<std::pair<ViewClass, int>>{
           {ViewClass::A4C, 10}, {ViewClass::PL, 23}, {ViewClass::RANDOM, 7}}) {
    const auto z = split_sizes(static_cast<std::size_t>(n));
    CHECK(per_class[view][0] == static_cast<int>(z.train));
    CHECK(per_class[view][1] == static_cast<int>(z.val));
    CHECK(per_class[view][2] == static_cast<int>(z.test));
  }
  const auto c = stratified_split(m, 43);
  CHECK(c.split_assignment != a.split_assignment);
  CHECK_THROWS_AS(stratified_split(toy_manifest({{ViewClass::A4C, 2}}), 1), Error);
}

TEST_CASE("split sizes on the release class counts sum per-class floors") {
  // Per-class counts are illustrative; the oracle is the per-class floor sum.
  const std::vector<std::size_t> counts{10000, 8000, 7000, 6000, 4000, 2736};
  std::size_t train = 0, val = 0, test = 0;
  for (auto n : counts) {
    const auto z = split_sizes(n);
    train += z.train;
    val += z.val;
    test += z.test;
  }
  CHECK(train + val + test == 37736);
  CHECK(std::abs(static_cast<long>(train) - 26415) <= 5);
  CHECK(std::abs(static_cast<long>(val) - 3773) <= 5);
}

TEST_CASE("normalization uses TRAIN samples only") {
  auto m = stratified_split(toy_manifest({{ViewClass::A4C, 20}, {ViewClass::SC, 20}}), 5);
  PreprocessSpec spec;
  spec.target_size = 8;
  const auto full = compute_normalization(m, spec);
  DatasetManifest train_only = m;
  train_only.samples.clear();
  train_only.split_assignment.clear();
  for (const auto& s : m.samples)
    if (*m.split_of(s.id) == Split::Train) {
      train_only.samples.push_back(s);
      train_only.split_assignment[s.id] = Split::Train;
    }
  const auto reduced = compute_normalization(train_only, spec);
  for (int c = 0; c < 3; ++c) {
    CHECK(full.mean[c] == doctest::Approx(reduced.mean[c]).epsilon(1e-12));
    CHECK(full.std[c] == doctest::Approx(reduced.std[c]).epsilon(1e-12));
  }
}

TEST_CASE("preprocess of a constant image matches the closed form") {
  GrayImage img(300, 200, 128);
  PreprocessSpec spec;
  spec.normalization.mean = {0.5, 0.5, 0.5};
  spec.normalization.std = {0.5, 0.5, 0.5};
  const auto out = preprocess(img, spec);
  REQUIRE(out.size() == 3u * 224 * 224);
  const double expected = (128.0 / 255.0 - 0.5) / 0.5;
  for (float v : out) REQUIRE(v == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("bilinear resize matches a reference oracle") {
  std::mt19937 rng(3);
  GrayImage img(37, 23);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() % 256);
  for (auto [ow, oh] : std::vector<std::pair<int, int>>{{16, 11}, {74, 46}, {224, 224}, {5, 40}}) {
    const auto out = resize_bilinear(img, ow, oh);
    REQUIRE(out.size() == static_cast<std::size_t>(ow) * oh);
    const double sx = static_cast<double>(img.width) / ow, sy = static_cast<double>(img.height) / oh;
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        const double expected = bilinear_oracle(img, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
        REQUIRE(out[static_cast<std::size_t>(y) * ow + x] == doctest::Approx(expected).epsilon(1e-4));
      }
  }
}

TEST_CASE("checkerboard of 2x2 blocks survives a 2x downsample at block centres") {
  GrayImage img(448, 448);
  for (int y = 0; y < 448; ++y)
    for (int x = 0; x < 448; ++x) img.at(x, y) = ((x / 2 + y / 2) % 2) ? 255 : 0;
  const auto out = resize_bilinear(img, 224, 224);
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x)
      REQUIRE(out[static_cast<std::size_t>(y) * 224 + x] == doctest::Approx(((x + y) % 2) ? 255.0 : 0.0));
}

TEST_CASE("preprocess is deterministic, replicates channels and validates crops") {
  std::mt19937 rng(9);
  GrayImage img(100, 80);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() % 256);
  PreprocessSpec spec;
  spec.crop = CropBox{10, 5, 60, 60};
  spec.target_size = 32;
  const auto a = preprocess(img, spec);
  const auto b = preprocess(img, spec);
  CHECK(a == b);
  const std::size_t plane = 32 * 32;
  for (std::size_t i = 0; i < plane; ++i) {
    REQUIRE(a[i] == a[plane + i]);
    REQUIRE(a[i] == a[2 * plane + i]);
  }
  spec.crop = CropBox{50, 50, 60, 60};
  CHECK_THROWS_AS(preprocess(img, spec), Error);
}

TEST_CASE("png round trip") {
  TempDir dir;
  GrayImage img(13, 7);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 17);
  write_png(dir.path() / "a.png", img);
  CHECK(read_png_gray(dir.path() / "a.png") == img);
  const auto bytes = encode_png(img);
  REQUIRE(bytes.size() > 8);
  CHECK(bytes[1] == 'P');
  CHECK_THROWS_AS(read_png_gray(dir.path() / "missing.png"), Error);
}

TEST_CASE("class-folder ingestion counts, sidecar grades and errors") {
  TempDir dir;
  std::ofstream grades(dir.path() / "grades.csv");
  grades << "id,view,grade\n";
  for (auto v : kAllViews) {
    fs::create_directories(dir.path() / std::string(to_string(v)));
    for (int i = 0; i < 2; ++i) {
      const std::string id = std::string(to_string(v)) + std::to_string(i);
      write_png(dir.path() / std::string(to_string(v)) / (id + ".png"), GrayImage(6, 6, 40));
      grades << id << "," << to_string(v) << "," << (v == ViewClass::RANDOM ? 0.0 : 6.5) << "\n";
    }
  }
  grades.close();
  const auto m = ingest_directory(dir.path(), IngestLayout::ClassFolders);
  CHECK(m.samples.size() == 12);
  for (int c : m.class_counts()) CHECK(c == 2);
  CHECK_FALSE(m.is_split());
  const auto stats = dataset_statistics(m);
  CHECK(stats.total == 12);
  CHECK(stats.grade_histogram[static_cast<std::size_t>(index_of(ViewClass::A4C))][6] == 2);

  fs::create_directories(dir.path() / "XYZ");
  try {
    ingest_directory(dir.path(), IngestLayout::ClassFolders);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("unknown view class XYZ") != std::string::npos);
  }
}

TEST_CASE("ingestion rejects out-of-range and RANDOM grades") {
  TempDir dir;
  fs::create_directories(dir.path() / "RANDOM");
  write_png(dir.path() / "RANDOM" / "r0.png", GrayImage(4, 4, 1));
  std::ofstream(dir.path() / "grades.csv") << "id,view,grade\nr0,RANDOM,4\n";
  CHECK_THROWS_AS(ingest_directory(dir.path(), IngestLayout::ClassFolders), Error);
  std::ofstream(dir.path() / "grades.csv") << "id,view,grade\nr0,RANDOM,0\n";
  CHECK_NOTHROW(ingest_directory(dir.path(), IngestLayout::ClassFolders));
  fs::create_directories(dir.path() / "A4C");
  write_png(dir.path() / "A4C" / "a0.png", GrayImage(4, 4, 1));
  std::ofstream(dir.path() / "grades.csv") << "id,view,grade\nr0,RANDOM,0\na0,A4C,10.5\n";
  CHECK_THROWS_AS(ingest_directory(dir.path(), IngestLayout::ClassFolders), Error);
}

TEST_CASE("manifest JSONL round trip keeps splits, grades and normalization") {
  TempDir dir;
  fs::create_directories(dir.path() / "img");
  auto m = toy_manifest({{ViewClass::A4C, 10}, {ViewClass::RANDOM, 10}});
  for (auto& s : m.samples) {
    s.source_path = "img/" + s.id + ".png";
    write_png(dir.path() / s.source_path, *s.image);
    s.image.reset();
  }
  m.base_dir = dir.path();
  m.samples[0].metadata = AcquisitionMetadata{};
  m.samples[0].metadata->depth_cm = 19.0;
  m = stratified_split(std::move(m), 11);
  m.normalization.mean = {0.25, 0.25, 0.25};
  m.normalization.std = {0.125, 0.125, 0.125};
  write_manifest(dir.path() / "manifest.jsonl", m);
  const auto r = read_manifest(dir.path() / "manifest.jsonl");
  REQUIRE(r.samples.size() == m.samples.size());
  CHECK(r.split_assignment == m.split_assignment);
  CHECK(r.normalization == m.normalization);
  CHECK(r.seed == m.seed);
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    CHECK(r.samples[i].id == m.samples[i].id);
    CHECK(r.samples[i].view == m.samples[i].view);
    CHECK(r.samples[i].grade.value() == m.samples[i].grade.value());
  }
  CHECK(r.samples[0].metadata->depth_cm == 19.0);
  CHECK(load_image(r, r.samples[3])->pixels.size() == 64);

  std::ifstream in(dir.path() / "manifest.jsonl");
  std::string header;
  std::getline(in, header);
  CHECK(header.find("\"type\":\"header\"") != std::string::npos);
}

TEST_CASE("acquisition metadata warns outside the usual ranges and rejects nonsense") {
  AcquisitionMetadata meta;
  meta.depth_cm = 19.0;
  CHECK_FALSE(meta.validate().empty());
  meta.depth_cm = 15.0;
  CHECK(meta.validate().empty());
  meta.depth_cm = -1.0;
  CHECK_THROWS_AS(meta.validate(), Error);
  CHECK(AcquisitionMetadata{}.fps == 30.0);
}

TEST_CASE("select_views keeps split assignments of the kept samples") {
  auto m = stratified_split(toy_manifest({{ViewClass::A4C, 10}, {ViewClass::PSMV, 10}}), 2);
  const auto s = select_views(m, {ViewClass::A4C});
  CHECK(s.samples.size() == 10);
  for (const auto& x : s.samples) {
    CHECK(x.view == ViewClass::A4C);
    CHECK(s.split_of(x.id) == m.split_of(x.id));
  }
}

}  // TEST_SUITE
