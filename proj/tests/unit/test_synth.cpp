#include "doctest.h"

#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "common/checksum.hpp"
#include "common/error.hpp"
#include "data/manifest.hpp"
#include "synth/phantom.hpp"
#include "support/temp_dir.hpp"

using namespace cactus;
using namespace cactus::synth;
using data::ViewClass;

namespace {

double pixel_variance_of_difference(const data::GrayImage& a, const data::GrayImage& b) {
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    sum += d;
    sq += d * d;
  }
  const double n = static_cast<double>(a.pixels.size());
  return sq / n - (sum / n) * (sum / n);
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("grade formula") {
  SynthConfig c;
  c.view = ViewClass::A4C;
  c.completeness = 1.0;
  c.clarity = 1.0;
  CHECK(grade_of(c).value() == 10.0);
  c.completeness = 0.6;
  c.clarity = 0.8;
  CHECK(grade_of(c).value() == doctest::Approx(7.0).epsilon(1e-12));
  c.completeness = 0.0;
  c.clarity = 0.0;
  CHECK(grade_of(c).value() == 1.0);
  c.view = ViewClass::RANDOM;
  for (double x : {0.0, 0.3, 1.0}) {
    c.completeness = x;
    c.clarity = 1.0 - x;
    CHECK(grade_of(c).value() == 0.0);
  }
}

TEST_CASE("grade is monotone in completeness and clarity") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    SynthConfig a;
    a.view = data::kAllViews[static_cast<std::size_t>(i % 5)];
    a.completeness = u(rng);
    a.clarity = u(rng);
    SynthConfig b = a;
    if (i % 2) b.completeness = std::min(1.0, a.completeness + u(rng));
    else b.clarity = std::min(1.0, a.clarity + u(rng));
    REQUIRE(grade_of(b).value() >= grade_of(a).value());
  }
}

TEST_CASE("undegraded render equals the clean template") {
  for (auto v : data::kAllViews) {
    if (v == ViewClass::RANDOM) continue;
    SynthConfig c;
    c.view = v;
    c.size = 96;
    c.speckle_sigma = 0.0;
    c.occlusion_fraction = 0.0;
    c.seed = 5;
    const auto sample = render_view(c);
    CHECK(*sample.image == clean_template(v, 96, 5));
  }
}

TEST_CASE("rendering is deterministic per seed") {
  SynthConfig c;
  c.view = ViewClass::PSAV;
  c.completeness = 0.4;
  c.clarity = 0.3;
  c.speckle_sigma = 0.8;
  c.occlusion_fraction = 0.6;
  c.gain_shift = 0.05;
  c.seed = 99;
  c.size = 128;
  CHECK(*render_view(c).image == *render_view(c).image);
  auto d = c;
  d.seed = 100;
  CHECK_FALSE(*render_view(c).image == *render_view(d).image);
}

TEST_CASE("lower clarity adds more speckle") {
  for (auto v : {ViewClass::A4C, ViewClass::PL, ViewClass::SC}) {
    SynthConfig c;
    c.view = v;
    c.size = 128;
    c.speckle_sigma = 0.8;
    c.seed = 21;
    const auto clean = clean_template(v, 128, 21);
    c.clarity = 0.2;
    const double low = pixel_variance_of_difference(*render_view(c).image, clean);
    c.clarity = 0.9;
    const double high = pixel_variance_of_difference(*render_view(c).image, clean);
    CHECK(low > high);
  }
}

TEST_CASE("class templates are pairwise distinguishable") {
  std::vector<data::GrayImage> t;
  for (auto v : data::kAllViews) t.push_back(clean_template(v, 128, 1));
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = i + 1; j < t.size(); ++j) {
      double diff = 0.0;
      for (std::size_t p = 0; p < t[i].pixels.size(); ++p)
        diff += std::abs(static_cast<double>(t[i].pixels[p]) - t[j].pixels[p]);
      diff /= 255.0 * static_cast<double>(t[i].pixels.size());
      CHECK(diff > 0.05);
    }
}

TEST_CASE("config validation") {
  SynthConfig c;
  c.clarity = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
  c.clarity = 1.0;
  c.speckle_sigma = -1.0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("dataset generation counts, bands and emission log") {
  GenerateOptions o;
  o.n_per_class = 3;
  o.size = 64;
  o.seed = 4;
  CHECK(generate_dataset(o).manifest.samples.size() == 18);

  o.n_per_class = 100;
  o.size = 32;
  const auto ds = generate_dataset(o);
  REQUIRE(ds.emission_log.size() == 600);
  std::map<ViewClass, std::set<int>> bands;
  for (const auto& rec : ds.emission_log) {
    bands[rec.config.view].insert(data::grade_band(rec.grade).index);
    CHECK(rec.grade == grade_of(rec.config).value());
  }
  for (auto v : data::kAllViews)
    if (v != ViewClass::RANDOM) CHECK(bands[v].size() >= 6);
  CHECK(bands[ViewClass::RANDOM] == std::set<int>{0});

  // Histogram equals the emission log.
  const auto stats = data::dataset_statistics(ds.manifest);
  std::array<std::array<int, data::kNumGradeBands>, data::kNumViews> expected{};
  for (const auto& rec : ds.emission_log)
    ++expected[static_cast<std::size_t>(data::index_of(rec.config.view))]
              [static_cast<std::size_t>(data::grade_band(rec.grade).index)];
  CHECK(stats.grade_histogram == expected);
}

TEST_CASE("written datasets are byte-identical for a fixed seed") {
  GenerateOptions o;
  o.n_per_class = 4;
  o.size = 48;
  o.seed = 12;
  TempDir a, b;
  write_dataset(generate_dataset(o), a.path());
  write_dataset(generate_dataset(o), b.path());
  auto read = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  for (const char* name : {"manifest.jsonl", "grades.csv", "emission_log.csv"}) {
    REQUIRE(std::filesystem::exists(a.path() / name));
    CHECK(crc32(read(a.path() / name)) == crc32(read(b.path() / name)));
  }
  CHECK(read(a.path() / "A4C" / "A4C_00002.png") == read(b.path() / "A4C" / "A4C_00002.png"));
  std::ifstream log(a.path() / "emission_log.csv");
  std::string header;
  std::getline(log, header);
  CHECK(header.rfind("id,view,completeness,clarity,grade", 0) == 0);
  const auto m = data::read_manifest(a.path() / "manifest.jsonl");
  CHECK(m.samples.size() == 24);
}

}  // TEST_SUITE
