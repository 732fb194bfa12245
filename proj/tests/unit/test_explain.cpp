#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>

#include "common/colormap.hpp"
#include "common/error.hpp"
#include "explain/saliency.hpp"
#include "support/temp_dir.hpp"
#include "synth/phantom.hpp"

using namespace cactus;
using namespace cactus::explain;

namespace {

model::ModelBundle small_bundle(std::uint64_t seed) {
  model::EncoderSpec spec;
  spec.base_width = 4;
  auto b = model::make_bundle(spec, data::default_initial_classes(), true, seed);
  b.preprocess.target_size = 128;
  return b;
}

model::Activation<float> random_input(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  model::Activation<float> x;
  x.resize(3, 1, size, size);
  for (auto& v : x.data) v = normal(rng);
  return x;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

void check_normalized(const SaliencyMap& m) {
  const auto [lo, hi] = std::minmax_element(m.values.begin(), m.values.end());
  CHECK(*lo >= 0.0f);
  CHECK(*hi <= 1.0f);
  CHECK((*hi == 1.0f || *hi == 0.0f));
}

}  // namespace

TEST_CASE("maps lie in [0, 1] and peak at 1 unless empty") {
  const auto b = small_bundle(3);
  for (int i = 0; i < 10; ++i) {
    const auto x = random_input(128, 100 + i);
    for (auto method : {Method::GradCam, Method::GradCamPlusPlus}) {
      for (auto target : {Target::class_logit(i % 5), Target::grade_output()}) {
        const auto m = compute_saliency(b, x, target, method);
        CHECK(m.width == 128);
        CHECK(m.height == 128);
        CHECK(m.coarse_width == 4);
        check_normalized(m);
      }
    }
  }
}

TEST_CASE("a single-channel head localizes to that channel") {
  auto b = small_bundle(5);
  const auto x = random_input(224, 9);
  model::Activation<float> final_map;
  model::forward_features(b, x, &final_map);
  const int hw = final_map.height * final_map.width;
  // Most spatially varied channel.
  int channel = 0;
  double best = -1;
  for (int c = 0; c < final_map.channels; ++c) {
    const float* p = final_map.at(c, 0);
    const auto [lo, hi] = std::minmax_element(p, p + hw);
    if (*hi - *lo > best) {
      best = *hi - *lo;
      channel = c;
    }
  }
  REQUIRE(best > 0.0);
  const int target = 2;
  auto& w = b.classifier->weight;
  std::fill(w.begin() + target * b.feature_dim(), w.begin() + (target + 1) * b.feature_dim(), 0.0f);
  w[static_cast<std::size_t>(target * b.feature_dim() + channel)] = 1.5f;
  std::vector<double> activation(final_map.at(channel, 0), final_map.at(channel, 0) + hw);
  for (auto method : {Method::GradCam, Method::GradCamPlusPlus}) {
    const auto m = compute_saliency(b, x, Target::class_logit(target), method);
    REQUIRE(m.coarse.size() == activation.size());
    const std::vector<double> coarse(m.coarse.begin(), m.coarse.end());
    CHECK(correlation(coarse, activation) > 0.99);
  }
  std::fill(b.grader->weight.begin(), b.grader->weight.end(), 0.0f);
  b.grader->weight[static_cast<std::size_t>(channel)] = -0.7f;  // raw output, sign flips the map
  const auto g = compute_saliency(b, x, Target::grade_output(), Method::GradCam);
  CHECK(std::all_of(g.values.begin(), g.values.end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("zero head row gives an all-zero map") {
  auto b = small_bundle(2);
  auto& w = b.classifier->weight;
  std::fill(w.begin(), w.begin() + b.feature_dim(), 0.0f);
  const auto m = compute_saliency(b, random_input(128, 1), Target::class_logit(0));
  CHECK(std::all_of(m.values.begin(), m.values.end(), [](float v) { return v == 0.0f; }));
}

// Grad-CAM++ mixes powers of the gradient in its pixel weights, so only plain
// Grad-CAM has this property.
TEST_CASE("scaling the target row leaves the normalized Grad-CAM map unchanged") {
  auto b = small_bundle(8);
  const auto x = random_input(128, 4);
  for (auto method : {Method::GradCam}) {
    const auto before = compute_saliency(b, x, Target::class_logit(1), method);
    auto scaled = b;
    for (int i = 0; i < b.feature_dim(); ++i)
      scaled.classifier->weight[static_cast<std::size_t>(b.feature_dim() + i)] *= 4.0f;
    const auto after = compute_saliency(scaled, x, Target::class_logit(1), method);
    for (std::size_t i = 0; i < before.values.size(); ++i)
      CHECK(after.values[i] == doctest::Approx(before.values[i]).epsilon(1e-4).scale(1e-4));
  }
}

TEST_CASE("invalid targets are rejected") {
  const auto b = small_bundle(1);
  CHECK_THROWS_AS(compute_saliency(b, random_input(128, 1), Target::class_logit(5)), Error);
  CHECK_THROWS_AS(compute_saliency(b, random_input(128, 1), Target::class_logit(-1)), Error);
  auto no_grader = b;
  no_grader.grader.reset();
  CHECK_THROWS_AS(compute_saliency(no_grader, random_input(128, 1), Target::grade_output()), Error);
  CHECK(method_from_string(to_string(Method::GradCam)) == Method::GradCam);
  CHECK_THROWS_AS(method_from_string("occlusion"), Error);
}

TEST_CASE("overlay identity and saturation") {
  data::GrayImage frame(16, 8);
  for (std::size_t i = 0; i < frame.pixels.size(); ++i) frame.pixels[i] = static_cast<std::uint8_t>(i * 2);
  SaliencyMap zero{16, 8, std::vector<float>(128, 0.0f)};
  const auto same = overlay(frame, zero, 0.8);
  for (std::size_t i = 0; i < frame.pixels.size(); ++i)
    for (int c = 0; c < 3; ++c) CHECK(same.pixels[i * 3 + c] == frame.pixels[i]);
  SaliencyMap full{16, 8, std::vector<float>(128, 1.0f)};
  const auto hot = overlay(frame, full, 1.0);
  const auto red = jet(1.0);
  for (std::size_t i = 0; i < frame.pixels.size(); ++i)
    for (int c = 0; c < 3; ++c) CHECK(hot.pixels[i * 3 + c] == red[c]);
  CHECK_THROWS_AS(overlay(frame, full, 1.5), Error);
  SaliencyMap coarse{4, 2, std::vector<float>(8, 1.0f)};
  CHECK(overlay(frame, coarse, 1.0) == hot);
}

TEST_CASE("float grid round trip") {
  TempDir dir;
  std::vector<float> v{0.0f, 0.25f, 1.0f, 0.5f, 0.75f, 0.125f};
  write_float_grid(dir.path() / "m.camf", 3, 2, v);
  int w = 0, h = 0;
  CHECK(read_float_grid(dir.path() / "m.camf", w, h) == v);
  CHECK(w == 3);
  CHECK(h == 2);
  CHECK(std::filesystem::file_size(dir.path() / "m.camf") == 4 + 8 + 6 * 4);
}

TEST_CASE("overlay matches the golden render") {
  const auto b = small_bundle(21);
  synth::SynthConfig cfg;
  cfg.view = data::ViewClass::A4C;
  cfg.size = 128;
  cfg.seed = 4;
  const auto sample = synth::render_view(cfg);
  const data::GrayImage* frames[] = {sample.image.get()};
  const auto x = model::preprocess_batch(frames, b.preprocess);
  const auto map = compute_saliency(b, x, Target::class_logit(0));
  const auto image = overlay(*sample.image, map, 0.5);
  const std::filesystem::path golden = std::filesystem::path(CACTUS_TEST_DATA_DIR) / "saliency_golden.png";
  if (std::getenv("CACTUS_UPDATE_GOLDEN")) data::write_png(golden, image);
  REQUIRE(std::filesystem::exists(golden));
  TempDir dir;
  data::write_png(dir.path() / "now.png", image);
  // Colour PNGs decode to luma, so compare that and the raw buffer size.
  const auto expected = data::read_png_gray(golden);
  const auto actual = data::read_png_gray(dir.path() / "now.png");
  REQUIRE(expected.width == actual.width);
  REQUIRE(expected.height == actual.height);
  int worst = 0;
  for (std::size_t i = 0; i < expected.pixels.size(); ++i)
    worst = std::max(worst, std::abs(int(expected.pixels[i]) - int(actual.pixels[i])));
  CHECK(worst <= 2);
}
