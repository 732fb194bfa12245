#include "doctest.h"

#include <cmath>
#include <cstring>
#include <random>

#include "common/checksum.hpp"
#include "common/error.hpp"
#include "model/accounting.hpp"
#include "model/blas.hpp"
#include "model/bundle.hpp"
#include "support/temp_dir.hpp"

using namespace cactus;
using namespace cactus::model;
using data::ViewClass;

namespace {

EncoderSpec tiny_spec() {
  EncoderSpec spec;
  spec.base_width = 8;
  return spec;
}

Activation<float> random_batch(int n, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Activation<float> a;
  a.resize(3, n, size, size);
  for (auto& v : a.data) v = normal(rng);
  return a;
}

// Counts straight from layer shapes: conv weights have no bias, each BN has
// a scale and shift per channel.
std::uint64_t resnet_params_oracle(int width, const std::vector<int>& blocks) {
  auto conv = [](std::uint64_t in, std::uint64_t out, std::uint64_t k) { return in * out * k * k; };
  auto bn = [](std::uint64_t c) { return 2 * c; };
  std::uint64_t total = conv(3, width, 7) + bn(width);
  std::uint64_t in = width;
  for (std::size_t s = 0; s < blocks.size(); ++s) {
    const std::uint64_t out = static_cast<std::uint64_t>(width) << s;
    for (int b = 0; b < blocks[s]; ++b) {
      total += conv(in, out, 3) + bn(out) + conv(out, out, 3) + bn(out);
      if (in != out || (s > 0 && b == 0)) total += conv(in, out, 1) + bn(out);
      in = out;
    }
  }
  return total;
}

Features<float> column(const Features<float>& f, int n) {
  Features<float> out{f.dim, 1, std::vector<float>(static_cast<std::size_t>(f.dim))};
  for (int d = 0; d < f.dim; ++d) out.at(d, 0) = f.at(d, n);
  return out;
}

}  // namespace

TEST_CASE("standard encoder and head parameter counts") {
  const auto spec = EncoderSpec::resnet18();
  const Components enc{true, false, false};
  CHECK(count_trainable_params(spec, 0, enc) == 11176512u);
  CHECK(count_trainable_params(spec, 6, {true, true, false}) == 11179590u);
  CHECK(count_trainable_params(spec, 5, {true, true, false}) == 11179077u);
  CHECK(count_trainable_params(spec, 0, {true, false, true}) == 11177025u);
  CHECK(count_trainable_params(spec, 0, {true, false, true}, {true, false, false}) == 513u);
  CHECK(count_trainable_params(spec, 6, {true, true, true}) == 11180103u);
  CHECK(resnet_params_oracle(64, {2, 2, 2, 2}) == 11176512u);
}

TEST_CASE("closed-form counts match allocated tensors") {
  for (int width : {4, 8, 64}) {
    EncoderSpec spec;
    spec.base_width = width;
    const auto bundle = make_bundle(spec, data::default_initial_classes(), true, 1);
    for (Components inc : {Components{true, false, false}, Components{true, true, false},
                           Components{true, false, true}, Components{true, true, true}}) {
      CHECK(count_trainable_params(bundle, inc) ==
            count_trainable_params(spec, static_cast<int>(bundle.classes.size()), inc));
      CHECK(count_trainable_params(bundle, inc, {true, false, false}) ==
            count_trainable_params(spec, static_cast<int>(bundle.classes.size()), inc,
                                   {true, false, false}));
    }
    CHECK(bundle.encoder.trainable_count() == resnet_params_oracle(width, spec.stage_blocks));
  }
}

TEST_CASE("running statistics are buffers, not parameters") {
  const Encoder<float> enc(tiny_spec());
  std::size_t buffers = 0;
  for (const auto& p : enc.params())
    if (!p.trainable) buffers += p.value.size();
  CHECK(buffers > 0);
  std::size_t trainable = 0;
  for (const auto& p : enc.params())
    if (p.trainable) trainable += p.value.size();
  CHECK(trainable == enc.trainable_count());
}

TEST_CASE("bundle round trip preserves every value") {
  TempDir dir;
  auto bundle = make_bundle(tiny_spec(), data::default_initial_classes(), true, 7);
  bundle.preprocess.target_size = 32;
  bundle.preprocess.crop = data::CropBox{1, 2, 30, 28};
  bundle.preprocess.normalization.mean = {0.1, 0.2, 0.3};
  bundle.provenance["note"] = "x";
  save_bundle(bundle, dir.path() / "b.cactus");
  const auto loaded = load_bundle(dir.path() / "b.cactus");
  CHECK(loaded.classes == bundle.classes);
  CHECK(loaded.preprocess == bundle.preprocess);
  CHECK(loaded.provenance == bundle.provenance);
  CHECK(loaded.encoder.spec() == bundle.encoder.spec());
  CHECK(encoder_checksum(loaded.encoder) == encoder_checksum(bundle.encoder));
  CHECK(loaded.classifier->weight == bundle.classifier->weight);
  CHECK(loaded.grader->bias == bundle.grader->bias);
  const auto x = random_batch(2, 32, 3);
  const auto a = predict(bundle, x);
  const auto b = predict(loaded, x);
  CHECK(a.classes.logits.data == b.classes.logits.data);
  CHECK(a.grades.raw == b.grades.raw);
}

TEST_CASE("corrupted bundles fail with distinct errors") {
  auto bytes = serialize_bundle(make_bundle(tiny_spec(), {ViewClass::A4C, ViewClass::PL}, false, 1));
  auto code_of = [](std::span<const std::byte> b) {
    try {
      deserialize_bundle(b);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Internal;
  };
  SUBCASE("truncated") {
    CHECK(code_of(std::span(bytes).first(bytes.size() / 2)) == ErrorCode::Checksum);
    CHECK(code_of(std::span(bytes).first(bytes.size() - 1)) == ErrorCode::Checksum);
  }
  SUBCASE("flipped byte") {
    bytes[bytes.size() / 2] ^= std::byte{0x40};
    CHECK(code_of(bytes) == ErrorCode::Checksum);
  }
  SUBCASE("bad magic") {
    bytes[0] = std::byte{'X'};
    CHECK(code_of(bytes) == ErrorCode::Format);
  }
  SUBCASE("empty") { CHECK(code_of({}) == ErrorCode::Format); }
  SUBCASE("future version") {
    const std::uint32_t version = kBundleFormatVersion + 1;
    std::memcpy(bytes.data() + 8, &version, 4);
    const auto body = bytes.size() - 4;
    const auto crc = crc32(std::span<const std::byte>(bytes).first(body));
    std::memcpy(bytes.data() + body, &crc, 4);
    CHECK(code_of(bytes) == ErrorCode::Version);
  }
  SUBCASE("missing file") {
    try {
      load_bundle("/nonexistent/x.cactus");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Io);
    }
  }
}

TEST_CASE("head expansion keeps existing rows exactly") {
  const auto base = make_bundle(tiny_spec(), data::default_initial_classes(), true, 11);
  const auto x = random_batch(5, 32, 4);
  const auto before = classify(base, x);
  for (auto init : {NewRowInit::Zero, NewRowInit::Random}) {
    const auto grown = expand_classification_head(base, ViewClass::PSMV, init, 3);
    REQUIRE(grown.classes.size() == base.classes.size() + 1);
    CHECK(grown.classes.back() == ViewClass::PSMV);
    CHECK(encoder_checksum(grown.encoder) == encoder_checksum(base.encoder));
    const auto after = classify(grown, x);
    const int k = static_cast<int>(base.classes.size());
    for (int c = 0; c < k; ++c)
      for (int n = 0; n < x.batch; ++n) CHECK(after.logits.at(c, n) == before.logits.at(c, n));
    if (init == NewRowInit::Zero)
      for (int n = 0; n < x.batch; ++n) CHECK(after.logits.at(k, n) == 0.0f);
    CHECK(count_trainable_params(grown, {true, true, true}) ==
          count_trainable_params(base, {true, true, true}) + static_cast<std::uint64_t>(base.feature_dim()) + 1);
  }
  CHECK_THROWS_AS(expand_classification_head(base, ViewClass::A4C), Error);
}

TEST_CASE("one shared pass equals the heads run separately") {
  const auto bundle = make_bundle(tiny_spec(), data::default_initial_classes(), true, 5);
  const auto x = random_batch(3, 32, 8);
  MacCounter shared;
  const auto both = predict(bundle, x);
  const auto shared_macs = shared.conv_macs();
  const auto c = classify(bundle, x);
  const auto g = grade(bundle, x);
  CHECK(both.classes.logits.data == c.logits.data);
  CHECK(both.classes.predicted == c.predicted);
  CHECK(both.grades.raw == g.raw);
  // Single encoder pass: the counter saw both separate calls on top of the shared one.
  CHECK(shared.conv_macs() == 3 * shared_macs);
}

TEST_CASE("eval outputs do not depend on batch composition") {
  const auto bundle = make_bundle(tiny_spec(), data::default_initial_classes(), true, 9);
  const auto x = random_batch(4, 32, 12);
  const auto together = predict(bundle, x);
  for (int n = 0; n < 4; ++n) {
    Activation<float> one;
    one.resize(3, 1, 32, 32);
    for (int c = 0; c < 3; ++c) std::copy_n(x.at(c, n), x.spatial(), one.at(c, 0));
    const auto alone = predict(bundle, one);
    for (int k = 0; k < together.classes.logits.dim; ++k)
      CHECK(alone.classes.logits.at(k, 0) ==
            doctest::Approx(together.classes.logits.at(k, n)).epsilon(1e-4));
    CHECK(alone.grades.raw[0] == doctest::Approx(together.grades.raw[static_cast<std::size_t>(n)]).epsilon(1e-4));
  }
}

TEST_CASE("softmax columns are distributions") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal(0.0, 30.0);
  for (int trial = 0; trial < 200; ++trial) {
    Features<double> logits{6, 3, std::vector<double>(18)};
    for (auto& v : logits.data) v = normal(rng);
    const auto p = softmax(logits);
    for (int n = 0; n < 3; ++n) {
      double sum = 0.0;
      for (int k = 0; k < 6; ++k) {
        CHECK(p.at(k, n) >= 0.0);
        CHECK(std::isfinite(p.at(k, n)));
        sum += p.at(k, n);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("zeroed classifier gives uniform probabilities") {
  auto bundle = make_bundle(tiny_spec(), data::default_initial_classes(), false, 1);
  std::fill(bundle.classifier->weight.begin(), bundle.classifier->weight.end(), 0.0f);
  std::fill(bundle.classifier->bias.begin(), bundle.classifier->bias.end(), 0.0f);
  const auto out = classify(bundle, random_batch(2, 32, 1));
  for (float p : out.probabilities.data) CHECK(p == doctest::Approx(0.2));
}

TEST_CASE("reported grade is clamped, raw is not") {
  for (double v = -5.0; v <= 15.0; v += 0.25) {
    const double c = clamp_grade(v);
    CHECK(c >= 0.0);
    CHECK(c <= 10.0);
    if (v >= 0.0 && v <= 10.0) CHECK(c == v);
  }
  auto bundle = make_bundle(tiny_spec(), {}, true, 1);
  std::fill(bundle.grader->weight.begin(), bundle.grader->weight.end(), 0.0f);
  bundle.grader->bias[0] = 42.0f;
  const auto g = grade(bundle, random_batch(1, 32, 1));
  CHECK(g.raw[0] == 42.0f);
  CHECK(g.reported[0] == 10.0f);
  bundle.grader->bias[0] = -3.0f;
  CHECK(grade(bundle, random_batch(1, 32, 1)).reported[0] == 0.0f);
}

TEST_CASE("cross-entropy and MSE gradients") {
  Features<double> logits{3, 2, {0.5, -1.0, 2.0, 0.0, -0.5, 1.5}};
  const std::vector<int> labels{2, 0};
  Features<double> d;
  const double loss = cross_entropy<double>(logits, labels, &d);
  for (std::size_t i = 0; i < logits.data.size(); ++i) {
    auto plus = logits, minus = logits;
    plus.data[i] += 1e-6;
    minus.data[i] -= 1e-6;
    const double numeric = (cross_entropy<double>(plus, labels) - cross_entropy<double>(minus, labels)) / 2e-6;
    CHECK(d.data[i] == doctest::Approx(numeric).epsilon(1e-6));
  }
  CHECK(loss > 0.0);
  Features<double> pred{1, 3, {1.0, 2.0, 4.0}};
  const std::vector<double> target{1.0, 3.0, 1.0};
  Features<double> dp;
  CHECK(mean_squared_error<double>(pred, target, &dp) == doctest::Approx(10.0 / 3.0));
  CHECK(dp.data[1] == doctest::Approx(2.0 * -1.0 / 3.0));
}
