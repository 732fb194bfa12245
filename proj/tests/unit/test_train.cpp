#include "doctest.h"

#include <fstream>
#include <sstream>

#include "common/error.hpp"
#include "model/accounting.hpp"
#include "support/temp_dir.hpp"
#include "synth/phantom.hpp"
#include "train/trainer.hpp"

using namespace cactus;
using data::ViewClass;
using train::TrainConfig;

namespace {

const std::vector<ViewClass> kFour{ViewClass::A4C, ViewClass::PL, ViewClass::PSAV, ViewClass::SC};

// 9 frames per view; the first `train_count` go to TRAIN, the rest to VAL.
data::DatasetManifest small_manifest(std::size_t train_count, std::vector<ViewClass> views = kFour,
                                     int per_class = 9) {
  synth::GenerateOptions o;
  o.n_per_class = per_class;
  o.size = 48;
  o.seed = 5;
  o.views = std::move(views);
  auto m = synth::generate_dataset(o).manifest;
  // Interleave views so every class reaches TRAIN.
  std::vector<data::ImageSample> order;
  const std::size_t n = m.samples.size();
  const std::size_t k = o.views.size();
  for (std::size_t i = 0; i < n; ++i) order.push_back(m.samples[(i % k) * (n / k) + i / k]);
  m.samples = order;
  for (std::size_t i = 0; i < n; ++i)
    m.split_assignment[m.samples[i].id] = i < train_count ? data::Split::Train : data::Split::Val;
  return m;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.encoder.base_width = 8;
  c.input_size = 32;
  c.epochs = 2;
  c.batch_size = 16;
  c.learning_rate = 0.01;
  c.seeds = {3};
  c.classes = kFour;
  return c;
}

std::vector<float> trainable_values(const model::ModelBundle& b) {
  std::vector<float> out;
  for (const auto& p : b.encoder.params())
    if (p.trainable) out.insert(out.end(), p.value.begin(), p.value.end());
  return out;
}

}  // namespace

TEST_CASE("transfer grading leaves the encoder and classifier untouched") {
  const auto m = small_manifest(28);
  auto cfg = tiny_config();
  const auto cls = train::train_classification(m, cfg);
  const auto& base = cls.bundles.front();
  cfg.encoder_frozen = true;
  cfg.learning_rate = 0.05;
  const auto tl = train::transfer_grading(std::span(cls.bundles), m, cfg);
  const auto& graded = tl.bundles.front();
  CHECK(model::encoder_checksum(graded.encoder) == model::encoder_checksum(base.encoder));
  CHECK(graded.classifier->weight == base.classifier->weight);
  CHECK(graded.classifier->bias == base.classifier->bias);
  REQUIRE(graded.grader);
  CHECK(model::count_trainable_params(graded, {true, false, true}, {true, false, false}) ==
        static_cast<std::uint64_t>(graded.feature_dim()) + 1);
  CHECK(tl.history.averaged.count("val/mse") == 1);
  cfg.encoder_frozen = false;
  CHECK_THROWS_AS(train::transfer_grading(std::span(cls.bundles), m, cfg), Error);
}

TEST_CASE("training losses drop by 90 percent on a 32-frame overfit set") {
  const auto m = small_manifest(32);
  auto cfg = tiny_config();
  cfg.epochs = 200;
  cfg.batch_size = 32;
  cfg.learning_rate = 0.02;
  cfg.momentum = 0.9;
  const auto r = train::train_mtl(m, cfg);
  const auto& cce = r.history.averaged.at("train/cce");
  const auto& mse = r.history.averaged.at("train/mse");
  REQUIRE(cce.size() == 200);
  CHECK(cce.back() <= 0.1 * cce.front());
  CHECK(mse.back() <= 0.1 * mse.front());
}

TEST_CASE("zero learning rate leaves trainable weights unchanged") {
  const auto m = small_manifest(28);
  auto cfg = tiny_config();
  cfg.learning_rate = 0.0;
  const auto r = train::train_mtl(m, cfg);
  const auto fresh = model::make_bundle(cfg.encoder, cfg.classes, true, cfg.seeds[0]);
  CHECK(trainable_values(r.bundles[0]) == trainable_values(fresh));
  CHECK(r.bundles[0].classifier->weight == fresh.classifier->weight);
  CHECK(r.bundles[0].grader->weight == fresh.grader->weight);
}

TEST_CASE("grading head update scales linearly with the task weight") {
  const auto m = small_manifest(32);
  auto cfg = tiny_config();
  cfg.epochs = 1;
  cfg.batch_size = 64;  // one step over the whole TRAIN split
  cfg.learning_rate = 1e-3;
  const auto fresh = model::make_bundle(cfg.encoder, cfg.classes, true, cfg.seeds[0]);
  std::vector<std::vector<double>> deltas;
  for (double lambda : {0.0, 1.0, 2.0}) {
    cfg.mtl_lambda = lambda;
    const auto r = train::train_mtl(m, cfg);
    std::vector<double> d;
    for (std::size_t i = 0; i < fresh.grader->weight.size(); ++i)
      d.push_back(static_cast<double>(r.bundles[0].grader->weight[i]) - fresh.grader->weight[i]);
    d.push_back(static_cast<double>(r.bundles[0].grader->bias[0]) - fresh.grader->bias[0]);
    deltas.push_back(d);
  }
  double norm = 0.0;
  for (std::size_t i = 0; i < deltas[1].size(); ++i) {
    CHECK(deltas[0][i] == 0.0);
    CHECK(deltas[2][i] == doctest::Approx(2.0 * deltas[1][i]).epsilon(1e-3).scale(1e-6));
    norm += std::abs(deltas[1][i]);
  }
  CHECK(norm > 0.0);
}

TEST_CASE("identical config and seed give bitwise identical weights") {
  const auto m = small_manifest(28);
  const auto cfg = tiny_config();
  const auto a = train::train_classification(m, cfg);
  const auto b = train::train_classification(m, cfg);
  CHECK(trainable_values(a.bundles[0]) == trainable_values(b.bundles[0]));
  CHECK(model::encoder_checksum(a.bundles[0].encoder) == model::encoder_checksum(b.bundles[0].encoder));
  CHECK(a.history.averaged == b.history.averaged);
  auto other = cfg;
  other.seeds = {4};
  CHECK(trainable_values(train::train_classification(m, other).bundles[0]) !=
        trainable_values(a.bundles[0]));
}

TEST_CASE("one bundle per seed and averaged curves") {
  const auto m = small_manifest(28);
  auto cfg = tiny_config();
  cfg.seeds = {1, 2, 3};
  const auto r = train::train_classification(m, cfg);
  REQUIRE(r.bundles.size() == 3);
  REQUIRE(r.history.runs.size() == 3);
  for (const auto& [key, curve] : r.history.averaged) {
    REQUIRE(curve.size() == 2);
    for (std::size_t e = 0; e < curve.size(); ++e) {
      double sum = 0.0;
      for (const auto& run : r.history.runs) sum += run.curves.at(key)[e];
      CHECK(curve[e] == doctest::Approx(sum / 3.0));
    }
  }
  CHECK(r.bundles[1].provenance.at("seed") == 2);
  const auto s = r.summary(cfg);
  CHECK(s.at("config_hash") == cfg.hash());
}

TEST_CASE("average_runs rejects mismatched runs") {
  train::RunRecord a{1, {{"val/accuracy", {0.5, 1.0}}}, {1.0, 1.0}};
  train::RunRecord b{2, {{"val/accuracy", {0.0, 0.5}}}, {3.0, 3.0}};
  const auto h = train::average_runs("x", {a, b});
  CHECK(h.final_value("val/accuracy") == doctest::Approx(0.75));
  CHECK(h.averaged_epoch_seconds[0] == doctest::Approx(2.0));
  CHECK_THROWS_AS(h.final_value("val/mse"), Error);
  train::RunRecord c{3, {{"val/accuracy", {0.0}}}, {1.0}};
  CHECK_THROWS_AS(train::average_runs("x", {a, c}), Error);
  CHECK_THROWS_AS(train::average_runs("x", {}), Error);
}

TEST_CASE("history csv has one row per epoch, metric and run") {
  TempDir dir;
  train::RunRecord a{1, {{"val/accuracy", {0.5, 1.0}}}, {1.0, 1.0}};
  const auto h = train::average_runs("x", {a});
  train::write_history_csv(dir.path() / "h.csv", h);
  std::ifstream in(dir.path() / "h.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,split,metric,value,run_seed");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 8);  // (2 metric + 2 seconds) x (run + mean)
}

TEST_CASE("config JSON round trip and validation") {
  TrainConfig c;
  c.epochs = 7;
  c.mtl_lambda = 0.5;
  c.crop = data::CropBox{1, 2, 3, 4};
  TrainConfig d;
  d.apply_json(c.to_json());
  CHECK(d.to_json() == c.to_json());
  CHECK(d.hash() == c.hash());
  d.epochs = 8;
  CHECK(d.hash() != c.hash());
  CHECK_THROWS_AS(d.apply_json({{"epochz", 3}}), Error);
  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = TrainConfig{};
  bad.classes = {ViewClass::A4C, ViewClass::A4C};
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("training rejects manifests that do not fit the class list") {
  auto cfg = tiny_config();
  data::DatasetManifest unsplit = small_manifest(28);
  unsplit.split_assignment.clear();
  CHECK_THROWS_AS(train::train_classification(unsplit, cfg), Error);
  const auto extra = small_manifest(40, {ViewClass::A4C, ViewClass::PL, ViewClass::PSAV, ViewClass::SC,
                                         ViewClass::PSMV});
  CHECK_THROWS_AS(train::train_classification(extra, cfg), Error);
  const auto base = train::train_classification(small_manifest(28), cfg);
  const auto fine = train::fine_tune_new_view(std::span(base.bundles), extra, cfg);
  REQUIRE(fine.bundles.size() == 1);
  CHECK(fine.bundles[0].classes.size() == 5);
  CHECK(fine.bundles[0].classes.back() == ViewClass::PSMV);
  CHECK(fine.bundles[0].grader);
  CHECK(fine.history.averaged.count("val/accuracy") == 1);
  CHECK(fine.history.averaged.count("val/mse") == 1);
}
