#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "data/manifest.hpp"
#include "json.hpp"
#include "model/bundle.hpp"

namespace cactus::train {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double momentum = 0.0;
  double weight_decay = 0.0;
  double mtl_lambda = 1.0;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  bool encoder_frozen = false;
  /// Keeps the encoder frozen while fine-tuning the expanded classifier.
  bool finetune_freeze_encoder = false;
  model::NewRowInit new_row_init = model::NewRowInit::Zero;
  model::EncoderSpec encoder;
  int input_size = 224;
  std::optional<data::CropBox> crop;
  std::vector<data::ViewClass> classes = data::default_initial_classes();

  void validate() const;
  nlohmann::json to_json() const;
  /// Overrides the fields present in `in`; unknown keys are an error.
  void apply_json(const nlohmann::json& in);
  /// Hex CRC-32 of the canonical JSON form.
  std::string hash() const;
};

/// Metric curves keyed "<split>/<metric>", e.g. "val/accuracy".
using Curves = std::map<std::string, std::vector<double>>;

struct RunRecord {
  std::uint64_t seed = 0;
  Curves curves;
  std::vector<double> epoch_seconds;
};

struct RunHistory {
  std::string regime;
  int epochs = 0;
  std::vector<RunRecord> runs;
  Curves averaged;
  std::vector<double> averaged_epoch_seconds;

  /// Last averaged value of `key`; throws when absent.
  double final_value(const std::string& key) const;
};

/// Arithmetic mean over runs of every curve (all runs must share keys and
/// lengths).
RunHistory average_runs(std::string regime, std::vector<RunRecord> runs);

RunHistory multi_run_average(std::string regime, std::span<const std::uint64_t> seeds,
                             const std::function<RunRecord(std::uint64_t)>& run);

/// Rows `epoch,split,metric,value,run_seed`; averaged rows use run_seed "mean".
void write_history_csv(const std::filesystem::path& path, const RunHistory& history);

struct EpochReport {
  std::string regime;
  std::uint64_t seed = 0;
  int epoch = 0;  // 1-based
  std::map<std::string, double> metrics;
  double seconds = 0.0;
};
using ProgressFn = std::function<void(const EpochReport&)>;

struct TrainResult {
  std::vector<model::ModelBundle> bundles;  // one per seed, in history.runs order
  RunHistory history;

  /// Final metrics per run and averaged, plus the config and its hash.
  nlohmann::json summary(const TrainConfig& config) const;
};

/// Classification on the config's class list (encoder + classifier, CCE).
/// Every sample view must be in the class list and every class must occur in
/// TRAIN.
TrainResult train_classification(const data::DatasetManifest& manifest, const TrainConfig& config,
                                 const ProgressFn& progress = {});

/// Fresh grading head on a frozen encoder (MSE on the raw output). A single
/// bundle is reused for every seed; otherwise bundles pair with seeds.
TrainResult transfer_grading(std::span<const model::ModelBundle> bundles,
                             const data::DatasetManifest& manifest, const TrainConfig& config,
                             const ProgressFn& progress = {});

/// Joint training of encoder and both heads on CCE + lambda * MSE.
TrainResult train_mtl(const data::DatasetManifest& manifest, const TrainConfig& config,
                      const ProgressFn& progress = {});

/// Adds `new_view` to each bundle's classifier, fine-tunes on the expanded
/// class list, then reapplies transfer grading with the encoder frozen.
TrainResult fine_tune_new_view(std::span<const model::ModelBundle> bundles,
                               const data::DatasetManifest& manifest, const TrainConfig& config,
                               data::ViewClass new_view = data::ViewClass::PSMV,
                               const ProgressFn& progress = {});

}  // namespace cactus::train
