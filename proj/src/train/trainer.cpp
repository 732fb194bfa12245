#include "train/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "common/checksum.hpp"
#include "common/error.hpp"
#include "train/batches.hpp"

namespace cactus::train {

using nlohmann::json;
using data::ViewClass;
using model::Activation;
using model::Features;
using model::ModelBundle;

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  require(epochs > 0, "epochs must be positive");
  require(batch_size > 0, "batch_size must be positive");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "learning_rate must be >= 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(mtl_lambda >= 0.0 && std::isfinite(mtl_lambda), "mtl_lambda must be >= 0");
  require(!seeds.empty(), "at least one seed is required");
  require(input_size >= 32, "input_size must be at least 32");
  require(!classes.empty(), "class list is empty");
  for (std::size_t i = 0; i < classes.size(); ++i)
    for (std::size_t j = i + 1; j < classes.size(); ++j)
      require(classes[i] != classes[j], "duplicate class in class list");
}

json TrainConfig::to_json() const {
  json classes_json = json::array();
  for (auto v : classes) classes_json.push_back(std::string(data::to_string(v)));
  json out{{"epochs", epochs},
           {"batch_size", batch_size},
           {"learning_rate", learning_rate},
           {"momentum", momentum},
           {"weight_decay", weight_decay},
           {"mtl_lambda", mtl_lambda},
           {"seeds", seeds},
           {"encoder_frozen", encoder_frozen},
           {"finetune_freeze_encoder", finetune_freeze_encoder},
           {"new_row_init", new_row_init == model::NewRowInit::Zero ? "zero" : "random"},
           {"encoder", model::encoder_spec_to_json(encoder)},
           {"input_size", input_size},
           {"classes", classes_json}};
  if (crop)
    out["crop"] = {{"x", crop->x}, {"y", crop->y}, {"width", crop->width}, {"height", crop->height}};
  else
    out["crop"] = nullptr;
  return out;
}

void TrainConfig::apply_json(const json& in) {
  require(in.is_object(), "training config must be a JSON object");
  for (const auto& [key, value] : in.items()) {
    if (key == "epochs") epochs = value.get<int>();
    else if (key == "batch_size") batch_size = value.get<int>();
    else if (key == "learning_rate") learning_rate = value.get<double>();
    else if (key == "momentum") momentum = value.get<double>();
    else if (key == "weight_decay") weight_decay = value.get<double>();
    else if (key == "mtl_lambda") mtl_lambda = value.get<double>();
    else if (key == "seeds") seeds = value.get<std::vector<std::uint64_t>>();
    else if (key == "encoder_frozen") encoder_frozen = value.get<bool>();
    else if (key == "finetune_freeze_encoder") finetune_freeze_encoder = value.get<bool>();
    else if (key == "new_row_init") {
      const auto text = value.get<std::string>();
      require(text == "zero" || text == "random", "new_row_init must be zero or random");
      new_row_init = text == "zero" ? model::NewRowInit::Zero : model::NewRowInit::Random;
    } else if (key == "encoder") encoder = model::encoder_spec_from_json(value);
    else if (key == "input_size") input_size = value.get<int>();
    else if (key == "crop") {
      if (value.is_null()) crop.reset();
      else crop = data::CropBox{value.at("x").get<int>(), value.at("y").get<int>(),
                                value.at("width").get<int>(), value.at("height").get<int>()};
    } else if (key == "classes") {
      classes.clear();
      for (const auto& v : value) classes.push_back(data::view_from_string(v.get<std::string>()));
    } else {
      fail(ErrorCode::InvalidArgument, "unknown training config key '" + key + "'");
    }
  }
}

std::string TrainConfig::hash() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08x", crc32(to_json().dump()));
  return buf;
}

// ---------------------------------------------------------------------------
// Histories

double RunHistory::final_value(const std::string& key) const {
  const auto it = averaged.find(key);
  if (it == averaged.end() || it->second.empty())
    fail(ErrorCode::InvalidArgument, "history has no curve '" + key + "'");
  return it->second.back();
}

RunHistory average_runs(std::string regime, std::vector<RunRecord> runs) {
  require(!runs.empty(), "cannot average zero runs");
  RunHistory h;
  h.regime = std::move(regime);
  const RunRecord& first = runs.front();
  h.epochs = static_cast<int>(first.epoch_seconds.size());
  for (const auto& [key, curve] : first.curves) {
    std::vector<double> mean(curve.size(), 0.0);
    for (const auto& run : runs) {
      const auto it = run.curves.find(key);
      require(it != run.curves.end() && it->second.size() == curve.size(),
              "runs disagree on curve '" + key + "'");
      for (std::size_t e = 0; e < curve.size(); ++e) mean[e] += it->second[e];
    }
    for (double& v : mean) v /= static_cast<double>(runs.size());
    h.averaged[key] = std::move(mean);
  }
  h.averaged_epoch_seconds.assign(first.epoch_seconds.size(), 0.0);
  for (const auto& run : runs) {
    require(run.epoch_seconds.size() == first.epoch_seconds.size(), "runs disagree on epoch count");
    for (std::size_t e = 0; e < run.epoch_seconds.size(); ++e)
      h.averaged_epoch_seconds[e] += run.epoch_seconds[e] / static_cast<double>(runs.size());
  }
  h.runs = std::move(runs);
  return h;
}

RunHistory multi_run_average(std::string regime, std::span<const std::uint64_t> seeds,
                             const std::function<RunRecord(std::uint64_t)>& run) {
  require(!seeds.empty(), "at least one seed is required");
  std::vector<RunRecord> runs;
  for (auto seed : seeds) {
    runs.push_back(run(seed));
    runs.back().seed = seed;
  }
  return average_runs(std::move(regime), std::move(runs));
}

void write_history_csv(const std::filesystem::path& path, const RunHistory& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << "epoch,split,metric,value,run_seed\n";
  out.precision(10);
  auto emit = [&](const Curves& curves, const std::vector<double>& seconds,
                  const std::string& seed) {
    for (const auto& [key, curve] : curves) {
      const auto slash = key.find('/');
      const std::string split = key.substr(0, slash);
      const std::string metric = key.substr(slash + 1);
      for (std::size_t e = 0; e < curve.size(); ++e)
        out << e + 1 << ',' << split << ',' << metric << ',' << curve[e] << ',' << seed << '\n';
    }
    for (std::size_t e = 0; e < seconds.size(); ++e)
      out << e + 1 << ",train,epoch_seconds," << seconds[e] << ',' << seed << '\n';
  };
  for (const auto& run : history.runs) emit(run.curves, run.epoch_seconds, std::to_string(run.seed));
  emit(history.averaged, history.averaged_epoch_seconds, "mean");
}

json TrainResult::summary(const TrainConfig& config) const {
  json runs = json::array();
  for (const auto& run : history.runs) {
    json final_metrics = json::object();
    for (const auto& [key, curve] : run.curves) final_metrics[key] = curve.back();
    runs.push_back({{"seed", run.seed}, {"final", final_metrics}});
  }
  json mean = json::object();
  for (const auto& [key, curve] : history.averaged) mean[key] = curve.back();
  double seconds = 0.0;
  for (const auto& run : history.runs)
    seconds = std::accumulate(run.epoch_seconds.begin(), run.epoch_seconds.end(), seconds);
  return {{"regime", history.regime},
          {"epochs", history.epochs},
          {"runs", runs},
          {"final_mean", mean},
          {"train_seconds", seconds},
          {"config", config.to_json()},
          {"config_hash", config.hash()}};
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

using clock_type = std::chrono::steady_clock;

/// Plain SGD with optional momentum and L2 weight decay.
class Sgd {
 public:
  explicit Sgd(const TrainConfig& c) : lr_(c.learning_rate), momentum_(c.momentum), decay_(c.weight_decay) {}

  void step(std::vector<float>& w, std::vector<float>& g, std::size_t slot) {
    if (momentum_ > 0.0) {
      if (velocity_.size() <= slot) velocity_.resize(slot + 1);
      auto& v = velocity_[slot];
      if (v.empty()) v.assign(w.size(), 0.0f);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const float grad = g[i] + static_cast<float>(decay_) * w[i];
        v[i] = static_cast<float>(momentum_) * v[i] + grad;
        w[i] -= static_cast<float>(lr_) * v[i];
      }
    } else {
      for (std::size_t i = 0; i < w.size(); ++i)
        w[i] -= static_cast<float>(lr_) * (g[i] + static_cast<float>(decay_) * w[i]);
    }
    std::fill(g.begin(), g.end(), 0.0f);
  }

 private:
  double lr_, momentum_, decay_;
  std::vector<std::vector<float>> velocity_;
};

struct Task {
  bool classify = false;
  bool grade = false;
  double grade_weight = 1.0;
  bool freeze_encoder = false;
};

struct Labels {
  std::vector<int> classes;
  std::vector<float> grades;
};

Labels labels_for(const PreparedSplit& split, const ModelBundle& bundle, bool need_classes) {
  Labels l;
  for (std::size_t r = 0; r < split.size(); ++r) {
    const auto& s = split.sample(r);
    if (need_classes) {
      const int k = bundle.class_index(s.view);
      if (k < 0)
        fail(ErrorCode::InvalidArgument, "sample " + s.id + " has view " +
                                             std::string(data::to_string(s.view)) +
                                             " which is not in the class list");
      l.classes.push_back(k);
    }
    l.grades.push_back(static_cast<float>(s.grade.value()));
  }
  return l;
}

Features<float> gather_columns(const Features<float>& all, std::span<const std::size_t> rows) {
  Features<float> out;
  out.dim = all.dim;
  out.batch = static_cast<int>(rows.size());
  out.data.resize(static_cast<std::size_t>(out.dim) * out.batch);
  for (int d = 0; d < out.dim; ++d)
    for (int n = 0; n < out.batch; ++n)
      out.at(d, n) = all.at(d, static_cast<int>(rows[static_cast<std::size_t>(n)]));
  return out;
}

Features<float> eval_features(const ModelBundle& bundle, const PreparedSplit& split, int batch) {
  Features<float> all;
  all.dim = bundle.feature_dim();
  all.batch = static_cast<int>(split.size());
  all.data.resize(static_cast<std::size_t>(all.dim) * all.batch);
  for (std::size_t begin = 0; begin < split.size(); begin += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(split.size(), begin + static_cast<std::size_t>(batch));
    const Features<float> f = model::forward_features(bundle, split.range(begin, end));
    for (int d = 0; d < all.dim; ++d)
      for (int n = 0; n < f.batch; ++n) all.at(d, static_cast<int>(begin) + n) = f.at(d, n);
  }
  return all;
}

struct Totals {
  double cce = 0.0, mse = 0.0, correct = 0.0, count = 0.0;

  void add_classes(const Features<float>& logits, std::span<const int> labels, double loss) {
    cce += loss * logits.batch;
    for (int n = 0; n < logits.batch; ++n) {
      int best = 0;
      for (int k = 1; k < logits.dim; ++k)
        if (logits.at(k, n) > logits.at(best, n)) best = k;
      if (best == labels[static_cast<std::size_t>(n)]) correct += 1.0;
    }
  }
  void write(Curves& curves, std::map<std::string, double>& out, const std::string& split,
             const Task& task) const {
    if (task.classify) {
      curves[split + "/accuracy"].push_back(correct / count);
      curves[split + "/cce"].push_back(cce / count);
      out[split + "/accuracy"] = correct / count;
      out[split + "/cce"] = cce / count;
    }
    if (task.grade) {
      curves[split + "/mse"].push_back(mse / count);
      out[split + "/mse"] = mse / count;
    }
  }
};

template <typename T>
std::vector<T> pick(const std::vector<T>& values, std::span<const std::size_t> rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(values[r]);
  return out;
}

Totals evaluate_split(const ModelBundle& bundle, const Task& task, const Features<float>* cached,
                      const PreparedSplit& split, const Labels& labels, int batch) {
  Totals t;
  for (std::size_t begin = 0; begin < split.size(); begin += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(split.size(), begin + static_cast<std::size_t>(batch));
    std::vector<std::size_t> rows(end - begin);
    std::iota(rows.begin(), rows.end(), begin);
    const Features<float> f =
        cached ? gather_columns(*cached, rows) : model::forward_features(bundle, split.range(begin, end));
    if (task.classify) {
      const auto y = pick(labels.classes, rows);
      const Features<float> logits = bundle.classifier->forward(f);
      t.add_classes(logits, y, model::cross_entropy(logits, std::span<const int>(y), nullptr));
    }
    if (task.grade) {
      const auto g = pick(labels.grades, rows);
      t.mse += model::mean_squared_error(bundle.grader->forward(f), std::span<const float>(g), nullptr) *
               static_cast<double>(rows.size());
    }
    t.count += static_cast<double>(rows.size());
  }
  return t;
}

RunRecord fit(ModelBundle& bundle, const Task& task, const PreparedSplit& train,
              const PreparedSplit& val, const TrainConfig& config, std::uint64_t seed,
              const std::string& regime, const ProgressFn& progress) {
  require(train.size() > 0, "TRAIN split is empty");
  require(val.size() > 0, "VAL split is empty");
  if (task.classify && !bundle.classifier) fail(ErrorCode::State, "bundle has no classification head");
  if (task.grade && !bundle.grader) fail(ErrorCode::State, "bundle has no grading head");
  const Labels train_labels = labels_for(train, bundle, task.classify);
  const Labels val_labels = labels_for(val, bundle, task.classify);

  // A frozen encoder in eval mode is a fixed function, so its features are
  // computed once per split.
  std::optional<Features<float>> train_cached, val_cached;
  if (task.freeze_encoder) {
    train_cached = eval_features(bundle, train, config.batch_size);
    val_cached = eval_features(bundle, val, config.batch_size);
  }

  Sgd sgd(config);
  std::mt19937_64 rng(seed ^ 0x5348554646ULL);
  std::vector<std::size_t> order(train.size());
  RunRecord record;
  record.seed = seed;
  model::Encoder<float>::Cache cache;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = clock_type::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    Totals totals;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      Activation<float> x;
      Features<float> features;
      if (train_cached) {
        features = gather_columns(*train_cached, rows);
      } else {
        x = train.batch(rows);
        features = bundle.encoder.forward_train(x, cache);
      }
      Features<float> dfeatures;
      dfeatures.dim = features.dim;
      dfeatures.batch = features.batch;
      dfeatures.data.assign(features.data.size(), 0.0f);
      Features<float> dpart;
      Features<float>* dpart_ptr = task.freeze_encoder ? nullptr : &dpart;
      if (task.classify) {
        const auto y = pick(train_labels.classes, rows);
        const Features<float> logits = bundle.classifier->forward(features);
        Features<float> dlogits;
        const double loss = model::cross_entropy(logits, std::span<const int>(y), &dlogits);
        totals.add_classes(logits, y, loss);
        bundle.classifier->backward(features, dlogits, dpart_ptr);
        if (dpart_ptr)
          for (std::size_t i = 0; i < dpart.data.size(); ++i) dfeatures.data[i] += dpart.data[i];
      }
      if (task.grade) {
        const auto g = pick(train_labels.grades, rows);
        const Features<float> pred = bundle.grader->forward(features);
        Features<float> dpred;
        totals.mse += model::mean_squared_error(pred, std::span<const float>(g), &dpred) *
                      static_cast<double>(rows.size());
        for (float& v : dpred.data) v *= static_cast<float>(task.grade_weight);
        bundle.grader->backward(features, dpred, dpart_ptr);
        if (dpart_ptr)
          for (std::size_t i = 0; i < dpart.data.size(); ++i) dfeatures.data[i] += dpart.data[i];
      }
      totals.count += static_cast<double>(rows.size());

      std::size_t slot = 0;
      if (!task.freeze_encoder) {
        bundle.encoder.backward(cache, dfeatures);
        for (auto& p : bundle.encoder.params())
          if (p.trainable) sgd.step(p.value, p.grad, slot++);
      }
      if (task.classify) {
        sgd.step(bundle.classifier->weight, bundle.classifier->weight_grad, 1000);
        sgd.step(bundle.classifier->bias, bundle.classifier->bias_grad, 1001);
      }
      if (task.grade) {
        sgd.step(bundle.grader->weight, bundle.grader->weight_grad, 1002);
        sgd.step(bundle.grader->bias, bundle.grader->bias_grad, 1003);
      }
    }

    EpochReport report{regime, seed, epoch, {}, 0.0};
    totals.write(record.curves, report.metrics, "train", task);
    const Totals val_totals = evaluate_split(bundle, task, val_cached ? &*val_cached : nullptr, val,
                                             val_labels, config.batch_size);
    val_totals.write(record.curves, report.metrics, "val", task);
    report.seconds = std::chrono::duration<double>(clock_type::now() - start).count();
    record.epoch_seconds.push_back(report.seconds);
    if (progress) progress(report);
  }
  return record;
}

data::PreprocessSpec preprocess_for(const data::DatasetManifest& manifest, const TrainConfig& config) {
  data::PreprocessSpec spec;
  spec.crop = config.crop;
  spec.target_size = config.input_size;
  spec.normalization = manifest.normalization;
  return spec;
}

void require_split(const data::DatasetManifest& manifest) {
  if (!manifest.is_split()) fail(ErrorCode::State, "manifest has no split assignment; run split first");
}

void check_class_coverage(const data::DatasetManifest& manifest, const std::vector<ViewClass>& classes) {
  std::array<int, data::kNumViews> train_counts{};
  for (std::size_t i : manifest.indices(data::Split::Train))
    ++train_counts[static_cast<std::size_t>(data::index_of(manifest.samples[i].view))];
  for (const auto& s : manifest.samples)
    if (std::find(classes.begin(), classes.end(), s.view) == classes.end())
      fail(ErrorCode::InvalidArgument, "manifest contains view " + std::string(data::to_string(s.view)) +
                                           " which is not in the " + std::to_string(classes.size()) +
                                           "-class list");
  for (auto v : classes)
    if (train_counts[static_cast<std::size_t>(data::index_of(v))] == 0)
      fail(ErrorCode::InvalidArgument,
           "class " + std::string(data::to_string(v)) + " has no TRAIN samples");
}

void stamp(ModelBundle& bundle, const std::string& regime, const TrainConfig& config,
           std::uint64_t seed) {
  json entry{{"regime", regime}, {"config_hash", config.hash()}, {"seed", seed},
             {"epochs", config.epochs}};
  if (!bundle.provenance.contains("history")) bundle.provenance["history"] = json::array();
  bundle.provenance["history"].push_back(entry);
  bundle.provenance["config_hash"] = config.hash();
  bundle.provenance["seed"] = seed;
  bundle.provenance["epoch"] = config.epochs;
}

const ModelBundle& pair_bundle(std::span<const ModelBundle> bundles, std::size_t i) {
  return bundles.size() == 1 ? bundles[0] : bundles[i];
}

}  // namespace

TrainResult train_classification(const data::DatasetManifest& manifest, const TrainConfig& config,
                                 const ProgressFn& progress) {
  config.validate();
  require_split(manifest);
  check_class_coverage(manifest, config.classes);
  const auto spec = preprocess_for(manifest, config);
  const PreparedSplit train(manifest, manifest.indices(data::Split::Train), spec);
  const PreparedSplit val(manifest, manifest.indices(data::Split::Val), spec);
  TrainResult result;
  std::vector<RunRecord> runs;
  for (auto seed : config.seeds) {
    ModelBundle bundle = model::make_bundle(config.encoder, config.classes, false, seed);
    bundle.preprocess = spec;
    runs.push_back(fit(bundle, {true, false, 1.0, false}, train, val, config, seed,
                       "classification", progress));
    stamp(bundle, "classification", config, seed);
    result.bundles.push_back(std::move(bundle));
  }
  result.history = average_runs("classification", std::move(runs));
  return result;
}

TrainResult transfer_grading(std::span<const ModelBundle> bundles,
                             const data::DatasetManifest& manifest, const TrainConfig& config,
                             const ProgressFn& progress) {
  config.validate();
  require(config.encoder_frozen, "transfer grading requires encoder_frozen = true");
  require(!bundles.empty(), "transfer grading needs a trained bundle");
  require(bundles.size() == 1 || bundles.size() == config.seeds.size(),
          "pass one bundle or one bundle per seed");
  require_split(manifest);
  TrainResult result;
  std::vector<RunRecord> runs;
  for (std::size_t i = 0; i < config.seeds.size(); ++i) {
    const auto seed = config.seeds[i];
    ModelBundle bundle = pair_bundle(bundles, i);
    bundle.grader.emplace(bundle.feature_dim(), 1);
    bundle.grader->initialize(seed ^ 0x67726164ULL);
    const PreparedSplit train(manifest, manifest.indices(data::Split::Train), bundle.preprocess);
    const PreparedSplit val(manifest, manifest.indices(data::Split::Val), bundle.preprocess);
    runs.push_back(fit(bundle, {false, true, 1.0, true}, train, val, config, seed,
                       "transfer", progress));
    stamp(bundle, "transfer", config, seed);
    result.bundles.push_back(std::move(bundle));
  }
  result.history = average_runs("transfer", std::move(runs));
  return result;
}

TrainResult train_mtl(const data::DatasetManifest& manifest, const TrainConfig& config,
                      const ProgressFn& progress) {
  config.validate();
  require_split(manifest);
  check_class_coverage(manifest, config.classes);
  const auto spec = preprocess_for(manifest, config);
  const PreparedSplit train(manifest, manifest.indices(data::Split::Train), spec);
  const PreparedSplit val(manifest, manifest.indices(data::Split::Val), spec);
  TrainResult result;
  std::vector<RunRecord> runs;
  for (auto seed : config.seeds) {
    ModelBundle bundle = model::make_bundle(config.encoder, config.classes, true, seed);
    bundle.preprocess = spec;
    runs.push_back(fit(bundle, {true, true, config.mtl_lambda, false}, train, val, config, seed,
                       "mtl", progress));
    stamp(bundle, "mtl", config, seed);
    result.bundles.push_back(std::move(bundle));
  }
  result.history = average_runs("mtl", std::move(runs));
  return result;
}

TrainResult fine_tune_new_view(std::span<const ModelBundle> bundles,
                               const data::DatasetManifest& manifest, const TrainConfig& config,
                               ViewClass new_view, const ProgressFn& progress) {
  config.validate();
  require(!bundles.empty(), "fine-tuning needs a trained bundle");
  require(bundles.size() == 1 || bundles.size() == config.seeds.size(),
          "pass one bundle or one bundle per seed");
  require_split(manifest);
  const bool present = std::any_of(manifest.samples.begin(), manifest.samples.end(),
                                   [&](const auto& s) { return s.view == new_view; });
  if (!present)
    fail(ErrorCode::InvalidArgument,
         std::string(data::to_string(new_view)) + " is absent from the manifest");

  TrainResult result;
  std::vector<RunRecord> runs;
  for (std::size_t i = 0; i < config.seeds.size(); ++i) {
    const auto seed = config.seeds[i];
    ModelBundle bundle = model::expand_classification_head(pair_bundle(bundles, i), new_view,
                                                           config.new_row_init, seed ^ 0x6e6577ULL);
    bundle.grader.reset();
    check_class_coverage(manifest, bundle.classes);
    const PreparedSplit train(manifest, manifest.indices(data::Split::Train), bundle.preprocess);
    const PreparedSplit val(manifest, manifest.indices(data::Split::Val), bundle.preprocess);
    RunRecord cls = fit(bundle, {true, false, 1.0, config.finetune_freeze_encoder}, train, val,
                        config, seed, "finetune", progress);
    stamp(bundle, "finetune", config, seed);

    bundle.grader.emplace(bundle.feature_dim(), 1);
    bundle.grader->initialize(seed ^ 0x67726164ULL);
    RunRecord grading = fit(bundle, {false, true, 1.0, true}, train, val, config, seed,
                            "finetune-transfer", progress);
    stamp(bundle, "transfer", config, seed);
    for (auto& [key, curve] : grading.curves) cls.curves[key] = std::move(curve);
    for (std::size_t e = 0; e < cls.epoch_seconds.size(); ++e)
      cls.epoch_seconds[e] += grading.epoch_seconds[e];
    runs.push_back(std::move(cls));
    result.bundles.push_back(std::move(bundle));
  }
  result.history = average_runs("finetune", std::move(runs));
  return result;
}

}  // namespace cactus::train
