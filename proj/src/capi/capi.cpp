#include "cactus/cactus.h"

#include <cctype>
#include <cstring>
#include <fstream>
#include <memory>
#include <new>
#include <sstream>
#include <string>
#include <vector>

#include "common/error.hpp"
#include "data/manifest.hpp"
#include "eval/evaluate.hpp"
#include "explain/saliency.hpp"
#include "json.hpp"
#include "model/accounting.hpp"
#include "model/bundle.hpp"
#include "serve/server.hpp"
#include "serve/session.hpp"
#include "synth/phantom.hpp"
#include "train/trainer.hpp"

using nlohmann::json;
using namespace cactus;

struct cactus_dataset {
  data::DatasetManifest manifest;
};

struct cactus_bundle {
  std::shared_ptr<const model::ModelBundle> bundle;
};

struct cactus_run {
  train::TrainResult result;
  train::TrainConfig config;
};

struct cactus_server {
  std::shared_ptr<serve::ScanSession> session;
  std::unique_ptr<serve::ScanServer> server;
};

namespace {

thread_local std::string last_error;

template <typename Fn>
cactus_status guarded(Fn&& fn) {
  try {
    last_error.clear();
    fn();
    return CACTUS_OK;
  } catch (const Error& e) {
    last_error = e.what();
    return static_cast<cactus_status>(e.code());
  } catch (const json::exception& e) {
    last_error = e.what();
    return CACTUS_ERR_INVALID_ARGUMENT;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return CACTUS_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return CACTUS_ERR_INTERNAL;
  }
}

char* duplicate(const std::string& text) {
  char* out = static_cast<char*>(std::malloc(text.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, text.c_str(), text.size() + 1);
  return out;
}

void need(const void* p, const char* what) {
  if (!p) fail(ErrorCode::InvalidArgument, std::string(what) + " must not be NULL");
}

json parse_options(const char* text) {
  if (!text || !*text) return json::object();
  json out = json::parse(text);
  require(out.is_object(), "options must be a JSON object");
  return out;
}

void check_keys(const json& options, std::initializer_list<const char*> known) {
  for (const auto& [key, value] : options.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) fail(ErrorCode::InvalidArgument, "unknown option '" + key + "'");
  }
}

std::vector<data::ViewClass> views_of(const json& list) {
  std::vector<data::ViewClass> out;
  for (const auto& v : list) out.push_back(data::view_from_string(v.get<std::string>()));
  return out;
}

model::Components components_of(const char* text) {
  model::Components c;
  if (!text || !*text) return c;
  for (const auto& v : json::parse(text)) {
    const auto name = v.get<std::string>();
    if (name == "encoder") c.encoder = true;
    else if (name == "classifier") c.classifier = true;
    else if (name == "grader") c.grader = true;
    else fail(ErrorCode::InvalidArgument, "unknown component '" + name + "'");
  }
  return c;
}

train::TrainConfig config_of(const char* text) {
  train::TrainConfig config;
  if (text && *text) config.apply_json(json::parse(text));
  config.validate();
  return config;
}

train::ProgressFn progress_of(cactus_progress_fn fn, void* user) {
  if (!fn) return {};
  return [fn, user](const train::EpochReport& r) {
    const json j{{"regime", r.regime},
                 {"seed", r.seed},
                 {"epoch", r.epoch},
                 {"seconds", r.seconds},
                 {"metrics", r.metrics}};
    fn(j.dump().c_str(), user);
  };
}

std::vector<model::ModelBundle> copy_bundles(const cactus_bundle* const* bundles, size_t n) {
  require(bundles != nullptr && n > 0, "at least one bundle is required");
  std::vector<model::ModelBundle> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    need(bundles[i], "bundle");
    out.push_back(*bundles[i]->bundle);
  }
  return out;
}

json statistics_json(const data::DatasetStatistics& s, bool split) {
  json per_class = json::object();
  for (auto v : data::kAllViews) {
    const auto i = static_cast<std::size_t>(data::index_of(v));
    json entry{{"count", s.class_counts[i]}, {"grade_histogram", s.grade_histogram[i]}};
    if (split)
      entry["split"] = {{"train", s.split_counts[i][0]},
                        {"val", s.split_counts[i][1]},
                        {"test", s.split_counts[i][2]}};
    per_class[std::string(data::to_string(v))] = entry;
  }
  return {{"total", s.total}, {"classes", per_class}};
}

serve::SessionConfig session_config_of(const json& o) {
  serve::SessionConfig c;
  if (o.contains("target_view") && !o.at("target_view").is_null())
    c.target_view = data::view_from_string(o.at("target_view").get<std::string>());
  c.grade_threshold = o.value("threshold", c.grade_threshold);
  c.queue_capacity = o.value("queue_capacity", c.queue_capacity);
  c.trend_window = o.value("trend_window", c.trend_window);
  c.frame_ring = o.value("frame_ring", c.frame_ring);
  c.stats_every = o.value("stats_every", c.stats_every);
  c.validate();
  return c;
}

constexpr std::initializer_list<const char*> kSessionKeys = {
    "target_view", "threshold", "queue_capacity", "trend_window", "frame_ring",
    "stats_every", "fps",       "loop",           "host",         "port"};

}  // namespace

extern "C" {

const char* cactus_version(void) {
  return "0.1.0";
}

const char* cactus_last_error(void) {
  return last_error.c_str();
}

const char* cactus_status_name(cactus_status status) {
  switch (status) {
    case CACTUS_OK: return "ok";
    case CACTUS_ERR_INVALID_ARGUMENT: return "invalid argument";
    case CACTUS_ERR_IO: return "i/o error";
    case CACTUS_ERR_FORMAT: return "format error";
    case CACTUS_ERR_CHECKSUM: return "checksum mismatch";
    case CACTUS_ERR_VERSION: return "unsupported version";
    case CACTUS_ERR_STATE: return "invalid state";
    case CACTUS_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void cactus_string_free(char* text) {
  std::free(text);
}

// ---- datasets ---------------------------------------------------------------

cactus_status cactus_dataset_ingest(const char* root, const char* layout, cactus_dataset** out,
                                    char** warnings_json) {
  return guarded([&] {
    need(root, "root");
    need(out, "out");
    std::vector<std::string> warnings;
    auto ds = std::make_unique<cactus_dataset>();
    ds->manifest = data::ingest_directory(
        root, data::ingest_layout_from_string(layout ? layout : "class-folders"), &warnings);
    if (warnings_json) *warnings_json = duplicate(json(warnings).dump());
    *out = ds.release();
  });
}

cactus_status cactus_dataset_synthesize(const char* options_json, const char* dir,
                                        cactus_dataset** out) {
  return guarded([&] {
    need(dir, "dir");
    need(out, "out");
    const json o = parse_options(options_json);
    check_keys(o, {"n_per_class", "grade_spread", "seed", "size", "speckle_sigma", "speckle_grain",
                   "occlusion_fraction", "max_gain_shift", "views"});
    synth::GenerateOptions g;
    g.n_per_class = o.value("n_per_class", g.n_per_class);
    g.grade_spread = o.value("grade_spread", g.grade_spread);
    g.seed = o.value("seed", g.seed);
    g.size = o.value("size", g.size);
    g.speckle_sigma = o.value("speckle_sigma", g.speckle_sigma);
    g.speckle_grain = o.value("speckle_grain", g.speckle_grain);
    g.occlusion_fraction = o.value("occlusion_fraction", g.occlusion_fraction);
    g.max_gain_shift = o.value("max_gain_shift", g.max_gain_shift);
    if (o.contains("views")) g.views = views_of(o.at("views"));
    const auto dataset = synth::generate_dataset(g);
    auto ds = std::make_unique<cactus_dataset>();
    ds->manifest = synth::write_dataset(dataset, dir);
    *out = ds.release();
  });
}

cactus_status cactus_dataset_load(const char* manifest_path, cactus_dataset** out) {
  return guarded([&] {
    need(manifest_path, "manifest_path");
    need(out, "out");
    auto ds = std::make_unique<cactus_dataset>();
    ds->manifest = data::read_manifest(manifest_path);
    *out = ds.release();
  });
}

cactus_status cactus_dataset_save(const cactus_dataset* dataset, const char* manifest_path) {
  return guarded([&] {
    need(dataset, "dataset");
    need(manifest_path, "manifest_path");
    data::write_manifest(manifest_path, dataset->manifest);
  });
}

cactus_status cactus_dataset_split(cactus_dataset* dataset, uint64_t seed,
                                   const char* preprocess_json) {
  return guarded([&] {
    need(dataset, "dataset");
    std::optional<data::PreprocessSpec> spec;
    if (preprocess_json && *preprocess_json)
      spec = model::preprocess_from_json(json::parse(preprocess_json));
    dataset->manifest = data::stratified_split(std::move(dataset->manifest), seed, spec);
  });
}

cactus_status cactus_dataset_select(const cactus_dataset* dataset, const char* views_json,
                                    cactus_dataset** out) {
  return guarded([&] {
    need(dataset, "dataset");
    need(views_json, "views_json");
    need(out, "out");
    auto ds = std::make_unique<cactus_dataset>();
    ds->manifest = data::select_views(dataset->manifest, views_of(json::parse(views_json)));
    *out = ds.release();
  });
}

cactus_status cactus_dataset_statistics(const cactus_dataset* dataset, char** stats_json) {
  return guarded([&] {
    need(dataset, "dataset");
    need(stats_json, "stats_json");
    const auto s = data::dataset_statistics(dataset->manifest);
    *stats_json = duplicate(statistics_json(s, dataset->manifest.is_split()).dump());
  });
}

void cactus_dataset_free(cactus_dataset* dataset) {
  delete dataset;
}

// ---- bundles ------------------------------------------------------------------

cactus_status cactus_bundle_create(const char* options_json, cactus_bundle** out) {
  return guarded([&] {
    need(out, "out");
    const json o = parse_options(options_json);
    check_keys(o, {"classes", "grader", "seed", "encoder", "input_size"});
    model::EncoderSpec spec;
    if (o.contains("encoder")) spec = model::encoder_spec_from_json(o.at("encoder"));
    auto classes = o.contains("classes") ? views_of(o.at("classes")) : data::default_initial_classes();
    auto b = model::make_bundle(spec, std::move(classes), o.value("grader", true),
                                o.value("seed", std::uint64_t{0}));
    b.preprocess.target_size = o.value("input_size", b.preprocess.target_size);
    *out = new cactus_bundle{std::make_shared<const model::ModelBundle>(std::move(b))};
  });
}

cactus_status cactus_bundle_load(const char* path, cactus_bundle** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new cactus_bundle{std::make_shared<const model::ModelBundle>(model::load_bundle(path))};
  });
}

cactus_status cactus_bundle_save(const cactus_bundle* bundle, const char* path) {
  return guarded([&] {
    need(bundle, "bundle");
    need(path, "path");
    model::save_bundle(*bundle->bundle, path);
  });
}

cactus_status cactus_bundle_info(const cactus_bundle* bundle, char** info_json) {
  return guarded([&] {
    need(bundle, "bundle");
    need(info_json, "info_json");
    *info_json = duplicate(model::bundle_info(*bundle->bundle).dump());
  });
}

cactus_status cactus_bundle_param_count(const cactus_bundle* bundle, const char* include_json,
                                        const char* frozen_json, uint64_t* count) {
  return guarded([&] {
    need(bundle, "bundle");
    need(count, "count");
    *count = model::count_trainable_params(*bundle->bundle, components_of(include_json),
                                           components_of(frozen_json));
  });
}

cactus_status cactus_bundle_predict_png(const cactus_bundle* bundle, const char* png_path,
                                        char** result_json) {
  return guarded([&] {
    need(bundle, "bundle");
    need(png_path, "png_path");
    need(result_json, "result_json");
    const auto& b = *bundle->bundle;
    const auto image = data::read_png_gray(png_path);
    const data::GrayImage* frame = &image;
    const auto input = model::preprocess_batch(std::span(&frame, 1), b.preprocess);
    json result = json::object();
    const auto features = model::forward_features(b, input);
    if (b.classifier) {
      const auto cls = model::apply_classifier(b, features);
      json probabilities = json::object();
      for (std::size_t k = 0; k < b.classes.size(); ++k)
        probabilities[std::string(data::to_string(b.classes[k]))] =
            cls.probabilities.at(static_cast<int>(k), 0);
      result["view"] = data::to_string(b.classes[static_cast<std::size_t>(cls.predicted[0])]);
      result["probabilities"] = probabilities;
    }
    if (b.grader) {
      const auto g = model::apply_grader(b, features);
      result["grade_raw"] = g.raw[0];
      result["grade"] = g.reported[0];
      const auto band = data::grade_band(g.reported[0]);
      result["grade_band"] = band.index;
      result["grade_description"] = std::string(band.description);
    }
    *result_json = duplicate(result.dump());
  });
}

cactus_status cactus_bundle_evaluate(const cactus_bundle* bundle, const cactus_dataset* dataset,
                                     const char* split, const char* confusion_png,
                                     char** report_json) {
  return guarded([&] {
    need(bundle, "bundle");
    need(dataset, "dataset");
    need(report_json, "report_json");
    std::string name = split ? split : "TEST";
    for (auto& ch : name) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (name != "TRAIN" && name != "VAL" && name != "TEST")
      fail(ErrorCode::InvalidArgument, "split must be train, val or test");
    const auto s = data::split_from_string(name);
    const auto evaluation = eval::evaluate_bundle(*bundle->bundle, dataset->manifest, s);
    if (confusion_png && *confusion_png && evaluation.classification)
      data::write_png(confusion_png, eval::render_confusion(evaluation.classification->confusion));
    *report_json = duplicate(eval::to_json(evaluation).dump());
  });
}

cactus_status cactus_bundle_explain(const cactus_bundle* bundle, const char* png_path,
                                    const char* options_json, char** result_json) {
  return guarded([&] {
    need(bundle, "bundle");
    need(png_path, "png_path");
    const json o = parse_options(options_json);
    check_keys(o, {"target", "method", "alpha", "overlay_png", "grid_path"});
    const auto& b = *bundle->bundle;
    const auto image = data::read_png_gray(png_path);
    const data::GrayImage* frame = &image;
    const auto input = model::preprocess_batch(std::span(&frame, 1), b.preprocess);

    explain::Target target;
    const std::string target_name =
        o.contains("target") && !o.at("target").is_null() ? o.at("target").get<std::string>() : "";
    if (target_name == "grade") {
      if (!b.grader) fail(ErrorCode::State, "bundle has no grading head");
      target = explain::Target::grade_output();
    } else {
      if (!b.classifier) fail(ErrorCode::State, "bundle has no classification head");
      const int index = target_name.empty()
                            ? model::classify(b, input).predicted[0]
                            : b.class_index(data::view_from_string(target_name));
      target = explain::Target::class_logit(index);
    }
    const auto method = explain::method_from_string(o.value("method", std::string("gradcam++")));
    const auto map = explain::compute_saliency(b, input, target, method);
    const double alpha = o.value("alpha", 0.5);
    if (o.contains("overlay_png"))
      data::write_png(o.at("overlay_png").get<std::string>(), explain::overlay(image, map, alpha));
    if (o.contains("grid_path"))
      explain::write_float_grid(o.at("grid_path").get<std::string>(), map.width, map.height,
                                map.values);
    float max_value = 0.0f;
    for (float v : map.values) max_value = std::max(max_value, v);
    json result{{"method", explain::to_string(method)},
                {"target", target.grade ? json("grade")
                                        : json(data::to_string(
                                              b.classes[static_cast<std::size_t>(target.class_index)]))},
                {"width", map.width},
                {"height", map.height},
                {"coarse_width", map.coarse_width},
                {"coarse_height", map.coarse_height},
                {"max", max_value}};
    if (result_json) *result_json = duplicate(result.dump());
  });
}

void cactus_bundle_free(cactus_bundle* bundle) {
  delete bundle;
}

// ---- training -----------------------------------------------------------------

cactus_status cactus_train_classification(const cactus_dataset* dataset, const char* config_json,
                                          cactus_progress_fn progress, void* user,
                                          cactus_run** out) {
  return guarded([&] {
    need(dataset, "dataset");
    need(out, "out");
    auto run = std::make_unique<cactus_run>();
    run->config = config_of(config_json);
    run->result = train::train_classification(dataset->manifest, run->config,
                                              progress_of(progress, user));
    *out = run.release();
  });
}

cactus_status cactus_transfer_grading(const cactus_bundle* const* bundles, size_t n_bundles,
                                      const cactus_dataset* dataset, const char* config_json,
                                      cactus_progress_fn progress, void* user, cactus_run** out) {
  return guarded([&] {
    need(dataset, "dataset");
    need(out, "out");
    auto run = std::make_unique<cactus_run>();
    run->config = config_of(config_json);
    run->config.encoder_frozen = true;
    const auto inputs = copy_bundles(bundles, n_bundles);
    run->result = train::transfer_grading(inputs, dataset->manifest, run->config,
                                          progress_of(progress, user));
    *out = run.release();
  });
}

cactus_status cactus_train_mtl(const cactus_dataset* dataset, const char* config_json,
                               cactus_progress_fn progress, void* user, cactus_run** out) {
  return guarded([&] {
    need(dataset, "dataset");
    need(out, "out");
    auto run = std::make_unique<cactus_run>();
    run->config = config_of(config_json);
    run->result = train::train_mtl(dataset->manifest, run->config, progress_of(progress, user));
    *out = run.release();
  });
}

cactus_status cactus_fine_tune(const cactus_bundle* const* bundles, size_t n_bundles,
                               const cactus_dataset* dataset, const char* config_json,
                               const char* new_view, cactus_progress_fn progress, void* user,
                               cactus_run** out) {
  return guarded([&] {
    need(dataset, "dataset");
    need(out, "out");
    auto run = std::make_unique<cactus_run>();
    run->config = config_of(config_json);
    const auto inputs = copy_bundles(bundles, n_bundles);
    const auto view = data::view_from_string(new_view ? new_view : "PSMV");
    run->result = train::fine_tune_new_view(inputs, dataset->manifest, run->config, view,
                                            progress_of(progress, user));
    *out = run.release();
  });
}

size_t cactus_run_bundle_count(const cactus_run* run) {
  return run ? run->result.bundles.size() : 0;
}

cactus_status cactus_run_bundle(const cactus_run* run, size_t index, cactus_bundle** out) {
  return guarded([&] {
    need(run, "run");
    need(out, "out");
    require(index < run->result.bundles.size(), "bundle index out of range");
    *out = new cactus_bundle{std::make_shared<const model::ModelBundle>(run->result.bundles[index])};
  });
}

cactus_status cactus_run_summary(const cactus_run* run, char** summary_json) {
  return guarded([&] {
    need(run, "run");
    need(summary_json, "summary_json");
    *summary_json = duplicate(run->result.summary(run->config).dump());
  });
}

cactus_status cactus_run_write_history(const cactus_run* run, const char* csv_path) {
  return guarded([&] {
    need(run, "run");
    need(csv_path, "csv_path");
    train::write_history_csv(csv_path, run->result.history);
  });
}

void cactus_run_free(cactus_run* run) {
  delete run;
}

// ---- compute accounting -------------------------------------------------------

cactus_status cactus_benchmark(const char* options_json, char** report_json) {
  return guarded([&] {
    need(report_json, "report_json");
    const json o = parse_options(options_json);
    check_keys(o, {"encoder", "num_classes", "input_size", "iterations", "warmup", "seed"});
    eval::BenchmarkOptions b;
    if (o.contains("encoder")) b.encoder = model::encoder_spec_from_json(o.at("encoder"));
    b.num_classes = o.value("num_classes", b.num_classes);
    b.input_size = o.value("input_size", b.input_size);
    b.iterations = o.value("iterations", b.iterations);
    b.warmup = o.value("warmup", b.warmup);
    b.seed = o.value("seed", b.seed);
    *report_json = duplicate(eval::to_json(eval::benchmark_compute(b)).dump());
  });
}

cactus_status cactus_estimate_flops(const char* options_json, char** report_json) {
  return guarded([&] {
    need(report_json, "report_json");
    const json o = parse_options(options_json);
    check_keys(o, {"encoder", "input_size", "num_classes", "grader", "per_layer"});
    model::EncoderSpec spec;
    if (o.contains("encoder")) spec = model::encoder_spec_from_json(o.at("encoder"));
    const int size = o.value("input_size", 224);
    const int k = o.value("num_classes", 6);
    const auto report = model::estimate_flops(spec, size, k, o.value("grader", true));
    const auto cmp = model::compare_shared_vs_separate(spec, size, k);
    json out = model::to_json(report, o.value("per_layer", false));
    out["shared_macs"] = cmp.shared.macs();
    out["separate_macs"] = cmp.classifier_only.macs() + cmp.grader_only.macs();
    out["separate_over_shared"] = cmp.separate_over_shared;
    *report_json = duplicate(out.dump());
  });
}

// ---- scan service -------------------------------------------------------------

cactus_status cactus_session_replay(const cactus_bundle* bundle, const char* frames_dir,
                                    const char* options_json, char** messages_jsonl) {
  return guarded([&] {
    need(bundle, "bundle");
    need(frames_dir, "frames_dir");
    need(messages_jsonl, "messages_jsonl");
    const json o = parse_options(options_json);
    check_keys(o, kSessionKeys);
    auto source = serve::FrameSource::from_directory(frames_dir, o.value("fps", 30.0), false);
    const auto messages = serve::run_session(bundle->bundle, std::move(source), session_config_of(o));
    std::string text;
    for (const auto& m : messages) text += m.dump() + "\n";
    *messages_jsonl = duplicate(text);
  });
}

cactus_status cactus_server_start(const cactus_bundle* bundle, const char* frames_dir,
                                  const char* options_json, cactus_server** out) {
  return guarded([&] {
    need(bundle, "bundle");
    need(frames_dir, "frames_dir");
    need(out, "out");
    const json o = parse_options(options_json);
    check_keys(o, kSessionKeys);
    auto source = serve::FrameSource::from_directory(frames_dir, o.value("fps", 30.0),
                                                     o.value("loop", false));
    const int port = o.value("port", 0);
    require(port >= 0 && port <= 65535, "port must lie in [0, 65535]");
    auto s = std::make_unique<cactus_server>();
    s->session = std::make_shared<serve::ScanSession>(bundle->bundle, session_config_of(o));
    s->server = std::make_unique<serve::ScanServer>(s->session, o.value("host", std::string("127.0.0.1")),
                                                    static_cast<unsigned short>(port));
    s->server->start();
    s->session->start(std::move(source));
    *out = s.release();
  });
}

uint16_t cactus_server_port(const cactus_server* server) {
  return server ? server->server->port() : 0;
}

cactus_status cactus_server_wait(cactus_server* server, int timeout_ms, int* finished) {
  return guarded([&] {
    need(server, "server");
    bool done;
    if (timeout_ms < 0) {
      server->session->wait();
      done = true;
    } else {
      done = server->session->wait_for(timeout_ms);
    }
    if (finished) *finished = done ? 1 : 0;
  });
}

cactus_status cactus_server_stats(const cactus_server* server, char** stats_json) {
  return guarded([&] {
    need(server, "server");
    need(stats_json, "stats_json");
    json s = server->session->stats().to_json();
    s["clients"] = server->server->connected_clients();
    *stats_json = duplicate(s.dump());
  });
}

void cactus_server_free(cactus_server* server) {
  if (!server) return;
  server->server->stop();
  server->session->stop();
  delete server;
}

}  // extern "C"
