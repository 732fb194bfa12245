// cactus: command-line front end over the C API.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cactus/cactus.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

const std::vector<std::string> kViews{"A4C", "SC", "PL", "PSAV", "PSMV", "RANDOM"};

struct RuntimeError {
  std::string message;
};

void check(cactus_status status) {
  if (status != CACTUS_OK)
    throw RuntimeError{std::string(cactus_status_name(status)) + ": " + cactus_last_error()};
}

std::string take(char* text) {
  std::string out = text ? text : "";
  cactus_string_free(text);
  return out;
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* ptr = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle(Handle&& other) noexcept : ptr(other.ptr) { other.ptr = nullptr; }
  ~Handle() { Free(ptr); }
  T** out() { return &ptr; }
  T* get() const { return ptr; }
};
using Dataset = Handle<cactus_dataset, cactus_dataset_free>;
using Bundle = Handle<cactus_bundle, cactus_bundle_free>;
using Run = Handle<cactus_run, cactus_run_free>;
using Server = Handle<cactus_server, cactus_server_free>;

/// Reads --config files written as JSON objects. Nested objects map to
/// subcommand sections the same way TOML tables do.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json root;
    try {
      input >> root;
    } catch (const json::exception& e) {
      throw CLI::ConversionError("config file is not valid JSON: " + std::string(e.what()));
    }
    if (!root.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    collect(root, {}, items);
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void collect(const json& node, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : node.items()) {
      if (value.is_object()) {
        auto nested = parents;
        nested.push_back(key);
        collect(value, nested, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array())
        for (const auto& e : value) item.inputs.push_back(scalar(e));
      else
        item.inputs.push_back(scalar(value));
      out.push_back(std::move(item));
    }
  }
};

struct Globals {
  std::uint64_t seed = 1;
  std::string out = ".";
  bool json_output = false;
  bool quiet = false;
};

struct TrainFlags {
  std::string manifest;
  std::vector<std::string> bundles;
  int epochs = 30;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double momentum = 0.0;
  double weight_decay = 0.0;
  double mtl_lambda = 1.0;
  int runs = 5;
  std::vector<std::uint64_t> seeds;
  int width = 64;
  int input_size = 224;
  std::vector<std::string> classes{"A4C", "SC", "PL", "PSAV", "RANDOM"};
  std::string new_view = "PSMV";
  std::string new_row_init = "zero";
  bool freeze_encoder = false;
};

void progress_printer(const char* epoch_json, void* user) {
  if (*static_cast<bool*>(user)) return;
  const json e = json::parse(epoch_json);
  std::fprintf(stderr, "[%s seed %llu] epoch %2d %5.1fs", e.at("regime").get<std::string>().c_str(),
               static_cast<unsigned long long>(e.at("seed").get<std::uint64_t>()),
               e.at("epoch").get<int>(), e.at("seconds").get<double>());
  for (const auto& [key, value] : e.at("metrics").items())
    std::fprintf(stderr, " %s=%.4f", key.c_str(), value.get<double>());
  std::fprintf(stderr, "\n");
}

std::vector<std::uint64_t> seeds_of(const Globals& g, const TrainFlags& f) {
  if (!f.seeds.empty()) return f.seeds;
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < f.runs; ++i) seeds.push_back(g.seed + static_cast<std::uint64_t>(i));
  return seeds;
}

json train_config(const Globals& g, const TrainFlags& f) {
  return {{"epochs", f.epochs},
          {"batch_size", f.batch_size},
          {"learning_rate", f.learning_rate},
          {"momentum", f.momentum},
          {"weight_decay", f.weight_decay},
          {"mtl_lambda", f.mtl_lambda},
          {"seeds", seeds_of(g, f)},
          {"encoder", {{"base_width", f.width}}},
          {"input_size", f.input_size},
          {"classes", f.classes},
          {"new_row_init", f.new_row_init},
          {"finetune_freeze_encoder", f.freeze_encoder}};
}

fs::path output_dir(const Globals& g) {
  fs::path dir(g.out);
  fs::create_directories(dir);
  return dir;
}

void emit(const Globals& g, const json& summary, const std::string& text) {
  if (g.json_output)
    std::cout << summary.dump(2) << "\n";
  else if (!g.quiet)
    std::cout << text;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

// Saves every per-seed bundle and the history of a finished run.
json store_run(const Globals& g, const Run& run, const std::string& regime) {
  const fs::path dir = output_dir(g);
  json summary = json::parse(take([&] {
    char* s = nullptr;
    check(cactus_run_summary(run.get(), &s));
    return s;
  }()));
  json bundles = json::array();
  for (std::size_t i = 0; i < cactus_run_bundle_count(run.get()); ++i) {
    Bundle b;
    check(cactus_run_bundle(run.get(), i, b.out()));
    const auto seed = summary.at("runs").at(i).at("seed").get<std::uint64_t>();
    const fs::path path = dir / (regime + "_seed" + std::to_string(seed) + ".cactus");
    check(cactus_bundle_save(b.get(), path.c_str()));
    bundles.push_back(path.string());
  }
  const fs::path history = dir / (regime + "_history.csv");
  check(cactus_run_write_history(run.get(), history.c_str()));
  summary["bundles"] = bundles;
  summary["history"] = history.string();
  std::ofstream(dir / (regime + "_summary.json")) << summary.dump(2) << "\n";
  return summary;
}

std::string run_text(const json& summary) {
  std::ostringstream os;
  os << summary.at("regime").get<std::string>() << ": " << summary.at("runs").size() << " run(s), "
     << summary.at("epochs") << " epochs, " << fixed(summary.at("train_seconds").get<double>(), 1)
     << " s\n";
  for (const auto& [key, value] : summary.at("final_mean").items())
    os << "  mean " << key << " = " << fixed(value.get<double>()) << "\n";
  for (const auto& b : summary.at("bundles")) os << "  wrote " << b.get<std::string>() << "\n";
  return os.str();
}

Dataset load_dataset(const std::string& manifest) {
  Dataset d;
  check(cactus_dataset_load(manifest.c_str(), d.out()));
  return d;
}

std::vector<Bundle> load_bundles(const std::vector<std::string>& paths) {
  std::vector<Bundle> out;
  for (const auto& p : paths) {
    Bundle b;
    check(cactus_bundle_load(p.c_str(), b.out()));
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<const cactus_bundle*> raw(const std::vector<Bundle>& bundles) {
  std::vector<const cactus_bundle*> out;
  for (const auto& b : bundles) out.push_back(b.get());
  return out;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Collects *_summary.json, eval*.json and bench*.json from a directory.
json build_report(const fs::path& dir) {
  json report{{"directory", dir.string()}, {"training", json::array()}, {"evaluations", json::array()}};
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    json j;
    try {
      j = json::parse(read_text(path));
    } catch (const json::exception&) {
      continue;
    }
    const std::string name = path.filename().string();
    if (name.ends_with("_summary.json") && j.contains("regime"))
      report["training"].push_back({{"file", name},
                                    {"regime", j.at("regime")},
                                    {"runs", j.at("runs").size()},
                                    {"final_mean", j.at("final_mean")},
                                    {"train_seconds", j.at("train_seconds")}});
    else if (j.contains("split") && (j.contains("classification") || j.contains("grading")))
      report["evaluations"].push_back({{"file", name}, {"report", j}});
    else if (j.contains("latency") && j.contains("trainable_parameters"))
      report["compute"] = j;
  }
  return report;
}

std::string report_markdown(const json& r) {
  std::ostringstream os;
  os << "# Run report\n\n";
  if (!r.at("training").empty()) {
    os << "## Training\n\n| regime | runs | metric | mean at last epoch |\n|---|---|---|---|\n";
    for (const auto& t : r.at("training"))
      for (const auto& [key, value] : t.at("final_mean").items())
        os << "| " << t.at("regime").get<std::string>() << " | " << t.at("runs") << " | " << key
           << " | " << fixed(value.get<double>()) << " |\n";
    os << "\n";
  }
  for (const auto& e : r.at("evaluations")) {
    const auto& rep = e.at("report");
    os << "## " << e.at("file").get<std::string>() << " (" << rep.at("split").get<std::string>()
       << ")\n\n";
    if (rep.contains("classification") && !rep.at("classification").is_null()) {
      const auto& c = rep.at("classification");
      os << "accuracy " << fixed(c.at("accuracy").get<double>()) << ", macro F1 "
         << fixed(c.at("macro_f1").get<double>()) << "\n\n";
    }
    if (rep.contains("grading") && !rep.at("grading").is_null()) {
      const auto& gr = rep.at("grading");
      os << "grading MSE " << fixed(gr.at("mse").get<double>()) << ", MAE "
         << fixed(gr.at("mae").get<double>()) << "\n\n";
    }
  }
  if (r.contains("compute")) {
    os << "## Compute\n\n| model | parameters |\n|---|---|\n";
    for (const auto& [name, count] : r.at("compute").at("trainable_parameters").items())
      os << "| " << name << " | " << count << " |\n";
    os << "\n";
  }
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cardiac ultrasound view classification and image grading"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every stochastic step")->capture_default_str();
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_flag("--json", g.json_output, "Print a JSON summary on stdout");
  app.add_flag("--quiet", g.quiet, "No progress output");
  app.set_config("--config", "", "JSON or TOML file with option values (flags override it)");
  app.allow_config_extras(CLI::config_extras_mode::error);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Index a directory of frames into a manifest");
  std::string ingest_root, ingest_layout = "class-folders";
  ingest->add_option("--root", ingest_root, "Dataset root")->required()->check(CLI::ExistingDirectory);
  ingest->add_option("--layout", ingest_layout)
      ->check(CLI::IsMember({"class-folders", "manifest-file"}))
      ->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "Generate graded phantom frames");
  json synth_opts;
  int synth_n = 50, synth_size = 448;
  double spread = 1.0, sigma = 0.8, grain = 1.0 / 56, occlusion = 0.6, gain = 0.08;
  std::vector<std::string> synth_views = kViews;
  synth->add_option("--n", synth_n, "Frames per class")->check(CLI::Range(1, 1000000))->capture_default_str();
  synth->add_option("--grade-spread", spread)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  synth->add_option("--size", synth_size)->check(CLI::Range(16, 4096))->capture_default_str();
  synth->add_option("--speckle-sigma", sigma)->check(CLI::NonNegativeNumber)->capture_default_str();
  synth->add_option("--speckle-grain", grain)->check(CLI::Range(0.0, 0.5))->capture_default_str();
  synth->add_option("--occlusion", occlusion)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  synth->add_option("--gain-shift", gain)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  synth->add_option("--views", synth_views)->check(CLI::IsMember(kViews))->delimiter(',');

  // split
  auto* split = app.add_subcommand("split", "Stratified 70/10/20 split");
  std::string split_manifest;
  int split_size = 224;
  split->add_option("--manifest", split_manifest)->required()->check(CLI::ExistingFile);
  split->add_option("--input-size", split_size, "Resolution used for normalization statistics")
      ->check(CLI::Range(8, 4096))
      ->capture_default_str();

  // train / transfer / mtl / finetune share the training flags
  TrainFlags tf;
  auto add_train_flags = [&](CLI::App* cmd, bool needs_bundle) {
    cmd->add_option("--manifest", tf.manifest, "Split manifest")->required()->check(CLI::ExistingFile);
    if (needs_bundle)
      cmd->add_option("--bundle", tf.bundles, "Input bundle (one, or one per seed)")
          ->required()
          ->check(CLI::ExistingFile);
    cmd->add_option("--epochs", tf.epochs)->check(CLI::Range(1, 100000))->capture_default_str();
    cmd->add_option("--batch-size", tf.batch_size)->check(CLI::Range(1, 100000))->capture_default_str();
    cmd->add_option("--lr", tf.learning_rate)->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--momentum", tf.momentum)->check(CLI::Range(0.0, 0.999))->capture_default_str();
    cmd->add_option("--weight-decay", tf.weight_decay)->check(CLI::NonNegativeNumber)->capture_default_str();
    cmd->add_option("--runs", tf.runs, "Seeds seed..seed+runs-1 unless --seeds is given")
        ->check(CLI::Range(1, 1000))
        ->capture_default_str();
    cmd->add_option("--seeds", tf.seeds)->delimiter(',');
    cmd->add_option("--width", tf.width, "Encoder base width")->check(CLI::Range(1, 1024))->capture_default_str();
    cmd->add_option("--input-size", tf.input_size)->check(CLI::Range(8, 4096))->capture_default_str();
    cmd->add_option("--classes", tf.classes)->check(CLI::IsMember(kViews))->delimiter(',');
  };
  auto* train = app.add_subcommand("train", "Train encoder and classification head");
  add_train_flags(train, false);
  auto* transfer = app.add_subcommand("transfer", "Train a grading head on a frozen encoder");
  add_train_flags(transfer, true);
  auto* mtl = app.add_subcommand("mtl", "Joint classification and grading training");
  add_train_flags(mtl, false);
  mtl->add_option("--lambda", tf.mtl_lambda, "Weight of the grading loss")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  auto* finetune = app.add_subcommand("finetune", "Add a view to the classifier and fine-tune");
  add_train_flags(finetune, true);
  finetune->add_option("--new-view", tf.new_view)->check(CLI::IsMember(kViews))->capture_default_str();
  finetune->add_option("--new-row-init", tf.new_row_init)
      ->check(CLI::IsMember({"zero", "random"}))
      ->capture_default_str();
  finetune->add_flag("--freeze-encoder", tf.freeze_encoder, "Train only the expanded head");

  // eval
  auto* evaluate = app.add_subcommand("eval", "Evaluate a bundle on one split");
  std::string eval_manifest, eval_bundle, eval_split = "test", eval_name = "eval";
  evaluate->add_option("--manifest", eval_manifest)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--bundle", eval_bundle)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--split", eval_split)->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
  evaluate->add_option("--name", eval_name, "Stem of the output files")->capture_default_str();

  // bench
  auto* bench = app.add_subcommand("bench", "Parameters, FLOPs and latency of the model variants");
  int bench_iters = 1000, bench_warmup = 100, bench_width = 64, bench_size = 224, bench_k = 6;
  bench->add_option("--iterations", bench_iters)->check(CLI::Range(1, 1000000))->capture_default_str();
  bench->add_option("--warmup", bench_warmup)->check(CLI::Range(0, 1000000))->capture_default_str();
  bench->add_option("--width", bench_width)->check(CLI::Range(1, 1024))->capture_default_str();
  bench->add_option("--input-size", bench_size)->check(CLI::Range(8, 4096))->capture_default_str();
  bench->add_option("--num-classes", bench_k)->check(CLI::Range(1, 1000))->capture_default_str();

  // explain
  auto* explain = app.add_subcommand("explain", "Saliency map for one frame");
  std::string ex_bundle, ex_image, ex_target, ex_method = "gradcam++";
  double ex_alpha = 0.5;
  explain->add_option("--bundle", ex_bundle)->required()->check(CLI::ExistingFile);
  explain->add_option("--image", ex_image)->required()->check(CLI::ExistingFile);
  std::vector<std::string> targets = kViews;
  targets.push_back("grade");
  explain->add_option("--target", ex_target, "View name or 'grade'; default is the predicted view")
      ->check(CLI::IsMember(targets));
  explain->add_option("--method", ex_method)->check(CLI::IsMember({"gradcam", "gradcam++"}))->capture_default_str();
  explain->add_option("--alpha", ex_alpha)->check(CLI::Range(0.0, 1.0))->capture_default_str();

  // serve
  auto* serve = app.add_subcommand("serve", "Stream predictions over WebSocket");
  std::string sv_bundle, sv_frames, sv_host = "127.0.0.1", sv_target;
  double sv_fps = 30.0, sv_threshold = 7.0, sv_linger = 0.0;
  int sv_port = 8765, sv_queue = 4;
  bool sv_loop = false, sv_replay = false;
  serve->add_option("--bundle", sv_bundle)->required()->check(CLI::ExistingFile);
  serve->add_option("--frames", sv_frames)->required()->check(CLI::ExistingDirectory);
  serve->add_option("--fps", sv_fps)->check(CLI::Range(0.1, 1000.0))->capture_default_str();
  serve->add_option("--host", sv_host)->capture_default_str();
  serve->add_option("--port", sv_port, "0 picks a free port")->check(CLI::Range(0, 65535))->capture_default_str();
  serve->add_option("--target-view", sv_target)->check(CLI::IsMember(kViews));
  serve->add_option("--threshold", sv_threshold)->check(CLI::Range(0.0, 10.0))->capture_default_str();
  serve->add_option("--queue", sv_queue)->check(CLI::Range(1, 1024))->capture_default_str();
  serve->add_flag("--loop", sv_loop, "Replay the directory until interrupted");
  serve->add_option("--linger", sv_linger, "Seconds to keep serving after playback ends")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  serve->add_flag("--replay", sv_replay, "Run offline and write events.jsonl instead of listening");

  // report
  auto* report = app.add_subcommand("report", "Summarize the artifacts of a run directory");
  std::string report_dir;
  report->add_option("--dir", report_dir, "Directory with summaries and evaluations")
      ->required()
      ->check(CLI::ExistingDirectory);

  // A .json --config is read as JSON, anything else as TOML.
  for (int i = 1; i + 1 < argc; ++i) {
    const std::string arg = argv[i];
    if ((arg == "--config" && fs::path(argv[i + 1]).extension() == ".json"))
      app.config_formatter(std::make_shared<JsonConfig>());
  }
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.starts_with("--config=") && fs::path(arg.substr(9)).extension() == ".json")
      app.config_formatter(std::make_shared<JsonConfig>());
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  bool quiet_progress = g.quiet || g.json_output;
  try {
    if (*ingest) {
      Dataset d;
      char* warnings = nullptr;
      check(cactus_dataset_ingest(ingest_root.c_str(), ingest_layout.c_str(), d.out(), &warnings));
      const json w = json::parse(take(warnings));
      char* stats = nullptr;
      check(cactus_dataset_statistics(d.get(), &stats));
      const json s = json::parse(take(stats));
      const fs::path path = output_dir(g) / "manifest.jsonl";
      check(cactus_dataset_save(d.get(), path.c_str()));
      for (const auto& m : w) std::cerr << "warning: " << m.get<std::string>() << "\n";
      emit(g, {{"manifest", path.string()}, {"statistics", s}, {"warnings", w}},
           "ingested " + std::to_string(s.at("total").get<int>()) + " frames into " + path.string() + "\n");
    } else if (*synth) {
      const json options{{"n_per_class", synth_n},   {"grade_spread", spread},
                         {"seed", g.seed},           {"size", synth_size},
                         {"speckle_sigma", sigma},   {"speckle_grain", grain},
                         {"occlusion_fraction", occlusion}, {"max_gain_shift", gain},
                         {"views", synth_views}};
      Dataset d;
      const fs::path dir = output_dir(g);
      check(cactus_dataset_synthesize(options.dump().c_str(), dir.c_str(), d.out()));
      char* stats = nullptr;
      check(cactus_dataset_statistics(d.get(), &stats));
      const json s = json::parse(take(stats));
      emit(g, {{"manifest", (dir / "manifest.jsonl").string()}, {"statistics", s}, {"options", options}},
           "wrote " + std::to_string(s.at("total").get<int>()) + " frames to " + dir.string() + "\n");
    } else if (*split) {
      Dataset d = load_dataset(split_manifest);
      const json pre{{"target_size", split_size}};
      check(cactus_dataset_split(d.get(), g.seed, pre.dump().c_str()));
      char* stats = nullptr;
      check(cactus_dataset_statistics(d.get(), &stats));
      const json s = json::parse(take(stats));
      const fs::path path = output_dir(g) / "manifest.jsonl";
      check(cactus_dataset_save(d.get(), path.c_str()));
      emit(g, {{"manifest", path.string()}, {"statistics", s}}, "split manifest written to " + path.string() + "\n");
    } else if (*train || *mtl) {
      Dataset all = load_dataset(tf.manifest);
      // Frames of views outside --classes are left out.
      Dataset d;
      check(cactus_dataset_select(all.get(), json(tf.classes).dump().c_str(), d.out()));
      const std::string config = train_config(g, tf).dump();
      Run run;
      if (*train)
        check(cactus_train_classification(d.get(), config.c_str(), progress_printer, &quiet_progress, run.out()));
      else
        check(cactus_train_mtl(d.get(), config.c_str(), progress_printer, &quiet_progress, run.out()));
      const json summary = store_run(g, run, *train ? "classification" : "mtl");
      emit(g, summary, run_text(summary));
    } else if (*transfer || *finetune) {
      Dataset d = load_dataset(tf.manifest);
      const auto bundles = load_bundles(tf.bundles);
      const auto handles = raw(bundles);
      json config = train_config(g, tf);
      config.erase("classes");  // taken from the input bundles
      Run run;
      if (*transfer) {
        check(cactus_transfer_grading(handles.data(), handles.size(), d.get(), config.dump().c_str(),
                                      progress_printer, &quiet_progress, run.out()));
      } else {
        check(cactus_fine_tune(handles.data(), handles.size(), d.get(), config.dump().c_str(),
                               tf.new_view.c_str(), progress_printer, &quiet_progress, run.out()));
      }
      const json summary = store_run(g, run, *transfer ? "transfer" : "finetune");
      emit(g, summary, run_text(summary));
    } else if (*evaluate) {
      Dataset d = load_dataset(eval_manifest);
      Bundle b;
      check(cactus_bundle_load(eval_bundle.c_str(), b.out()));
      const fs::path dir = output_dir(g);
      const fs::path png = dir / (eval_name + "_confusion.png");
      char* rep = nullptr;
      check(cactus_bundle_evaluate(b.get(), d.get(), eval_split.c_str(), png.c_str(), &rep));
      json r = json::parse(take(rep));
      r["bundle"] = eval_bundle;
      std::ofstream(dir / (eval_name + ".json")) << r.dump(2) << "\n";
      std::ostringstream text;
      text << "split " << eval_split << "\n";
      if (!r.at("classification").is_null())
        text << "  accuracy " << fixed(r.at("classification").at("accuracy").get<double>())
             << "  macro F1 " << fixed(r.at("classification").at("macro_f1").get<double>()) << "\n";
      if (!r.at("grading").is_null())
        text << "  grading MSE " << fixed(r.at("grading").at("mse").get<double>()) << "  MAE "
             << fixed(r.at("grading").at("mae").get<double>()) << "\n";
      emit(g, r, text.str());
    } else if (*bench) {
      const json options{{"encoder", {{"base_width", bench_width}}},
                         {"num_classes", bench_k},
                         {"input_size", bench_size},
                         {"iterations", bench_iters},
                         {"warmup", bench_warmup},
                         {"seed", g.seed}};
      char* rep = nullptr;
      check(cactus_benchmark(options.dump().c_str(), &rep));
      const json r = json::parse(take(rep));
      std::ofstream(output_dir(g) / "bench.json") << r.dump(2) << "\n";
      std::ostringstream text;
      for (const auto& [name, count] : r.at("trainable_parameters").items())
        text << name << ": " << count << " trainable parameters\n";
      for (const auto& l : r.at("latency"))
        text << l.at("name").get<std::string>() << ": mean " << fixed(l.at("mean_ms").get<double>(), 2)
             << " ms, p95 " << fixed(l.at("p95_ms").get<double>(), 2) << " ms\n";
      emit(g, r, text.str());
    } else if (*explain) {
      Bundle b;
      check(cactus_bundle_load(ex_bundle.c_str(), b.out()));
      const fs::path dir = output_dir(g);
      const std::string stem = fs::path(ex_image).stem().string();
      json options{{"method", ex_method},
                   {"alpha", ex_alpha},
                   {"overlay_png", (dir / (stem + "_saliency.png")).string()},
                   {"grid_path", (dir / (stem + "_saliency.camf")).string()}};
      if (!ex_target.empty()) options["target"] = ex_target;
      char* res = nullptr;
      check(cactus_bundle_explain(b.get(), ex_image.c_str(), options.dump().c_str(), &res));
      json r = json::parse(take(res));
      r["overlay_png"] = options["overlay_png"];
      r["grid_path"] = options["grid_path"];
      emit(g, r, "wrote " + r["overlay_png"].get<std::string>() + "\n");
    } else if (*serve) {
      Bundle b;
      check(cactus_bundle_load(sv_bundle.c_str(), b.out()));
      json options{{"fps", sv_fps}, {"threshold", sv_threshold}, {"queue_capacity", sv_queue}};
      if (!sv_target.empty()) options["target_view"] = sv_target;
      if (sv_replay) {
        char* lines = nullptr;
        check(cactus_session_replay(b.get(), sv_frames.c_str(), options.dump().c_str(), &lines));
        const std::string text = take(lines);
        const fs::path path = output_dir(g) / "events.jsonl";
        std::ofstream(path) << text;
        json last_stats;
        std::istringstream in(text);
        for (std::string line; std::getline(in, line);) {
          const json m = json::parse(line);
          if (m.at("type") == "stats") last_stats = m;
        }
        emit(g, {{"events", path.string()}, {"stats", last_stats}}, "wrote " + path.string() + "\n");
      } else {
        options["host"] = sv_host;
        options["port"] = sv_port;
        options["loop"] = sv_loop;
        Server s;
        check(cactus_server_start(b.get(), sv_frames.c_str(), options.dump().c_str(), s.out()));
        std::cerr << "listening on ws://" << sv_host << ":" << cactus_server_port(s.get()) << "/\n";
        int finished = 0;
        check(cactus_server_wait(s.get(), -1, &finished));
        if (sv_linger > 0)
          std::this_thread::sleep_for(std::chrono::duration<double>(sv_linger));
        char* stats = nullptr;
        check(cactus_server_stats(s.get(), &stats));
        const json st = json::parse(take(stats));
        emit(g, st, "served " + std::to_string(st.at("events_emitted").get<int>()) + " events, dropped " +
                        std::to_string(st.at("frames_dropped").get<int>()) + " frames\n");
      }
    } else if (*report) {
      const json r = build_report(report_dir);
      const fs::path dir = output_dir(g);
      std::ofstream(dir / "report.json") << r.dump(2) << "\n";
      const std::string md = report_markdown(r);
      std::ofstream(dir / "report.md") << md;
      emit(g, r, md);
    }
  } catch (const RuntimeError& e) {
    std::cerr << "error: " << e.message << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
