/* C interface to the cactus library.
 *
 * Every function returns a cactus_status. On failure the message is available
 * from cactus_last_error() on the calling thread until the next call.
 * Strings returned through char** are heap-allocated and released with
 * cactus_string_free(). Handles are released with their *_free function;
 * passing NULL to a *_free function is a no-op.
 */
#ifndef CACTUS_CACTUS_H
#define CACTUS_CACTUS_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define CACTUS_API __attribute__((visibility("default")))
#else
#define CACTUS_API
#endif

typedef enum cactus_status {
  CACTUS_OK = 0,
  CACTUS_ERR_INVALID_ARGUMENT = 1,
  CACTUS_ERR_IO = 2,
  CACTUS_ERR_FORMAT = 3,
  CACTUS_ERR_CHECKSUM = 4,
  CACTUS_ERR_VERSION = 5,
  CACTUS_ERR_STATE = 6,
  CACTUS_ERR_INTERNAL = 7
} cactus_status;

typedef struct cactus_dataset cactus_dataset;
typedef struct cactus_bundle cactus_bundle;
typedef struct cactus_run cactus_run;
typedef struct cactus_server cactus_server;

/* Called once per finished epoch with a JSON object
 * {"regime", "seed", "epoch", "seconds", "metrics": {...}}. */
typedef void (*cactus_progress_fn)(const char* epoch_json, void* user);

CACTUS_API const char* cactus_version(void);
CACTUS_API const char* cactus_last_error(void);
CACTUS_API const char* cactus_status_name(cactus_status status);
CACTUS_API void cactus_string_free(char* text);

/* ---- datasets ---------------------------------------------------------- */

/* layout: "class-folders" or "manifest-file". warnings_json (optional)
 * receives a JSON array of metadata warnings. */
CACTUS_API cactus_status cactus_dataset_ingest(const char* root, const char* layout,
                                               cactus_dataset** out, char** warnings_json);
/* Options: n_per_class, grade_spread, seed, size, speckle_sigma,
 * speckle_grain, occlusion_fraction, max_gain_shift, views. The frames are
 * written under dir (PNG per view, manifest.jsonl, grades.csv and
 * emission_log.csv). */
CACTUS_API cactus_status cactus_dataset_synthesize(const char* options_json, const char* dir,
                                                   cactus_dataset** out);
CACTUS_API cactus_status cactus_dataset_load(const char* manifest_path, cactus_dataset** out);
CACTUS_API cactus_status cactus_dataset_save(const cactus_dataset* dataset,
                                             const char* manifest_path);
/* Stratified 70/10/20 split. preprocess_json (optional) recomputes the
 * normalization from the TRAIN split: {"target_size", "crop": {"x", "y", "width", "height"}}. */
CACTUS_API cactus_status cactus_dataset_split(cactus_dataset* dataset, uint64_t seed,
                                              const char* preprocess_json);
/* Keeps only the listed views, e.g. "[\"A4C\", \"SC\"]". */
CACTUS_API cactus_status cactus_dataset_select(const cactus_dataset* dataset,
                                               const char* views_json, cactus_dataset** out);
CACTUS_API cactus_status cactus_dataset_statistics(const cactus_dataset* dataset,
                                                   char** stats_json);
CACTUS_API void cactus_dataset_free(cactus_dataset* dataset);

/* ---- bundles ----------------------------------------------------------- */

/* Options: classes, grader, seed, encoder {base_width, stage_blocks},
 * input_size. */
CACTUS_API cactus_status cactus_bundle_create(const char* options_json, cactus_bundle** out);
CACTUS_API cactus_status cactus_bundle_load(const char* path, cactus_bundle** out);
CACTUS_API cactus_status cactus_bundle_save(const cactus_bundle* bundle, const char* path);
CACTUS_API cactus_status cactus_bundle_info(const cactus_bundle* bundle, char** info_json);
/* Trainable-parameter count for a subset of {"encoder", "classifier",
 * "grader"}; frozen_json lists components to exclude. */
CACTUS_API cactus_status cactus_bundle_param_count(const cactus_bundle* bundle,
                                                   const char* include_json,
                                                   const char* frozen_json, uint64_t* count);
/* Predicted view, probabilities and grade for one PNG frame. */
CACTUS_API cactus_status cactus_bundle_predict_png(const cactus_bundle* bundle,
                                                   const char* png_path, char** result_json);
/* split: "train", "val" or "test" (any case). confusion_png (optional) receives the
 * rendered confusion matrix. */
CACTUS_API cactus_status cactus_bundle_evaluate(const cactus_bundle* bundle,
                                                const cactus_dataset* dataset, const char* split,
                                                const char* confusion_png, char** report_json);
/* Options: target ("grade", a view name, or absent for the predicted view),
 * method ("gradcam" or "gradcam++"), alpha, overlay_png, grid_path. */
CACTUS_API cactus_status cactus_bundle_explain(const cactus_bundle* bundle, const char* png_path,
                                               const char* options_json, char** result_json);
CACTUS_API void cactus_bundle_free(cactus_bundle* bundle);

/* ---- training ---------------------------------------------------------- */

/* config_json overrides the training defaults (epochs, batch_size,
 * learning_rate, seeds, encoder, input_size, classes, ...). NULL keeps them. */
CACTUS_API cactus_status cactus_train_classification(const cactus_dataset* dataset,
                                                     const char* config_json,
                                                     cactus_progress_fn progress, void* user,
                                                     cactus_run** out);
/* One bundle is reused for every seed; n_bundles equal to the seed count
 * pairs them with the seeds. */
CACTUS_API cactus_status cactus_transfer_grading(const cactus_bundle* const* bundles,
                                                 size_t n_bundles, const cactus_dataset* dataset,
                                                 const char* config_json,
                                                 cactus_progress_fn progress, void* user,
                                                 cactus_run** out);
CACTUS_API cactus_status cactus_train_mtl(const cactus_dataset* dataset, const char* config_json,
                                          cactus_progress_fn progress, void* user,
                                          cactus_run** out);
CACTUS_API cactus_status cactus_fine_tune(const cactus_bundle* const* bundles, size_t n_bundles,
                                          const cactus_dataset* dataset, const char* config_json,
                                          const char* new_view, cactus_progress_fn progress,
                                          void* user, cactus_run** out);

CACTUS_API size_t cactus_run_bundle_count(const cactus_run* run);
/* Copies the bundle trained with the index-th seed. */
CACTUS_API cactus_status cactus_run_bundle(const cactus_run* run, size_t index,
                                           cactus_bundle** out);
CACTUS_API cactus_status cactus_run_summary(const cactus_run* run, char** summary_json);
CACTUS_API cactus_status cactus_run_write_history(const cactus_run* run, const char* csv_path);
CACTUS_API void cactus_run_free(cactus_run* run);

/* ---- compute accounting ------------------------------------------------ */

/* Options: encoder, num_classes, input_size, iterations, warmup, seed. */
CACTUS_API cactus_status cactus_benchmark(const char* options_json, char** report_json);
/* Analytic FLOP report: {encoder, input_size, num_classes, grader, per_layer}. */
CACTUS_API cactus_status cactus_estimate_flops(const char* options_json, char** report_json);

/* ---- scan service ------------------------------------------------------ */

/* Session options: target_view, threshold, queue_capacity, trend_window,
 * frame_ring, stats_every, fps, loop. Runs every frame in frames_dir without
 * a network front end; messages_jsonl receives one message per line. */
CACTUS_API cactus_status cactus_session_replay(const cactus_bundle* bundle, const char* frames_dir,
                                               const char* options_json, char** messages_jsonl);
/* Starts playback of frames_dir behind a WebSocket/HTTP server. Extra
 * options: host (default "127.0.0.1") and port (0 picks a free one). */
CACTUS_API cactus_status cactus_server_start(const cactus_bundle* bundle, const char* frames_dir,
                                             const char* options_json, cactus_server** out);
CACTUS_API uint16_t cactus_server_port(const cactus_server* server);
/* Waits up to timeout_ms (negative waits forever); *finished tells whether
 * playback ended. */
CACTUS_API cactus_status cactus_server_wait(cactus_server* server, int timeout_ms, int* finished);
CACTUS_API cactus_status cactus_server_stats(const cactus_server* server, char** stats_json);
CACTUS_API void cactus_server_free(cactus_server* server);

#ifdef __cplusplus
}
#endif

#endif
