#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "data/image.hpp"
#include "data/view.hpp"
#include "explain/saliency.hpp"
#include "json.hpp"
#include "model/bundle.hpp"

namespace cactus::serve {

struct Frame {
  std::uint64_t id = 0;
  std::string name;
  std::shared_ptr<const data::GrayImage> image;
  std::optional<data::ViewClass> truth;
};

/// Directory playback or an in-memory frame list, emitted at `fps`.
class FrameSource {
 public:
  /// *.png files in name order. A grades.csv sidecar (id,view,grade), when
  /// present, supplies ground-truth views keyed by file stem.
  static FrameSource from_directory(const std::filesystem::path& dir, double fps = 30.0,
                                    bool loop = false);
  static FrameSource from_images(std::vector<data::GrayImage> images, double fps = 30.0,
                                 bool loop = false,
                                 std::vector<std::optional<data::ViewClass>> truths = {});

  double fps() const { return fps_; }
  bool loop() const { return loop_; }
  std::size_t size() const { return items_.size(); }

  /// Next frame with a strictly increasing id; nullopt once exhausted.
  std::optional<Frame> next();

 private:
  struct Item {
    std::string name;
    std::filesystem::path path;
    std::shared_ptr<const data::GrayImage> image;
    std::optional<data::ViewClass> truth;
  };
  std::vector<Item> items_;
  std::size_t cursor_ = 0;
  std::uint64_t next_id_ = 1;
  double fps_ = 30.0;
  bool loop_ = false;
};

struct SessionConfig {
  std::optional<data::ViewClass> target_view;
  double grade_threshold = 7.0;
  std::size_t queue_capacity = 4;
  std::size_t trend_window = 30;
  std::size_t frame_ring = 120;          // recent frames kept for /frame and heatmaps
  std::size_t client_queue_capacity = 256;
  std::size_t stats_every = 30;          // events between stats messages; 0 disables

  void validate() const;
};

struct StreamEvent {
  std::uint64_t frame_id = 0;
  double timestamp_ms = 0.0;  // since session start
  data::ViewClass view = data::ViewClass::RANDOM;
  std::vector<std::pair<data::ViewClass, double>> probabilities;
  double grade = 0.0;  // clamped
  int grade_band = 0;
  double latency_ms = 0.0;
  bool on_target = false;
  std::optional<std::string> heatmap_ref;

  nlohmann::json to_json() const;
};

/// A client's outbound queue. Overflow drops that client's oldest message so
/// a slow reader never stalls inference.
class Subscriber {
 public:
  explicit Subscriber(std::size_t capacity) : capacity_(capacity) {}

  void push(std::string message);
  /// Blocks up to `timeout_ms`; nullopt on timeout or after close().
  std::optional<std::string> pop(int timeout_ms);
  std::optional<std::string> try_pop();
  void close();
  bool closed() const;
  std::uint64_t dropped() const { return dropped_.load(); }
  void set_notify(std::function<void()> notify);

 private:
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<std::string> queue_;
  bool closed_ = false;
  std::atomic<std::uint64_t> dropped_{0};
  std::function<void()> notify_;
};

struct SessionStats {
  std::uint64_t frames_produced = 0;
  std::uint64_t events_emitted = 0;
  std::uint64_t frames_dropped = 0;
  std::uint64_t forward_passes = 0;
  std::uint64_t encoder_conv_macs = 0;
  std::size_t max_queue_depth = 0;
  double latency_mean_ms = 0.0;
  double latency_p50_ms = 0.0;
  double latency_p95_ms = 0.0;
  std::vector<double> grade_trend;  // last trend_window grades, oldest first
  double trend_slope = 0.0;         // least-squares grade change per frame
  std::uint64_t truth_frames = 0;
  std::uint64_t truth_correct = 0;
  bool finished = false;

  nlohmann::json to_json() const;
};

/// Real-time scan-assist loop over an immutable bundle: a producer paces the
/// source into a bounded drop-oldest queue, one inference worker runs the
/// shared encoder once per frame and publishes events in frame order to every
/// subscriber.
class ScanSession {
 public:
  ScanSession(std::shared_ptr<const model::ModelBundle> bundle, SessionConfig config);
  ~ScanSession();
  ScanSession(const ScanSession&) = delete;
  ScanSession& operator=(const ScanSession&) = delete;

  void start(FrameSource source);
  void stop();
  /// Waits for the end of a finite stream.
  void wait();
  /// Like wait() but gives up after `timeout_ms`; returns whether it ended.
  bool wait_for(int timeout_ms);
  bool finished() const;

  std::shared_ptr<Subscriber> subscribe();
  void unsubscribe(const std::shared_ptr<Subscriber>& subscriber);

  /// Validates and applies a new on-target predicate; the ack is published in
  /// the event stream so later events follow the new predicate.
  nlohmann::json set_target(std::optional<data::ViewClass> view, double threshold);

  /// Handles one client JSON message; returns a direct reply (nack or
  /// heatmap notice) when there is one.
  std::optional<nlohmann::json> handle_client_message(const std::string& text,
                                                      const std::shared_ptr<Subscriber>& from);

  /// PNG of a recent frame, or nullopt when it left the ring.
  std::optional<std::vector<std::uint8_t>> frame_png(std::uint64_t frame_id) const;
  /// Saliency overlay PNG for a recent frame (computed and cached on first use).
  std::optional<std::vector<std::uint8_t>> heatmap_png(std::uint64_t frame_id);

  nlohmann::json hello() const;
  SessionStats stats() const;
  const model::ModelBundle& bundle() const { return *bundle_; }

 private:
  void producer_loop(FrameSource source);
  void worker_loop();
  void publish(const std::string& message);
  SessionStats snapshot_locked() const;
  double now_ms() const;

  std::shared_ptr<const model::ModelBundle> bundle_;
  SessionConfig config_;
  std::chrono::steady_clock::time_point start_;

  // In-flight frames between producer and worker.
  mutable std::mutex queue_mutex_;
  std::condition_variable queue_ready_;
  std::deque<Frame> queue_;
  bool producer_done_ = false;
  bool stopping_ = false;

  // Predicate, fan-out and statistics.
  mutable std::mutex state_mutex_;
  std::vector<std::shared_ptr<Subscriber>> subscribers_;
  SessionStats stats_;
  std::vector<double> latencies_;
  std::deque<double> trend_;
  std::uint64_t last_event_id_ = 0;
  std::condition_variable finished_cv_;

  // Recent frames with their predicted class, for /frame and heatmaps.
  struct Recent {
    Frame frame;
    int predicted = 0;
  };
  mutable std::mutex ring_mutex_;
  std::deque<Recent> ring_;
  std::map<std::uint64_t, std::vector<std::uint8_t>> heatmaps_;
  std::mutex heatmap_mutex_;

  std::thread producer_;
  std::thread worker_;
};

/// Runs a whole finite source without a network front end and returns the
/// hello message followed by every published message in order.
std::vector<nlohmann::json> run_session(std::shared_ptr<const model::ModelBundle> bundle,
                                        FrameSource source, const SessionConfig& config,
                                        SessionStats* stats = nullptr);

}  // namespace cactus::serve
