#include "serve/session.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "common/error.hpp"
#include "model/blas.hpp"

namespace cactus::serve {

namespace fs = std::filesystem;
using nlohmann::json;
using clock_type = std::chrono::steady_clock;

namespace {

constexpr std::size_t kLatencyWindow = 10000;

std::map<std::string, data::ViewClass> read_truth_sidecar(const fs::path& dir) {
  std::map<std::string, data::ViewClass> truth;
  std::ifstream in(dir / "grades.csv");
  if (!in) return truth;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::stringstream row(line);
    std::string id, view;
    if (!std::getline(row, id, ',') || !std::getline(row, view, ',')) continue;
    if (auto v = data::parse_view(view)) truth[id] = *v;
  }
  return truth;
}

double slope(const std::deque<double>& values) {
  const double n = static_cast<double>(values.size());
  if (values.size() < 2) return 0.0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = static_cast<double>(i);
    sx += x;
    sy += values[i];
    sxx += x * x;
    sxy += x * values[i];
  }
  const double den = n * sxx - sx * sx;
  return den == 0.0 ? 0.0 : (n * sxy - sx * sy) / den;
}

}  // namespace

// ---------------------------------------------------------------------------
// FrameSource

FrameSource FrameSource::from_directory(const fs::path& dir, double fps, bool loop) {
  require(fps > 0.0, "fps must be positive");
  if (!fs::is_directory(dir)) fail(ErrorCode::Io, "frame directory " + dir.string() + " does not exist");
  const auto truth = read_truth_sidecar(dir);
  FrameSource source;
  source.fps_ = fps;
  source.loop_ = loop;
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    Item item;
    item.name = path.stem().string();
    item.path = path;
    if (auto it = truth.find(item.name); it != truth.end()) item.truth = it->second;
    source.items_.push_back(std::move(item));
  }
  if (source.items_.empty()) fail(ErrorCode::InvalidArgument, "no PNG frames in " + dir.string());
  return source;
}

FrameSource FrameSource::from_images(std::vector<data::GrayImage> images, double fps, bool loop,
                                     std::vector<std::optional<data::ViewClass>> truths) {
  require(fps > 0.0, "fps must be positive");
  require(!images.empty(), "frame list is empty");
  require(truths.empty() || truths.size() == images.size(), "one truth label per frame");
  FrameSource source;
  source.fps_ = fps;
  source.loop_ = loop;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Item item;
    item.name = "frame_" + std::to_string(i);
    item.image = std::make_shared<const data::GrayImage>(std::move(images[i]));
    if (!truths.empty()) item.truth = truths[i];
    source.items_.push_back(std::move(item));
  }
  return source;
}

std::optional<Frame> FrameSource::next() {
  if (cursor_ >= items_.size()) {
    if (!loop_ || items_.empty()) return std::nullopt;
    cursor_ = 0;
  }
  const Item& item = items_[cursor_++];
  Frame frame;
  frame.id = next_id_++;
  frame.name = item.name;
  frame.truth = item.truth;
  frame.image = item.image ? item.image
                           : std::make_shared<const data::GrayImage>(data::read_png_gray(item.path));
  return frame;
}

// ---------------------------------------------------------------------------
// Messages

void SessionConfig::validate() const {
  require(grade_threshold >= 0.0 && grade_threshold <= 10.0, "threshold must lie in [0, 10]");
  require(queue_capacity >= 1, "queue capacity must be at least 1");
  require(trend_window >= 1, "trend window must be at least 1");
  require(frame_ring >= 1, "frame ring must hold at least one frame");
  require(client_queue_capacity >= 1, "client queue capacity must be at least 1");
}

json StreamEvent::to_json() const {
  json probs = json::object();
  for (const auto& [view, p] : probabilities) probs[std::string(data::to_string(view))] = p;
  return {{"type", "event"},
          {"frame_id", frame_id},
          {"timestamp_ms", timestamp_ms},
          {"view", std::string(data::to_string(view))},
          {"probabilities", probs},
          {"grade", grade},
          {"grade_band", grade_band},
          {"latency_ms", latency_ms},
          {"on_target", on_target},
          {"heatmap_ref", heatmap_ref ? json(*heatmap_ref) : json()},
          {"frame_uri", "/frame/" + std::to_string(frame_id) + ".png"}};
}

json SessionStats::to_json() const {
  json out{{"type", "stats"},
           {"frames_produced", frames_produced},
           {"events_emitted", events_emitted},
           {"frames_dropped", frames_dropped},
           {"forward_passes", forward_passes},
           {"max_queue_depth", max_queue_depth},
           {"latency_mean_ms", latency_mean_ms},
           {"latency_p50_ms", latency_p50_ms},
           {"latency_p95_ms", latency_p95_ms},
           {"grade_trend", grade_trend},
           {"trend_slope", trend_slope},
           {"finished", finished}};
  if (truth_frames > 0) {
    out["truth_frames"] = truth_frames;
    out["accuracy"] = static_cast<double>(truth_correct) / static_cast<double>(truth_frames);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subscriber

void Subscriber::push(std::string message) {
  std::function<void()> notify;
  {
    std::lock_guard lock(mutex_);
    if (closed_) return;
    if (queue_.size() >= capacity_) {
      queue_.pop_front();
      ++dropped_;
    }
    queue_.push_back(std::move(message));
    notify = notify_;
  }
  ready_.notify_one();
  if (notify) notify();
}

std::optional<std::string> Subscriber::pop(int timeout_ms) {
  std::unique_lock lock(mutex_);
  ready_.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                  [&] { return closed_ || !queue_.empty(); });
  if (queue_.empty()) return std::nullopt;
  std::string out = std::move(queue_.front());
  queue_.pop_front();
  return out;
}

std::optional<std::string> Subscriber::try_pop() {
  std::lock_guard lock(mutex_);
  if (queue_.empty()) return std::nullopt;
  std::string out = std::move(queue_.front());
  queue_.pop_front();
  return out;
}

void Subscriber::close() {
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
    notify_ = nullptr;
  }
  ready_.notify_all();
}

bool Subscriber::closed() const {
  std::lock_guard lock(mutex_);
  return closed_;
}

void Subscriber::set_notify(std::function<void()> notify) {
  std::lock_guard lock(mutex_);
  notify_ = std::move(notify);
}

// ---------------------------------------------------------------------------
// ScanSession

ScanSession::ScanSession(std::shared_ptr<const model::ModelBundle> bundle, SessionConfig config)
    : bundle_(std::move(bundle)), config_(std::move(config)), start_(clock_type::now()) {
  require(bundle_ != nullptr, "session needs a bundle");
  config_.validate();
  if (!bundle_->classifier || !bundle_->grader)
    fail(ErrorCode::State, "serving needs a bundle with both classification and grading heads");
}

ScanSession::~ScanSession() {
  stop();
}

double ScanSession::now_ms() const {
  return std::chrono::duration<double, std::milli>(clock_type::now() - start_).count();
}

void ScanSession::start(FrameSource source) {
  if (producer_.joinable() || worker_.joinable()) fail(ErrorCode::State, "session already started");
  start_ = clock_type::now();
  producer_ = std::thread([this, s = std::move(source)]() mutable { producer_loop(std::move(s)); });
  worker_ = std::thread([this] { worker_loop(); });
}

void ScanSession::stop() {
  {
    std::lock_guard lock(queue_mutex_);
    stopping_ = true;
  }
  queue_ready_.notify_all();
  if (producer_.joinable()) producer_.join();
  if (worker_.joinable()) worker_.join();
  std::lock_guard lock(state_mutex_);
  for (auto& s : subscribers_) s->close();
}

void ScanSession::wait() {
  std::unique_lock lock(state_mutex_);
  finished_cv_.wait(lock, [&] { return stats_.finished; });
}

bool ScanSession::wait_for(int timeout_ms) {
  std::unique_lock lock(state_mutex_);
  return finished_cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                               [&] { return stats_.finished; });
}

bool ScanSession::finished() const {
  std::lock_guard lock(state_mutex_);
  return stats_.finished;
}

std::shared_ptr<Subscriber> ScanSession::subscribe() {
  auto sub = std::make_shared<Subscriber>(config_.client_queue_capacity);
  std::lock_guard lock(state_mutex_);
  subscribers_.push_back(sub);
  return sub;
}

void ScanSession::unsubscribe(const std::shared_ptr<Subscriber>& subscriber) {
  subscriber->close();
  std::lock_guard lock(state_mutex_);
  std::erase(subscribers_, subscriber);
}

void ScanSession::publish(const std::string& message) {
  for (auto& s : subscribers_) s->push(message);
}

json ScanSession::hello() const {
  json classes = json::array();
  for (auto v : bundle_->classes) classes.push_back(std::string(data::to_string(v)));
  json bands = json::array();
  for (const auto& b : data::grade_bands())
    bands.push_back({{"index", b.index},
                     {"lower", b.lower},
                     {"upper", b.upper},
                     {"description", std::string(b.description)}});
  std::lock_guard lock(state_mutex_);
  return {{"type", "hello"},
          {"classes", classes},
          {"target_view", config_.target_view ? json(std::string(data::to_string(*config_.target_view))) : json()},
          {"threshold", config_.grade_threshold},
          {"queue_capacity", config_.queue_capacity},
          {"trend_window", config_.trend_window},
          {"bands", bands}};
}

json ScanSession::set_target(std::optional<data::ViewClass> view, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 10.0))
    fail(ErrorCode::InvalidArgument, "threshold must lie in [0, 10]");
  std::lock_guard lock(state_mutex_);
  config_.target_view = view;
  config_.grade_threshold = threshold;
  // Events with ids above after_frame_id use the new predicate.
  const json ack{{"type", "ack"},
                 {"view", view ? json(std::string(data::to_string(*view))) : json()},
                 {"threshold", threshold},
                 {"after_frame_id", last_event_id_}};
  publish(ack.dump());
  return ack;
}

std::optional<json> ScanSession::handle_client_message(const std::string& text,
                                                       const std::shared_ptr<Subscriber>& from) {
  (void)from;
  json request;
  try {
    request = json::parse(text);
  } catch (const json::exception&) {
    return json{{"type", "nack"}, {"error", "message is not valid JSON"}};
  }
  const std::string type = request.is_object() ? request.value("type", "") : "";
  try {
    if (type == "set_target") {
      std::optional<data::ViewClass> view;
      if (request.contains("view") && !request.at("view").is_null())
        view = data::view_from_string(request.at("view").get<std::string>());
      double threshold;
      {
        std::lock_guard lock(state_mutex_);
        threshold = config_.grade_threshold;
      }
      if (request.contains("threshold")) threshold = request.at("threshold").get<double>();
      set_target(view, threshold);
      return std::nullopt;
    }
    if (type == "request_heatmap") {
      const auto id = request.at("frame_id").get<std::uint64_t>();
      if (!heatmap_png(id))
        return json{{"type", "nack"},
                    {"request", "request_heatmap"},
                    {"frame_id", id},
                    {"error", "frame " + std::to_string(id) + " is unavailable"}};
      return json{{"type", "heatmap"},
                  {"frame_id", id},
                  {"heatmap_ref", "/heatmap/" + std::to_string(id) + ".png"}};
    }
  } catch (const std::exception& e) {
    return json{{"type", "nack"}, {"request", type}, {"error", e.what()}};
  }
  return json{{"type", "nack"}, {"request", type}, {"error", "unknown message type '" + type + "'"}};
}

std::optional<std::vector<std::uint8_t>> ScanSession::frame_png(std::uint64_t frame_id) const {
  std::shared_ptr<const data::GrayImage> image;
  {
    std::lock_guard lock(ring_mutex_);
    for (const auto& r : ring_)
      if (r.frame.id == frame_id) image = r.frame.image;
  }
  if (!image) return std::nullopt;
  return data::encode_png(*image);
}

std::optional<std::vector<std::uint8_t>> ScanSession::heatmap_png(std::uint64_t frame_id) {
  std::lock_guard heat(heatmap_mutex_);
  Recent recent;
  {
    std::lock_guard lock(ring_mutex_);
    const auto it = std::find_if(ring_.begin(), ring_.end(),
                                 [&](const Recent& r) { return r.frame.id == frame_id; });
    if (it == ring_.end()) return std::nullopt;
    recent = *it;
  }
  if (auto it = heatmaps_.find(frame_id); it != heatmaps_.end()) return it->second;
  const data::GrayImage* frame = recent.frame.image.get();
  const auto input = model::preprocess_batch(std::span(&frame, 1), bundle_->preprocess);
  const auto map = explain::compute_saliency(*bundle_, input,
                                             explain::Target::class_logit(recent.predicted));
  auto png = data::encode_png(explain::overlay(*frame, map));
  heatmaps_[frame_id] = png;
  // Keep the cache to frames still in the ring.
  while (heatmaps_.size() > config_.frame_ring) heatmaps_.erase(heatmaps_.begin());
  return png;
}

SessionStats ScanSession::stats() const {
  std::lock_guard lock(state_mutex_);
  return snapshot_locked();
}

SessionStats ScanSession::snapshot_locked() const {
  SessionStats s = stats_;
  if (!latencies_.empty()) {
    std::vector<double> sorted = latencies_;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double v : sorted) sum += v;
    s.latency_mean_ms = sum / static_cast<double>(sorted.size());
    auto quantile = [&](double q) {
      const double pos = q * static_cast<double>(sorted.size() - 1);
      const auto lo = static_cast<std::size_t>(pos);
      const auto hi = std::min(sorted.size() - 1, lo + 1);
      return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    };
    s.latency_p50_ms = quantile(0.5);
    s.latency_p95_ms = quantile(0.95);
  }
  s.grade_trend.assign(trend_.begin(), trend_.end());
  s.trend_slope = slope(trend_);
  return s;
}

void ScanSession::producer_loop(FrameSource source) {
  const auto period = std::chrono::duration<double>(1.0 / source.fps());
  const auto begin = clock_type::now();
  std::uint64_t index = 0;
  for (;;) {
    {
      std::lock_guard lock(queue_mutex_);
      if (stopping_) break;
    }
    std::optional<Frame> frame;
    try {
      frame = source.next();
    } catch (const std::exception&) {
      frame.reset();
    }
    if (!frame) break;
    std::this_thread::sleep_until(
        begin + std::chrono::duration_cast<clock_type::duration>(period * static_cast<double>(index++)));
    bool dropped = false;
    std::size_t depth;
    {
      std::lock_guard lock(queue_mutex_);
      if (stopping_) break;
      if (queue_.size() >= config_.queue_capacity) {
        queue_.pop_front();
        dropped = true;
      }
      queue_.push_back(std::move(*frame));
      depth = queue_.size();
    }
    queue_ready_.notify_one();
    std::lock_guard lock(state_mutex_);
    ++stats_.frames_produced;
    if (dropped) ++stats_.frames_dropped;
    stats_.max_queue_depth = std::max(stats_.max_queue_depth, depth);
  }
  {
    std::lock_guard lock(queue_mutex_);
    producer_done_ = true;
  }
  queue_ready_.notify_all();
}

void ScanSession::worker_loop() {
  const auto& bundle = *bundle_;
  for (;;) {
    Frame frame;
    {
      std::unique_lock lock(queue_mutex_);
      queue_ready_.wait(lock, [&] { return stopping_ || producer_done_ || !queue_.empty(); });
      if (stopping_ || queue_.empty()) break;
      frame = std::move(queue_.front());
      queue_.pop_front();
    }

    const auto t0 = clock_type::now();
    model::MacCounter counter;
    const data::GrayImage* image = frame.image.get();
    const auto input = model::preprocess_batch(std::span(&image, 1), bundle.preprocess);
    const auto prediction = model::predict(bundle, input);
    const double latency =
        std::chrono::duration<double, std::milli>(clock_type::now() - t0).count();

    StreamEvent event;
    event.frame_id = frame.id;
    const int predicted = prediction.classes.predicted[0];
    event.view = bundle.classes[static_cast<std::size_t>(predicted)];
    for (std::size_t k = 0; k < bundle.classes.size(); ++k)
      event.probabilities.emplace_back(bundle.classes[k],
                                       prediction.classes.probabilities.at(static_cast<int>(k), 0));
    event.grade = prediction.grades.reported[0];
    event.grade_band = data::grade_band(event.grade).index;
    event.latency_ms = std::max(latency, 1e-6);

    {
      std::lock_guard lock(ring_mutex_);
      ring_.push_back({frame, predicted});
      while (ring_.size() > config_.frame_ring) ring_.pop_front();
    }

    std::lock_guard lock(state_mutex_);
    event.on_target = config_.target_view && event.view == *config_.target_view &&
                      event.view != data::ViewClass::RANDOM &&
                      event.grade >= config_.grade_threshold;
    event.timestamp_ms = now_ms();
    ++stats_.events_emitted;
    ++stats_.forward_passes;
    stats_.encoder_conv_macs += counter.conv_macs();
    if (frame.truth) {
      ++stats_.truth_frames;
      if (*frame.truth == event.view) ++stats_.truth_correct;
    }
    latencies_.push_back(event.latency_ms);
    if (latencies_.size() > kLatencyWindow) latencies_.erase(latencies_.begin());
    trend_.push_back(event.grade);
    while (trend_.size() > config_.trend_window) trend_.pop_front();
    last_event_id_ = event.frame_id;
    publish(event.to_json().dump());
    if (config_.stats_every > 0 && stats_.events_emitted % config_.stats_every == 0) {
      publish(snapshot_locked().to_json().dump());
    }
  }

  std::lock_guard lock(state_mutex_);
  stats_.finished = true;
  const SessionStats final_stats = snapshot_locked();
  publish(json{{"type", "end"},
               {"frames_produced", stats_.frames_produced},
               {"events_emitted", stats_.events_emitted},
               {"frames_dropped", stats_.frames_dropped}}
              .dump());
  publish(final_stats.to_json().dump());
  finished_cv_.notify_all();
}

std::vector<json> run_session(std::shared_ptr<const model::ModelBundle> bundle, FrameSource source,
                              const SessionConfig& config, SessionStats* stats) {
  SessionConfig cfg = config;
  cfg.client_queue_capacity = std::max<std::size_t>(cfg.client_queue_capacity, 1u << 20);
  ScanSession session(std::move(bundle), cfg);
  auto sub = session.subscribe();
  std::vector<json> messages{session.hello()};
  session.start(std::move(source));
  bool ended = false;
  for (;;) {
    auto message = sub->pop(100);
    if (!message) {
      if (ended && session.finished()) break;
      continue;
    }
    messages.push_back(json::parse(*message));
    if (messages.back().at("type") == "end") ended = true;
    else if (ended && messages.back().at("type") == "stats") break;
  }
  session.stop();
  if (stats) *stats = session.stats();
  return messages;
}

}  // namespace cactus::serve
