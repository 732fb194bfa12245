#pragma once

#include <memory>
#include <string>

#include "serve/session.hpp"

namespace cactus::serve {

/// One port serving the WebSocket event stream (any path with an Upgrade
/// header) and plain HTTP GETs: /health, /hello, /stats, /frame/<id>.png and
/// /heatmap/<id>.png.
class ScanServer {
 public:
  ScanServer(std::shared_ptr<ScanSession> session, std::string host, unsigned short port);
  ~ScanServer();
  ScanServer(const ScanServer&) = delete;
  ScanServer& operator=(const ScanServer&) = delete;

  /// Binds and starts accepting. Port 0 picks a free port.
  void start();
  void stop();
  unsigned short port() const;
  std::size_t connected_clients() const;

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace cactus::serve
