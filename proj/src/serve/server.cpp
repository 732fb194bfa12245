#include "serve/server.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <charconv>
#include <deque>
#include <mutex>
#include <set>
#include <thread>

#include "common/error.hpp"

namespace cactus::serve {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

struct ScanServer::Impl {
  std::shared_ptr<ScanSession> session;
  std::string host;
  unsigned short requested_port;
  net::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  net::thread_pool control{1};  // heatmaps and client messages, off the io thread
  std::thread io_thread;
  unsigned short bound_port = 0;
  bool running = false;

  mutable std::mutex clients_mutex;
  std::set<std::shared_ptr<Subscriber>> clients;

  void accept();
  void add_client(const std::shared_ptr<Subscriber>& s) {
    std::lock_guard lock(clients_mutex);
    clients.insert(s);
  }
  void remove_client(const std::shared_ptr<Subscriber>& s) {
    {
      std::lock_guard lock(clients_mutex);
      clients.erase(s);
    }
    session->unsubscribe(s);
  }
};

namespace {

std::optional<std::uint64_t> parse_id(std::string_view target, std::string_view prefix) {
  if (!target.starts_with(prefix) || !target.ends_with(".png")) return std::nullopt;
  const auto digits = target.substr(prefix.size(), target.size() - prefix.size() - 4);
  std::uint64_t id = 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), id);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || digits.empty())
    return std::nullopt;
  return id;
}

class WsConnection : public std::enable_shared_from_this<WsConnection> {
 public:
  WsConnection(tcp::socket socket, ScanServer::Impl& server)
      : ws_(std::move(socket)), server_(server) {}

  void run(http::request<http::string_body> request) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(request, [self = shared_from_this()](beast::error_code ec) {
      if (!ec) self->on_accept();
    });
  }

 private:
  void on_accept() {
    send(server_.session->hello().dump());
    subscriber_ = server_.session->subscribe();
    server_.add_client(subscriber_);
    std::weak_ptr<WsConnection> weak = weak_from_this();
    auto executor = ws_.get_executor();
    subscriber_->set_notify([weak, executor] {
      net::post(executor, [weak] {
        if (auto self = weak.lock()) self->drain();
      });
    });
    drain();
    read();
  }

  void drain() {
    if (!subscriber_) return;
    while (auto message = subscriber_->try_pop()) send(std::move(*message));
  }

  void send(std::string message) {
    outbox_.push_back(std::move(message));
    if (!writing_) write_next();
  }

  void write_next() {
    if (outbox_.empty() || closed_) {
      writing_ = false;
      return;
    }
    writing_ = true;
    ws_.text(true);
    ws_.async_write(net::buffer(outbox_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      self->outbox_.pop_front();
                      if (ec) {
                        self->close();
                        return;
                      }
                      self->write_next();
                    });
  }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->close();
        return;
      }
      std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      net::post(self->server_.control, [self, text = std::move(text)] {
        auto reply = self->server_.session->handle_client_message(text, self->subscriber_);
        if (reply)
          net::post(self->ws_.get_executor(),
                    [self, r = reply->dump()]() mutable { self->send(std::move(r)); });
      });
      self->read();
    });
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    if (subscriber_) server_.remove_client(subscriber_);
  }

  websocket::stream<beast::tcp_stream> ws_;
  ScanServer::Impl& server_;
  beast::flat_buffer buffer_;
  std::shared_ptr<Subscriber> subscriber_;
  std::deque<std::string> outbox_;
  bool writing_ = false;
  bool closed_ = false;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket socket, ScanServer::Impl& server)
      : stream_(std::move(socket)), server_(server) {}

  void run() { read(); }

 private:
  void read() {
    request_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, request_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) {
                       if (ec) return;
                       self->on_request();
                     });
  }

  void on_request() {
    if (websocket::is_upgrade(request_)) {
      stream_.expires_never();
      std::make_shared<WsConnection>(stream_.release_socket(), server_)->run(std::move(request_));
      return;
    }
    if (request_.method() != http::verb::get && request_.method() != http::verb::head) {
      respond(http::status::method_not_allowed, "application/json",
              json{{"error", "only GET is supported"}}.dump());
      return;
    }
    std::string target(request_.target());
    if (auto q = target.find('?'); q != std::string::npos) target.resize(q);
    auto& session = *server_.session;
    if (target == "/health") {
      respond(http::status::ok, "application/json", json{{"status", "ok"}}.dump());
    } else if (target == "/hello") {
      respond(http::status::ok, "application/json", session.hello().dump());
    } else if (target == "/stats") {
      respond(http::status::ok, "application/json", session.stats().to_json().dump());
    } else if (auto id = parse_id(target, "/frame/")) {
      send_png(session.frame_png(*id), *id);
    } else if (auto hid = parse_id(target, "/heatmap/")) {
      // Saliency needs a backward pass; keep the io thread free for events.
      net::post(server_.control, [self = shared_from_this(), id = *hid] {
        std::optional<std::vector<std::uint8_t>> png;
        std::string error;
        try {
          png = self->server_.session->heatmap_png(id);
        } catch (const std::exception& e) {
          error = e.what();
        }
        net::post(self->stream_.get_executor(), [self, png = std::move(png), error, id]() mutable {
          if (!error.empty())
            self->respond(http::status::internal_server_error, "application/json",
                          json{{"error", error}}.dump());
          else
            self->send_png(std::move(png), id);
        });
      });
    } else {
      respond(http::status::not_found, "application/json",
              json{{"error", "no route for " + target}}.dump());
    }
  }

  void send_png(std::optional<std::vector<std::uint8_t>> png, std::uint64_t id) {
    if (!png) {
      respond(http::status::not_found, "application/json",
              json{{"error", "frame " + std::to_string(id) + " is unavailable"}}.dump());
      return;
    }
    respond(http::status::ok, "image/png", std::string(png->begin(), png->end()));
  }

  void respond(http::status status, const char* type, std::string body) {
    auto response = std::make_shared<http::response<http::string_body>>(status, request_.version());
    response->set(http::field::server, "cactus");
    response->set(http::field::content_type, type);
    response->set(http::field::access_control_allow_origin, "*");
    response->keep_alive(request_.keep_alive());
    const bool head = request_.method() == http::verb::head;
    response->body() = std::move(body);
    response->prepare_payload();
    if (head) response->body().clear();
    http::async_write(stream_, *response,
                      [self = shared_from_this(), response](beast::error_code ec, std::size_t) {
                        if (ec) return;
                        if (response->keep_alive()) {
                          self->read();
                        } else {
                          beast::error_code ignored;
                          self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
                        }
                      });
  }

  beast::tcp_stream stream_;
  ScanServer::Impl& server_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> request_;
};

}  // namespace

void ScanServer::Impl::accept() {
  acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;
    std::make_shared<HttpConnection>(std::move(socket), *this)->run();
    accept();
  });
}

ScanServer::ScanServer(std::shared_ptr<ScanSession> session, std::string host, unsigned short port)
    : impl_(std::make_unique<Impl>()) {
  require(session != nullptr, "server needs a session");
  impl_->session = std::move(session);
  impl_->host = std::move(host);
  impl_->requested_port = port;
}

ScanServer::~ScanServer() {
  stop();
}

void ScanServer::start() {
  auto& s = *impl_;
  if (s.running) fail(ErrorCode::State, "server already started");
  beast::error_code ec;
  const auto address = net::ip::make_address(s.host, ec);
  if (ec) fail(ErrorCode::InvalidArgument, "bad listen address '" + s.host + "'");
  const tcp::endpoint endpoint(address, s.requested_port);
  s.acceptor.open(endpoint.protocol(), ec);
  if (!ec) s.acceptor.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) s.acceptor.bind(endpoint, ec);
  if (!ec) s.acceptor.listen(net::socket_base::max_listen_connections, ec);
  if (ec) fail(ErrorCode::Io, "cannot listen on " + s.host + ":" + std::to_string(s.requested_port) +
                                  ": " + ec.message());
  s.bound_port = s.acceptor.local_endpoint().port();
  s.accept();
  s.running = true;
  s.io_thread = std::thread([&s] { s.ioc.run(); });
}

void ScanServer::stop() {
  auto& s = *impl_;
  if (!s.running) return;
  s.running = false;
  net::post(s.ioc, [&s] {
    beast::error_code ignored;
    s.acceptor.close(ignored);
  });
  s.ioc.stop();
  if (s.io_thread.joinable()) s.io_thread.join();
  s.control.join();
  std::set<std::shared_ptr<Subscriber>> clients;
  {
    std::lock_guard lock(s.clients_mutex);
    clients.swap(s.clients);
  }
  for (const auto& c : clients) {
    c->set_notify(nullptr);
    s.session->unsubscribe(c);
  }
}

unsigned short ScanServer::port() const {
  return impl_->bound_port;
}

std::size_t ScanServer::connected_clients() const {
  std::lock_guard lock(impl_->clients_mutex);
  return impl_->clients.size();
}

}  // namespace cactus::serve
