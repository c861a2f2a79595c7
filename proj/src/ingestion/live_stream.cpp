#include <algorithm>
#include <cmath>
#include <mutex>
#include <regex>

#include <boost/asio/co_spawn.hpp>
#include <boost/asio/detached.hpp>
#include <boost/asio/io_context.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/ssl.hpp>
#include <boost/asio/steady_timer.hpp>
#include <boost/asio/use_awaitable.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/ssl.hpp>
#include <boost/beast/websocket.hpp>
#include <boost/beast/websocket/ssl.hpp>

#include "botverse/errors.hpp"
#include "botverse/ingestion.hpp"

namespace botverse {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using asio::awaitable;
using asio::use_awaitable;

namespace {

struct WsUrl {
  bool tls = false;
  std::string host;
  std::string port;
  std::string target;
};

WsUrl parse_ws_url(const std::string& url) {
  static const std::regex re(R"(^(wss?)://([^/:?]+)(?::(\d+))?([/?].*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw Error(ErrorCode::InvalidSpec, "bad stream endpoint '" + url + "'");
  WsUrl u;
  u.tls = m[1] == "wss";
  u.host = m[2];
  u.port = m[3].matched ? m[3].str() : (u.tls ? "443" : "80");
  u.target = m[4].matched ? m[4].str() : "/";
  if (u.target.front() == '?') u.target.insert(0, "/");
  return u;
}

}  // namespace

struct LiveStream::Impl {
  StreamConfig config;
  RecordHandler on_record;
  std::atomic<bool>& connected;
  Rng jitter;
  WsUrl url;

  asio::io_context ioc;
  asio::ssl::context tls{asio::ssl::context::tls_client};
  std::thread thread;
  std::atomic<bool> stopping{false};

  mutable std::mutex counters_mutex;
  IngestionCounters counters;

  Impl(StreamConfig c, RecordHandler h, std::uint64_t seed, std::atomic<bool>& conn)
      : config(std::move(c)), on_record(std::move(h)), connected(conn), jitter(seed), url(parse_ws_url(config.endpoint)) {
    tls.set_default_verify_paths();
    tls.set_verify_mode(asio::ssl::verify_peer);
  }

  template <typename F>
  void bump(F f) {
    std::lock_guard lock(counters_mutex);
    f(counters);
  }

  void deliver(std::string frame) {
    try {
      RawRecord r = parse_frame(std::move(frame), wall_clock_us());
      bump([](auto& c) { ++c.records; });
      on_record(std::move(r));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ProtocolError) throw;
      bump([](auto& c) { ++c.protocol_errors; });
    }
  }

  template <typename Ws>
  awaitable<void> read_frames(Ws& ws) {
    ws.set_option(websocket::stream_base::timeout::suggested(beast::role_type::client));
    ws.read_message_max(8u << 20);
    ws.set_option(websocket::stream_base::decorator(
        [](websocket::request_type& req) { req.set(beast::http::field::user_agent, "botverse-ingest"); }));
    co_await ws.async_handshake(url.host + ":" + url.port, url.target, use_awaitable);
    connected = true;
    beast::flat_buffer buffer;
    while (!stopping) {
      co_await ws.async_read(buffer, use_awaitable);
      if (!ws.got_text()) {
        buffer.consume(buffer.size());
        bump([](auto& c) { ++c.protocol_errors; });
        continue;
      }
      deliver(beast::buffers_to_string(buffer.data()));
      buffer.consume(buffer.size());
    }
  }

  awaitable<void> session() {
    auto ex = co_await asio::this_coro::executor;
    tcp::resolver resolver(ex);
    auto endpoints = co_await resolver.async_resolve(url.host, url.port, use_awaitable);
    if (url.tls) {
      websocket::stream<beast::ssl_stream<beast::tcp_stream>> ws(ex, tls);
      auto& lowest = beast::get_lowest_layer(ws);
      lowest.expires_after(std::chrono::seconds(15));
      co_await lowest.async_connect(endpoints, use_awaitable);
      if (!SSL_set_tlsext_host_name(ws.next_layer().native_handle(), url.host.c_str()))
        throw Error(ErrorCode::ConnectFailed, "cannot set SNI host");
      ws.next_layer().set_verify_callback(asio::ssl::host_name_verification(url.host));
      co_await ws.next_layer().async_handshake(asio::ssl::stream_base::client, use_awaitable);
      lowest.expires_never();
      co_await read_frames(ws);
    } else {
      websocket::stream<beast::tcp_stream> ws(ex);
      auto& lowest = beast::get_lowest_layer(ws);
      lowest.expires_after(std::chrono::seconds(15));
      co_await lowest.async_connect(endpoints, use_awaitable);
      lowest.expires_never();
      co_await read_frames(ws);
    }
  }

  // Full jitter: uniform in [0, min(max, initial * 2^attempt)].
  std::chrono::milliseconds backoff(int attempt) {
    const double cap = static_cast<double>(config.reconnect_backoff.max.count());
    const double base = static_cast<double>(config.reconnect_backoff.initial.count()) * std::ldexp(1.0, std::min(attempt, 30));
    return std::chrono::milliseconds(static_cast<std::int64_t>(jitter.uniform() * std::min(cap, base)));
  }

  awaitable<void> loop() {
    auto ex = co_await asio::this_coro::executor;
    int attempt = 0;
    while (!stopping) {
      try {
        co_await session();
      } catch (const std::exception&) {
      }
      const bool had_connection = connected.exchange(false);
      if (stopping) break;
      if (had_connection) {
        attempt = 0;
      } else {
        bump([](auto& c) { ++c.connect_failures; });
      }
      asio::steady_timer timer(ex, backoff(attempt++));
      co_await timer.async_wait(use_awaitable);
      bump([](auto& c) { ++c.reconnects; });
    }
  }
};

LiveStream::LiveStream(StreamConfig config, RecordHandler on_record, std::uint64_t jitter_seed)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(on_record), jitter_seed, connected_)) {}

LiveStream::~LiveStream() { stop(); }

void LiveStream::start() {
  if (impl_->thread.joinable()) return;
  asio::co_spawn(impl_->ioc, impl_->loop(), asio::detached);
  impl_->thread = std::thread([this] {
    try {
      impl_->ioc.run();
    } catch (const std::exception&) {
    }
  });
}

void LiveStream::stop() {
  impl_->stopping = true;
  // Stopping the context abandons the pending read, so shutdown never waits
  // for another frame to arrive.
  impl_->ioc.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
  connected_ = false;
}

IngestionCounters LiveStream::counters() const {
  std::lock_guard lock(impl_->counters_mutex);
  return impl_->counters;
}

}  // namespace botverse
