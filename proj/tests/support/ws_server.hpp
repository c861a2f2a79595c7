#pragma once

#include <poll.h>

#include <atomic>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

namespace testing {

// Local WebSocket endpoint standing in for the firehose. Serves one client:
// accepts the upgrade, sends the given frames, then watches the raw socket
// and counts every byte the client writes after the handshake.
class FrameServer {
 public:
  explicit FrameServer(std::vector<std::string> frames) : frames_(std::move(frames)) {
    namespace net = boost::asio;
    acceptor_.open(net::ip::tcp::v4());
    acceptor_.set_option(net::socket_base::reuse_address(true));
    acceptor_.bind({net::ip::make_address("127.0.0.1"), 0});
    acceptor_.listen();
    port_ = acceptor_.local_endpoint().port();
    thread_ = std::thread([this] { serve(); });
  }

  ~FrameServer() {
    stop_ = true;
    boost::system::error_code ec;
    acceptor_.close(ec);
    if (thread_.joinable()) thread_.join();
  }

  std::string url() const { return "ws://127.0.0.1:" + std::to_string(port_) + "/subscribe"; }
  bool handshake_done() const { return handshake_done_; }
  std::size_t frames_sent() const { return frames_sent_; }
  std::size_t bytes_after_handshake() const { return bytes_after_; }
  bool client_closed() const { return client_closed_; }
  std::string upgrade_target() const { return target_; }

 private:
  void serve() {
    namespace beast = boost::beast;
    namespace websocket = beast::websocket;
    boost::system::error_code ec;
    boost::asio::ip::tcp::socket socket(ioc_);
    acceptor_.accept(socket, ec);
    if (ec) return;
    websocket::stream<boost::asio::ip::tcp::socket> ws(std::move(socket));
    beast::flat_buffer buffer;
    beast::http::request<beast::http::string_body> req;
    beast::http::read(ws.next_layer(), buffer, req, ec);
    if (ec) return;
    target_ = std::string(req.target());
    ws.accept(req, ec);
    if (ec) return;
    handshake_done_ = true;
    ws.text(true);
    for (const auto& f : frames_) {
      ws.write(boost::asio::buffer(f), ec);
      if (ec) return;
      ++frames_sent_;
    }
    // Raw socket from here on: anything readable is a client write.
    const int fd = ws.next_layer().native_handle();
    char chunk[4096];
    while (!stop_) {
      pollfd p{fd, POLLIN, 0};
      if (::poll(&p, 1, 50) <= 0) continue;
      const auto n = ::recv(fd, chunk, sizeof chunk, 0);
      if (n <= 0) {
        client_closed_ = true;
        break;
      }
      bytes_after_ += static_cast<std::size_t>(n);
    }
  }

  std::vector<std::string> frames_;
  boost::asio::io_context ioc_;
  boost::asio::ip::tcp::acceptor acceptor_{ioc_};
  unsigned short port_ = 0;
  std::thread thread_;
  std::atomic<bool> stop_{false};
  std::atomic<bool> handshake_done_{false};
  std::atomic<std::size_t> frames_sent_{0};
  std::atomic<std::size_t> bytes_after_{0};
  std::atomic<bool> client_closed_{false};
  std::string target_;
};

inline std::string post_frame(const std::string& did, const std::string& rkey, const std::string& text,
                              const std::string& lang = "en") {
  return R"({"did":")" + did + R"(","time_us":1700000000000000,"kind":"commit","commit":{"rev":"r","operation":"create",)"
         R"("collection":"app.bsky.feed.post","rkey":")" + rkey + R"(","record":{"$type":"app.bsky.feed.post",)"
         R"("text":")" + text + R"(","langs":[")" + lang + R"("]}}})";
}

}  // namespace testing
