// Copyright (c) 2026 The latentsynth Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// WebSocket transport for the synthesis engine: text frames carry one
// JSON message each. The server runs on its own I/O thread; every
// connection has a strand and a write queue so engine events from the
// worker thread never interleave with responses.

#pragma once

#include <csignal>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <boost/asio/connect.hpp>
#include <boost/asio/dispatch.hpp>
#include <boost/asio/io_context.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/asio/signal_set.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <json.hpp>

#include "lsynth/errors.hpp"
#include "lsynth/service.hpp"

namespace lsynth {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace ws = boost::beast::websocket;
using tcp = boost::asio::ip::tcp;

namespace detail {

// Route for events arriving from the engine thread. The server clears it
// before its io_context goes away, so late events are dropped. Sinks hold
// nothing that refers into the io_context.
struct EventGate {
  std::mutex mu;
  net::io_context* ioc = nullptr;
};

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, SynthesisEngine& engine, std::shared_ptr<EventGate> gate)
      : ws_(std::move(socket)), engine_(engine), gate_(std::move(gate)) {}

  void start() {
    net::dispatch(ws_.get_executor(), [self = shared_from_this()] {
      self->ws_.set_option(ws::stream_base::timeout::suggested(beast::role_type::server));
      self->ws_.async_accept([self](beast::error_code ec) {
        if (!ec) self->read();
      });
    });
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      // Only the io thread may own the session; the engine thread posts
      // through the gate holding a weak reference.
      auto sink = [weak = std::weak_ptr<WsSession>(self), gate = self->gate_](const nlohmann::json& ev) {
        std::lock_guard lk(gate->mu);
        if (gate->ioc == nullptr) return;
        net::post(*gate->ioc, [weak, msg = ev.dump()]() mutable {
          if (auto s = weak.lock())
            net::dispatch(s->ws_.get_executor(), [s, msg = std::move(msg)]() mutable { s->send(std::move(msg)); });
        });
      };
      self->send(self->engine_.handle_text(text, sink).dump());
      self->read();
    });
  }

  void send(std::string msg) {
    queue_.push_back(std::move(msg));
    if (queue_.size() == 1) write_next();
  }

  void write_next() {
    ws_.text(true);
    ws_.async_write(net::buffer(queue_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      if (ec) return;
                      self->queue_.pop_front();
                      if (!self->queue_.empty()) self->write_next();
                    });
  }

  ws::stream<beast::tcp_stream> ws_;
  SynthesisEngine& engine_;
  std::shared_ptr<EventGate> gate_;
  beast::flat_buffer buffer_;
  std::deque<std::string> queue_;
};

}  // namespace detail

class WebSocketServer {
 public:
  // Binds immediately; port 0 picks an ephemeral port.
  WebSocketServer(SynthesisEngine& engine, const std::string& host, int port)
      : engine_(engine), acceptor_(net::make_strand(ioc_)) {
    beast::error_code ec;
    const auto address = net::ip::make_address(host, ec);
    if (ec) throw ValidationError("bad host address '" + host + "'");
    const tcp::endpoint ep(address, static_cast<unsigned short>(port));
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
    if (ec) throw IoError("cannot listen on " + host + ":" + std::to_string(port) + ": " + ec.message());
    gate_->ioc = &ioc_;
    accept();
  }

  ~WebSocketServer() { stop(); }

  int port() const { return acceptor_.local_endpoint().port(); }

  // Serves on a background thread.
  void start() {
    if (!thread_.joinable()) thread_ = std::jthread([this] { ioc_.run(); });
  }

  // Serves on the calling thread until stop().
  void run() { ioc_.run(); }

  // As run(), also returning on SIGINT or SIGTERM.
  void run_until_signal() {
    net::signal_set signals(ioc_, SIGINT, SIGTERM);
    signals.async_wait([this](const beast::error_code&, int) { ioc_.stop(); });
    ioc_.run();
  }

  void stop() {
    {
      std::lock_guard lk(gate_->mu);
      gate_->ioc = nullptr;
    }
    ioc_.stop();
    if (thread_.joinable() && thread_.get_id() != std::this_thread::get_id()) thread_.join();
  }

 private:
  void accept() {
    acceptor_.async_accept(net::make_strand(ioc_), [this](beast::error_code ec, tcp::socket s) {
      if (!ec) std::make_shared<detail::WsSession>(std::move(s), engine_, gate_)->start();
      if (acceptor_.is_open()) accept();
    });
  }

  SynthesisEngine& engine_;
  std::shared_ptr<detail::EventGate> gate_ = std::make_shared<detail::EventGate>();
  net::io_context ioc_;
  tcp::acceptor acceptor_;
  std::jthread thread_;
};

// Blocking client, one message at a time.
class WebSocketClient {
 public:
  WebSocketClient(const std::string& host, int port) : ws_(ioc_) {
    tcp::resolver resolver(ioc_);
    const auto results = resolver.resolve(host, std::to_string(port));
    net::connect(ws_.next_layer(), results.begin(), results.end());
    ws_.handshake(host + ":" + std::to_string(port), "/");
    ws_.text(true);
  }

  ~WebSocketClient() {
    beast::error_code ec;
    ws_.close(ws::close_code::normal, ec);
  }

  void send(const nlohmann::json& msg) { ws_.write(net::buffer(msg.dump())); }

  nlohmann::json receive() {
    beast::flat_buffer buf;
    ws_.read(buf);
    return nlohmann::json::parse(beast::buffers_to_string(buf.data()));
  }

 private:
  net::io_context ioc_;
  ws::stream<tcp::socket> ws_;
};

}  // namespace lsynth
