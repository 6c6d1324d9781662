#pragma once

// Real socket backing for Transport. Addresses are "host:port". Every frame
// gets a reply frame; one-way kinds (relay, close) are acknowledged with an
// empty PONG so the sender knows the bytes arrived.

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "swarmpipe/netsim.hpp"

namespace swarmpipe {

/// Accepts connections and feeds frames to one Endpoint. Endpoint calls are
/// serialized.
class TcpListener {
 public:
  // Binds at once, so port() is known before the endpoint exists. Port 0
  // picks a free port.
  explicit TcpListener(std::string host = "127.0.0.1", std::uint16_t port = 0);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  void start(Endpoint& endpoint);
  void stop();
  std::uint16_t port() const noexcept { return port_; }
  std::string address() const { return host_ + ":" + std::to_string(port_); }

 private:
  void accept_loop();
  void serve(int fd, std::string peer);

  Endpoint* endpoint_ = nullptr;
  std::string host_;
  std::uint16_t port_;
  int listen_fd_ = -1;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex endpoint_mu_;
  std::mutex conn_mu_;
  std::vector<int> conns_;
  std::vector<std::thread> workers_;
};

class TcpTransport final : public Transport {
 public:
  explicit TcpTransport(std::string self_address, double timeout_s = 10.0);
  ~TcpTransport() override;

  WireMessage call(const std::string& dest, const WireMessage& request) override;
  DeliveryOutcome send(const std::string& dest, const WireMessage& message) override;
  double ping(const std::string& dest) override;
  Clock& clock() override { return clock_; }
  const std::string& local_address() const override { return self_; }

  std::uint64_t bytes_sent() const noexcept { return bytes_sent_; }
  std::uint64_t bytes_received() const noexcept { return bytes_received_; }

 private:
  struct Conn {
    int fd = -1;
    std::mutex mu;
  };
  std::shared_ptr<Conn> connect(const std::string& dest);
  void drop(const std::string& dest, const std::shared_ptr<Conn>& c);
  WireMessage exchange(const std::string& dest, const WireMessage& request);

  std::string self_;
  double timeout_s_;
  WallClock clock_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Conn>> conns_;
  std::atomic<std::uint64_t> bytes_sent_{0};
  std::atomic<std::uint64_t> bytes_received_{0};
};

// "host:port" -> (host, port). Throws ConfigError.
std::pair<std::string, std::uint16_t> split_address(const std::string& address);

}  // namespace swarmpipe
