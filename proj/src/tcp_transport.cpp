#include "swarmpipe/tcp_transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>

#include "swarmpipe/errors.hpp"

namespace swarmpipe {

namespace {

constexpr std::uint64_t kMaxPayload = 1ull << 31;

bool write_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0 && errno == EINTR) continue;
    if (w <= 0) return false;
    data += w;
    n -= static_cast<std::size_t>(w);
  }
  return true;
}

bool read_all(int fd, std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t r = ::recv(fd, data, n, 0);
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) return false;
    data += r;
    n -= static_cast<std::size_t>(r);
  }
  return true;
}

// nullopt on EOF, timeout or a bad frame.
std::optional<std::vector<std::uint8_t>> read_frame(int fd) {
  std::vector<std::uint8_t> buf(kFrameHeaderBytes);
  if (!read_all(fd, buf.data(), buf.size())) return std::nullopt;
  std::uint64_t len = 0;
  try {
    len = frame_payload_length(std::span<const std::uint8_t, kFrameHeaderBytes>(buf.data(), kFrameHeaderBytes));
  } catch (const ProtocolError&) {
    return std::nullopt;
  }
  if (len > kMaxPayload) return std::nullopt;
  buf.resize(framed_size(static_cast<std::size_t>(len)));
  if (!read_all(fd, buf.data() + kFrameHeaderBytes, buf.size() - kFrameHeaderBytes)) return std::nullopt;
  return buf;
}

void set_timeout(int fd, double seconds) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(seconds);
  tv.tv_usec = static_cast<suseconds_t>((seconds - static_cast<double>(tv.tv_sec)) * 1e6);
  setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

bool one_way(MessageKind k) { return k == MessageKind::step_result || k == MessageKind::close; }

}  // namespace

std::pair<std::string, std::uint16_t> split_address(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == address.size())
    throw ConfigError("address must be host:port, got '" + address + "'");
  unsigned long port = 0;
  try {
    std::size_t used = 0;
    port = std::stoul(address.substr(colon + 1), &used);
    if (used != address.size() - colon - 1) throw ConfigError("");
  } catch (const std::exception&) {
    throw ConfigError("bad port in '" + address + "'");
  }
  if (port > 65535) throw ConfigError("bad port in '" + address + "'");
  return {address.substr(0, colon), static_cast<std::uint16_t>(port)};
}

// ---- listener -------------------------------------------------------------

TcpListener::TcpListener(std::string host, std::uint16_t port) : host_(std::move(host)), port_(port) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error("socket() failed");
  int one = 1;
  setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port_);
  if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw ConfigError("listen host must be an IPv4 address: " + host_);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 64) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    throw Error("cannot listen on " + address() + ": " + why);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  stop();
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void TcpListener::start(Endpoint& endpoint) {
  if (running_) return;
  endpoint_ = &endpoint;
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void TcpListener::stop() {
  if (!running_.exchange(false)) return;
  if (acceptor_.joinable()) acceptor_.join();
  {
    std::lock_guard lock(conn_mu_);
    for (int fd : conns_) ::shutdown(fd, SHUT_RDWR);
  }
  for (auto& t : workers_)
    if (t.joinable()) t.join();
  workers_.clear();
}

void TcpListener::accept_loop() {
  while (running_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 100) <= 0) continue;
    sockaddr_in peer{};
    socklen_t len = sizeof peer;
    const int fd = ::accept(listen_fd_, reinterpret_cast<sockaddr*>(&peer), &len);
    if (fd < 0) continue;
    int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    char ip[INET_ADDRSTRLEN] = {};
    ::inet_ntop(AF_INET, &peer.sin_addr, ip, sizeof ip);
    std::string name = std::string(ip) + ":" + std::to_string(ntohs(peer.sin_port));
    std::lock_guard lock(conn_mu_);
    conns_.push_back(fd);
    workers_.emplace_back([this, fd, name] { serve(fd, name); });
  }
}

void TcpListener::serve(int fd, std::string peer) {
  while (running_) {
    const auto frame = read_frame(fd);
    if (!frame) break;
    WireMessage reply;
    try {
      const WireMessage request = decode_frame(*frame);
      std::lock_guard lock(endpoint_mu_);
      if (request.kind == MessageKind::ping) {
        reply.kind = MessageKind::pong;
        reply.session = request.session;
      } else if (!endpoint_->online()) {
        break;  // a crashed endpoint just hangs up
      } else if (one_way(request.kind)) {
        endpoint_->deliver(request, peer);
        reply.kind = MessageKind::pong;
        reply.session = request.session;
      } else {
        reply = endpoint_->handle(request, peer);
      }
    } catch (const std::exception&) {
      break;
    }
    const auto out = encode_frame(reply);
    if (!write_all(fd, out.data(), out.size())) break;
  }
  ::close(fd);
  std::lock_guard lock(conn_mu_);
  conns_.erase(std::remove(conns_.begin(), conns_.end(), fd), conns_.end());
}

// ---- transport ------------------------------------------------------------

TcpTransport::TcpTransport(std::string self_address, double timeout_s)
    : self_(std::move(self_address)), timeout_s_(timeout_s) {}

TcpTransport::~TcpTransport() {
  std::lock_guard lock(mu_);
  for (auto& [_, c] : conns_)
    if (c->fd >= 0) ::close(c->fd);
}

std::shared_ptr<TcpTransport::Conn> TcpTransport::connect(const std::string& dest) {
  {
    std::lock_guard lock(mu_);
    auto it = conns_.find(dest);
    if (it != conns_.end()) return it->second;
  }
  const auto [host, port] = split_address(dest);
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res)
    throw ConnectionError("cannot resolve " + dest);
  const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(res);
    throw ConnectionError("socket() failed");
  }
  set_timeout(fd, timeout_s_);
  const int rc = ::connect(fd, res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0) {
    ::close(fd);
    throw ConnectionError("cannot connect to " + dest);
  }
  int one = 1;
  setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  auto c = std::make_shared<Conn>();
  c->fd = fd;
  std::lock_guard lock(mu_);
  auto [it, inserted] = conns_.emplace(dest, c);
  if (!inserted) ::close(fd);
  return it->second;
}

void TcpTransport::drop(const std::string& dest, const std::shared_ptr<Conn>& c) {
  std::lock_guard lock(mu_);
  auto it = conns_.find(dest);
  if (it != conns_.end() && it->second == c) conns_.erase(it);
  if (c->fd >= 0) {
    ::close(c->fd);
    c->fd = -1;
  }
}

WireMessage TcpTransport::exchange(const std::string& dest, const WireMessage& request) {
  const auto out = encode_frame(request);
  // A cached connection may have been closed by the peer; retry once on a
  // fresh one before reporting the failure.
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto c = connect(dest);
    std::lock_guard lock(c->mu);
    if (c->fd < 0) continue;
    if (!write_all(c->fd, out.data(), out.size())) {
      drop(dest, c);
      continue;
    }
    bytes_sent_ += out.size();
    const auto in = read_frame(c->fd);
    if (!in) {
      drop(dest, c);
      throw ServerFailed("no reply from " + dest);
    }
    bytes_received_ += in->size();
    return decode_frame(*in);
  }
  throw ConnectionError("cannot reach " + dest);
}

WireMessage TcpTransport::call(const std::string& dest, const WireMessage& request) {
  return exchange(dest, request);
}

DeliveryOutcome TcpTransport::send(const std::string& dest, const WireMessage& message) {
  DeliveryOutcome out;
  out.framed_bytes = framed_size(message);
  try {
    exchange(dest, message);
    out.deliver_at = clock_.now();
  } catch (const ConnectionError&) {
    out.status = DeliveryStatus::connection_error;
  } catch (const ServerFailed&) {
    out.status = DeliveryStatus::dropped;
  }
  return out;
}

double TcpTransport::ping(const std::string& dest) {
  WireMessage m;
  m.kind = MessageKind::ping;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const WireMessage r = exchange(dest, m);
    if (r.kind != MessageKind::pong) throw Unreachable("bad ping reply from " + dest);
  } catch (const ServerFailed& e) {
    throw Unreachable(std::string("ping failed: ") + e.what());
  }
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace swarmpipe
