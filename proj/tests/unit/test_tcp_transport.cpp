#include <memory>
#include <vector>

#include "doctest.h"
#include "swarmpipe/block_server.hpp"
#include "swarmpipe/errors.hpp"
#include "swarmpipe/inference_client.hpp"
#include "swarmpipe/tcp_transport.hpp"

using namespace swarmpipe;

namespace {

struct Echo final : Endpoint {
  WireMessage handle(const WireMessage& request, const std::string&) override { return request; }
};

// Directory and one server per 2-block stage, all on loopback.
struct LoopbackSwarm {
  explicit LoopbackSwarm(std::shared_ptr<const Model> m) : model(std::move(m)), dir_endpoint(dir, clock) {
    dir_listener.start(dir_endpoint);
    for (std::uint32_t s = 0; s < model->config.n_blocks / 2; ++s) {
      auto& l = listeners.emplace_back(std::make_unique<TcpListener>());
      auto& t = transports.emplace_back(std::make_unique<TcpTransport>(l->address()));
      auto& v = views.emplace_back(std::make_unique<RemoteDirectoryView>(*t, dir_listener.address()));
      ServerConfig c;
      c.id = s;
      c.address = l->address();
      c.capacity = 2;
      c.start = 2 * s;
      auto& srv = servers.emplace_back(std::make_unique<BlockServer>(c, model, *t, *v));
      srv->join();
      l->start(*srv);
    }
  }
  ~LoopbackSwarm() {
    for (auto& l : listeners) l->stop();
    dir_listener.stop();
  }

  std::shared_ptr<const Model> model;
  WallClock clock;
  Directory dir{8};
  DirectoryEndpoint dir_endpoint;
  TcpListener dir_listener;
  std::vector<std::unique_ptr<TcpListener>> listeners;
  std::vector<std::unique_ptr<TcpTransport>> transports;
  std::vector<std::unique_ptr<RemoteDirectoryView>> views;
  std::vector<std::unique_ptr<BlockServer>> servers;
};

}  // namespace

TEST_CASE("frames round-trip over loopback") {
  Echo echo;
  TcpListener l;
  l.start(echo);
  TcpTransport t("client");
  WireMessage m;
  m.kind = MessageKind::step;
  m.session[3] = 7;
  m.payload = {1, 2, 3, 250};
  for (int i = 0; i < 3; ++i) {
    const WireMessage r = t.call(l.address(), m);
    CHECK(r.kind == m.kind);
    CHECK(r.session == m.session);
    CHECK(r.payload == m.payload);
  }
  CHECK(t.bytes_sent() == 3 * framed_size(m));
  CHECK(t.ping(l.address()) >= 0.0);
  CHECK(t.send(l.address(), m).status == DeliveryStatus::delivered);
  l.stop();
  CHECK_THROWS_AS(t.call(l.address(), m), ServerFailed);
}

TEST_CASE("unreachable destinations and bad addresses") {
  TcpTransport t("client", 1.0);
  std::uint16_t dead_port = 0;
  {
    TcpListener l;  // bound, never started, then closed
    dead_port = l.port();
  }
  const std::string dead = "127.0.0.1:" + std::to_string(dead_port);
  CHECK_THROWS_AS(t.call(dead, WireMessage{}), ConnectionError);
  CHECK_THROWS_AS(t.ping(dead), Unreachable);
  CHECK_THROWS_AS(split_address("nohost"), ConfigError);
  CHECK_THROWS_AS(split_address("h:99999"), ConfigError);
  CHECK(split_address("10.0.0.1:80").second == 80);
}

TEST_CASE("generation over real sockets matches the local model") {
  auto model = std::make_shared<const Model>(init_model(ModelConfig{}));
  LoopbackSwarm swarm(model);
  const std::vector<Token> prefix{5, 17, 42, 9};
  const auto want = reference_generate(*model, prefix, 24, DecodeMode::greedy());
  for (bool relay : {false, true}) {
    TcpTransport t("client-" + std::to_string(relay));
    RemoteDirectoryView view(t, swarm.dir_listener.address());
    InferenceClient client(model, t, view, {.relay = relay});
    CHECK(client.generate(prefix, 24) == want);
    CHECK(client.current_chain().size() == 4);
  }
  CHECK(swarm.dir.snapshot(swarm.clock.now()).size() == 4);
}
