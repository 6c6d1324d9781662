#pragma once

// A whole swarm inside one process on the simulated network: directory,
// servers with their transports, and clients. Used by tests, benchmarks,
// the CLI and the Python module.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "swarmpipe/block_server.hpp"
#include "swarmpipe/inference_client.hpp"

namespace swarmpipe {

class SimSwarm {
 public:
  SimSwarm(std::shared_ptr<const Model> model, NetProfile profile, std::uint64_t net_seed);
  SimSwarm(const ModelConfig& model, NetProfile profile, std::uint64_t net_seed)
      : SimSwarm(std::make_shared<Model>(init_model(model)), profile, net_seed) {}

  // Attaches, joins and starts the server's announcement (and, when enabled,
  // rebalancing) timers. The address defaults to "server-<id>".
  BlockServer& add_server(ServerConfig cfg);
  // `replicas` servers per stage, consecutive stages of `blocks_per_stage`.
  // Ids run stage-major from `first_id`.
  void add_pipeline(std::size_t stages, std::size_t replicas, std::uint32_t blocks_per_stage,
                    const ServerConfig& base = {}, ServerId first_id = 0);

  InferenceClient& add_client(ClientConfig cfg, const std::string& address = "client");
  SimTransport& transport_for(const std::string& address);

  std::shared_ptr<const Model> model() const noexcept { return model_; }
  SimClock& clock() noexcept { return clock_; }
  EventLoop& loop() noexcept { return loop_; }
  SimNetwork& net() noexcept { return net_; }
  Directory& directory() noexcept { return dir_; }
  DirectoryView& directory_view() noexcept { return view_; }
  const std::vector<std::unique_ptr<BlockServer>>& servers() const noexcept { return servers_; }
  BlockServer& server(ServerId id);

 private:
  std::shared_ptr<const Model> model_;
  SimClock clock_;
  EventLoop loop_{clock_};
  SimNetwork net_;
  Directory dir_;
  LocalDirectoryView view_{dir_, clock_};
  std::vector<std::unique_ptr<SimTransport>> transports_;
  std::vector<std::unique_ptr<BlockServer>> servers_;
  std::vector<std::unique_ptr<InferenceClient>> clients_;
};

}  // namespace swarmpipe
