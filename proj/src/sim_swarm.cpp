#include "swarmpipe/sim_swarm.hpp"

#include "swarmpipe/errors.hpp"

namespace swarmpipe {

SimSwarm::SimSwarm(std::shared_ptr<const Model> model, NetProfile profile, std::uint64_t net_seed)
    : model_(std::move(model)), net_(loop_, profile, net_seed), dir_(model_->config.n_blocks) {}

SimTransport& SimSwarm::transport_for(const std::string& address) {
  for (auto& t : transports_)
    if (t->local_address() == address) return *t;
  transports_.push_back(std::make_unique<SimTransport>(net_, address));
  return *transports_.back();
}

BlockServer& SimSwarm::add_server(ServerConfig cfg) {
  if (cfg.address.empty()) cfg.address = "server-" + std::to_string(cfg.id);
  for (const auto& s : servers_)
    if (s->config().id == cfg.id || s->config().address == cfg.address)
      throw ConfigError("duplicate server id or address " + cfg.address);
  if (cfg.drop_prob) {
    NetProfile p = net_.profile(cfg.address);
    p.failure_prob = *cfg.drop_prob;
    net_.set_profile(cfg.address, p);
  }
  auto server = std::make_unique<BlockServer>(cfg, model_, transport_for(cfg.address), view_);
  net_.attach(cfg.address, server.get());
  server->join();
  server->schedule(loop_);
  servers_.push_back(std::move(server));
  return *servers_.back();
}

void SimSwarm::add_pipeline(std::size_t stages, std::size_t replicas, std::uint32_t blocks_per_stage,
                            const ServerConfig& base, ServerId first_id) {
  ServerId id = first_id;
  for (std::size_t s = 0; s < stages; ++s)
    for (std::size_t r = 0; r < replicas; ++r) {
      ServerConfig c = base;
      c.id = id++;
      c.address.clear();
      c.capacity = blocks_per_stage;
      c.start = static_cast<std::uint32_t>(s * blocks_per_stage);
      add_server(c);
    }
}

InferenceClient& SimSwarm::add_client(ClientConfig cfg, const std::string& address) {
  clients_.push_back(std::make_unique<InferenceClient>(model_, transport_for(address), view_, cfg));
  return *clients_.back();
}

BlockServer& SimSwarm::server(ServerId id) {
  for (auto& s : servers_)
    if (s->config().id == id) return *s;
  throw ConfigError("no server with id " + std::to_string(id));
}

}  // namespace swarmpipe
