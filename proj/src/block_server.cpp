#include "swarmpipe/block_server.hpp"

#include <algorithm>
#include <chrono>
#include <span>

#include "json.hpp"
#include "swarmpipe/errors.hpp"

namespace swarmpipe {

using nlohmann::json;

void ServerConfig::validate(std::size_t n_blocks) const {
  if (capacity < 1) throw ConfigError("server capacity must be at least one block");
  if (capacity > n_blocks) throw ConfigError("server capacity exceeds the model");
  if (start && *start + capacity > n_blocks) throw ConfigError("server interval outside the model");
  if (compute_throughput < 0) throw ConfigError("compute_throughput must be non-negative");
  if (!(bandwidth_bps > 0)) throw ConfigError("bandwidth_bps must be positive");
  if (!(session_ttl_s > 0)) throw ConfigError("session_ttl_s must be positive");
  if (drop_prob && !(*drop_prob >= 0 && *drop_prob <= 1)) throw ConfigError("drop_prob must be in [0, 1]");
  if (micro_batch_tokens == 0) throw ConfigError("micro_batch_tokens must be positive");
  rebalance.validate();
}

ServerConfig ServerConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("server config: ") + e.what());
  }
  ServerConfig c;
  try {
    c.id = j.value("id", c.id);
    c.address = j.value("address", c.address);
    c.capacity = j.value("capacity", c.capacity);
    if (j.contains("start") && !j["start"].is_null()) c.start = j["start"].get<std::uint32_t>();
    c.compute_throughput = j.value("compute_throughput", c.compute_throughput);
    c.timed_benchmark = j.value("timed_benchmark", c.timed_benchmark);
    c.bandwidth_bps = j.value("bandwidth_bps", c.bandwidth_bps);
    c.session_ttl_s = j.value("session_ttl_s", c.session_ttl_s);
    c.balance = j.value("balance", c.balance);
    if (j.contains("rebalance")) {
      const auto& r = j["rebalance"];
      c.rebalance.threshold_percent = r.value("threshold_percent", c.rebalance.threshold_percent);
      c.rebalance.check_period_s = r.value("check_period_s", c.rebalance.check_period_s);
    }
    if (j.contains("crash_at") && !j["crash_at"].is_null()) c.crash_at = j["crash_at"].get<double>();
    if (j.contains("drop_prob") && !j["drop_prob"].is_null()) c.drop_prob = j["drop_prob"].get<double>();
    c.passthrough = j.value("passthrough", c.passthrough);
    c.micro_batch_tokens = j.value("micro_batch_tokens", c.micro_batch_tokens);
    if (j.contains("compute")) {
      const auto& m = j["compute"];
      c.compute.step_s = m.value("step_s", c.compute.step_s);
      c.compute.pass_base_s = m.value("pass_base_s", c.compute.pass_base_s);
      c.compute.pass_per_token_s = m.value("pass_per_token_s", c.compute.pass_per_token_s);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("server config: ") + e.what());
  }
  return c;
}

std::string ServerConfig::to_json() const {
  json j = {{"id", id},
            {"address", address},
            {"capacity", capacity},
            {"start", start ? json(*start) : json(nullptr)},
            {"compute_throughput", compute_throughput},
            {"timed_benchmark", timed_benchmark},
            {"bandwidth_bps", bandwidth_bps},
            {"session_ttl_s", session_ttl_s},
            {"balance", balance},
            {"rebalance",
             {{"threshold_percent", rebalance.threshold_percent}, {"check_period_s", rebalance.check_period_s}}},
            {"crash_at", crash_at ? json(*crash_at) : json(nullptr)},
            {"drop_prob", drop_prob ? json(*drop_prob) : json(nullptr)},
            {"passthrough", passthrough},
            {"micro_batch_tokens", micro_batch_tokens},
            {"compute",
             {{"step_s", compute.step_s},
              {"pass_base_s", compute.pass_base_s},
              {"pass_per_token_s", compute.pass_per_token_s}}}};
  return j.dump(2);
}

BlockServer::BlockServer(ServerConfig config, std::shared_ptr<const Model> model, Transport& transport,
                         DirectoryView& directory)
    : config_(std::move(config)), model_(std::move(model)), transport_(transport), directory_(directory) {
  if (!model_) throw ConfigError("block server needs a model");
  config_.validate(model_->config.n_blocks);
  if (config_.address.empty()) config_.address = transport_.local_address();
  start_ = config_.start.value_or(0);
}

BlockServer::~BlockServer() = default;

bool BlockServer::online() const {
  if (crashed_ || !joined_) return false;
  return !(config_.crash_at && now() >= *config_.crash_at);
}

ServerInfo BlockServer::info() const {
  ServerInfo s;
  s.server_id = config_.id;
  s.address = config_.address;
  s.start = start_;
  s.end = end_block();
  s.throughput = throughput_;
  s.state = online() ? ServerState::online : ServerState::offline;
  s.announced_at = now();
  return s;
}

double BlockServer::self_measure() {
  const double per_token_bits = static_cast<double>(model_->config.hidden_dim) * 4.0 * 8.0;
  const double net = config_.bandwidth_bps / per_token_bits;
  double compute = config_.compute_throughput;
  if (compute <= 0 && config_.timed_benchmark) {
    // B = 32 single-position forwards through one block.
    const BlockParams& p = model_->blocks[start_];
    KVCache cache;
    HiddenStates x;
    x.values = Matrix(1, model_->config.hidden_dim, 0.5f);
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < 32; ++i) {
      x.position_offset = cache.length();
      BlockOutput out = block_forward(p, x, cache);
      cache.append(out.delta);
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    compute = 32.0 / std::max(dt, 1e-9);
  }
  if (compute <= 0) compute = 1.0 / config_.compute.step_s;
  throughput_ = measure_throughput(net, compute);
  return throughput_;
}

std::uint64_t BlockServer::params_hash() const {
  return swarmpipe::params_hash(std::span<const BlockParams>(model_->blocks).subspan(start_, config_.capacity));
}

void BlockServer::announce(ServerState state) {
  ServerInfo s = info();
  s.state = state;
  directory_.announce(s);
  next_announce_ = now() + kAnnouncePeriod;
}

void BlockServer::join() {
  self_measure();
  const std::size_t L = model_->config.n_blocks;
  if (!config_.start) {
    const auto load = block_load(directory_.snapshot(), L);
    start_ = static_cast<std::uint32_t>(choose_start(load, config_.capacity));
  }
  announce(ServerState::joining);
  joined_ = true;  // blocks come from the shared deterministic model
  announce(ServerState::online);
  const double phase = config_.rebalance.check_period_s * static_cast<double>(config_.id % 16) / 16.0;
  next_check_ = now() + config_.rebalance.check_period_s + phase;
}

void BlockServer::leave() {
  if (!joined_) return;
  announce(ServerState::offline);
  std::lock_guard lock(mu_);
  joined_ = false;
  sessions_.clear();
  records_.clear();
}

void BlockServer::crash() {
  std::lock_guard lock(mu_);
  crashed_ = true;
  sessions_.clear();
  records_.clear();
  relay_inbox_.clear();
}

void BlockServer::tick() {
  if (!online()) return;
  {
    std::lock_guard lock(mu_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (now() - it->second.last_activity > config_.session_ttl_s) {
        records_.erase(it->first);
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }
  if (now() >= next_announce_) announce(ServerState::online);
  if (config_.balance && now() >= next_check_) {
    next_check_ = now() + config_.rebalance.check_period_s;
    maybe_rebalance();
  }
}

void BlockServer::schedule(EventLoop& loop) {
  const double period = config_.balance ? std::min(kAnnouncePeriod, config_.rebalance.check_period_s)
                                        : kAnnouncePeriod;
  arm(loop, period);
}

void BlockServer::arm(EventLoop& loop, double period) {
  std::weak_ptr<bool> alive = alive_;
  loop.schedule_after(period, [this, alive, &loop, period] {
    if (alive.expired()) return;
    tick();
    arm(loop, period);
  });
}

void BlockServer::maybe_rebalance() {
  const auto snap = directory_.snapshot();
  const auto proposal = propose_rebalance(config_.id, snap, model_->config.n_blocks, config_.rebalance);
  if (proposal) move_to(proposal->new_start);
}

void BlockServer::move_to(std::uint32_t new_start) {
  {
    std::lock_guard lock(mu_);
    // Sessions on the old interval cannot continue; clients get not_serving.
    sessions_.clear();
    records_.clear();
    relay_inbox_.clear();
    start_ = new_start;
  }
  announce(ServerState::joining);
  announce(ServerState::online);
  ++block_changes_;
}

std::size_t BlockServer::session_count() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

std::optional<std::size_t> BlockServer::session_length(const SessionId& id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return std::nullopt;
  return it->second.positions;
}

std::optional<std::size_t> BlockServer::session_width(const SessionId& id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return std::nullopt;
  return it->second.beams.size();
}

std::string BlockServer::dump_json() const {
  std::lock_guard lock(mu_);
  json sessions = json::array();
  for (const auto& [id, s] : sessions_)
    sessions.push_back({{"session", to_hex(id)},
                        {"start", s.start},
                        {"end", s.end},
                        {"width", s.beams.size()},
                        {"positions", s.positions}});
  return json{{"id", config_.id},
              {"address", config_.address},
              {"start", start_},
              {"end", end_block()},
              {"throughput", throughput_},
              {"online", online()},
              {"block_changes", block_changes_},
              {"sessions", sessions}}
      .dump(2);
}

void BlockServer::on_link_failure(const SessionId& session) {
  std::lock_guard lock(mu_);
  records_.erase(session);
  auto it = sessions_.find(session);
  if (it == sessions_.end()) return;
  it->second.beams.clear();
  it->second.positions = 0;
}

void BlockServer::deliver(const WireMessage& message, const std::string&) {
  std::lock_guard lock(mu_);
  if (message.kind == MessageKind::step_result) {
    try {
      relay_inbox_[message.session] = parse_activations(message);
    } catch (const ProtocolError&) {
      relay_inbox_.erase(message.session);
    }
  } else if (message.kind == MessageKind::close) {
    sessions_.erase(message.session);
    records_.erase(message.session);
    relay_inbox_.erase(message.session);
  }
}

WireMessage BlockServer::handle(const WireMessage& request, const std::string&) {
  std::lock_guard lock(mu_);
  try {
    switch (request.kind) {
      case MessageKind::ping:
        return make_empty(MessageKind::pong, request.session);
      case MessageKind::open_session:
        return on_open(request);
      case MessageKind::step:
        return on_step(request);
      case MessageKind::restore:
        return on_restore(request);
      case MessageKind::reorder:
        return on_reorder(request);
      case MessageKind::forward:
        return on_forward(request);
      case MessageKind::backward:
        return on_backward(request);
      case MessageKind::close:
        sessions_.erase(request.session);
        records_.erase(request.session);
        relay_inbox_.erase(request.session);
        return make_empty(MessageKind::close, request.session);
      default:
        return make_error(request.session, {ErrorCode::bad_request, "unexpected message kind"});
    }
  } catch (const ProtocolError& e) {
    return make_error(request.session, {ErrorCode::bad_request, e.what()});
  } catch (const StateDesyncError& e) {
    return make_error(request.session, {ErrorCode::desync, e.what()});
  } catch (const CapacityError& e) {
    return make_error(request.session, {ErrorCode::capacity, e.what()});
  }
}

BlockServer::Session* BlockServer::find_session(const SessionId& id, WireMessage& error) {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) {
    error = make_error(id, {ErrorCode::unknown_session, "no such session"});
    return nullptr;
  }
  Session& s = it->second;
  if (now() - s.last_activity > config_.session_ttl_s) {
    sessions_.erase(it);
    records_.erase(id);
    error = make_error(id, {ErrorCode::session_expired, "session idle past its ttl"});
    return nullptr;
  }
  if (!serves(s.start, s.end)) {
    error = make_error(id, {ErrorCode::not_serving, "interval no longer served"});
    return nullptr;
  }
  s.last_activity = now();
  return &s;
}

WireMessage BlockServer::on_open(const WireMessage& m) {
  const OpenSessionRequest req = parse_open_session(m);
  if (!serves(req.start, req.end))
    return make_error(m.session, {ErrorCode::not_serving,
                                  "blocks [" + std::to_string(req.start) + ", " + std::to_string(req.end) +
                                      ") not held by this server"});
  Session s;
  s.start = req.start;
  s.end = req.end;
  s.quantized = req.quantized;
  s.last_activity = now();
  sessions_[m.session] = std::move(s);
  records_.erase(m.session);
  relay_inbox_.erase(m.session);
  return make_empty(MessageKind::open_session, m.session);
}

void BlockServer::check_invariant(const Session& s) const {
  for (const auto& beam : s.beams)
    for (const auto& c : beam)
      if (!config_.passthrough && c.length() != s.positions)
        throw StateDesyncError("cache length diverged from processed positions");
}

// Runs a batch through the session's blocks, appending to its caches.
void BlockServer::run_cached(Session& s, std::vector<HiddenStates>& batch) {
  if (batch.empty()) throw ProtocolError("empty activation batch");
  const std::size_t tokens = batch.front().tokens();
  for (const auto& h : batch) {
    if (h.tokens() != tokens) throw ProtocolError("ragged batch");
    if (h.hidden() != model_->config.hidden_dim) throw ProtocolError("hidden size mismatch");
    if (h.position_offset != s.positions)
      throw StateDesyncError("expected position " + std::to_string(s.positions) + ", got " +
                             std::to_string(h.position_offset));
  }
  if (s.positions == 0 && s.beams.empty()) s.beams.resize(batch.size(), std::vector<KVCache>(s.end - s.start));
  if (batch.size() != s.beams.size()) throw StateDesyncError("batch width does not match the session");
  if (s.positions + tokens > model_->config.max_seq_len) throw CapacityError("sequence exceeds max_seq_len");

  const std::size_t nb = s.end - s.start;
  if (!config_.passthrough) {
    const auto blocks = std::span<const BlockParams>(model_->blocks).subspan(s.start, nb);
    for (std::size_t b = 0; b < batch.size(); ++b)
      batch[b] = forward_blocks(blocks, std::move(batch[b]), s.beams[b]);
  }
  s.positions += tokens;
  transport_.clock().advance(tokens == 1 ? config_.compute.step_time(nb)
                                         : config_.compute.pass_time(nb, tokens * batch.size()));
  check_invariant(s);
}

WireMessage BlockServer::on_step(const WireMessage& m) {
  WireMessage err;
  Session* s = find_session(m.session, err);
  if (!s) return err;
  StepRequest req = parse_step(m);
  std::vector<HiddenStates> batch;
  if (req.from_relay) {
    auto it = relay_inbox_.find(m.session);
    if (it == relay_inbox_.end())
      return make_error(m.session, {ErrorCode::relay_missing, "no relayed activations"});
    batch = std::move(it->second);
    relay_inbox_.erase(it);
    if (batch_checksum(batch) != req.relay_checksum)
      return make_error(m.session, {ErrorCode::checksum_mismatch, "relayed activations differ"});
  } else {
    batch = std::move(req.batch);
  }
  run_cached(*s, batch);
  const auto enc = s->quantized ? ActivationEncoding::q8 : ActivationEncoding::f32;
  if (req.relay_to)
    transport_.send(req.relay_to->address,
                    make_activations(MessageKind::step_result, req.relay_to->session, batch, enc));
  return make_activations(MessageKind::step_result, m.session, batch, enc);
}

WireMessage BlockServer::on_restore(const WireMessage& m) {
  WireMessage err;
  Session* s = find_session(m.session, err);
  if (!s) return err;
  RestoreRequest req = parse_restore(m);
  s->beams.clear();
  s->positions = 0;
  std::vector<HiddenStates> batch = std::move(req.batch);
  const bool empty_history = batch.empty() || batch.front().tokens() == 0;
  if (!empty_history) run_cached(*s, batch);
  if (!req.want_outputs || empty_history) batch.clear();
  return make_activations(MessageKind::step_result, m.session, batch, ActivationEncoding::f32);
}

WireMessage BlockServer::on_reorder(const WireMessage& m) {
  WireMessage err;
  Session* s = find_session(m.session, err);
  if (!s) return err;
  const auto indices = parse_reorder(m);
  if (indices.empty()) return make_error(m.session, {ErrorCode::index_out_of_range, "empty index list"});
  for (auto i : indices)
    if (i < 1 || i > s->beams.size())
      return make_error(m.session, {ErrorCode::index_out_of_range,
                                    "index " + std::to_string(i) + " outside [1, " +
                                        std::to_string(s->beams.size()) + "]"});
  std::vector<std::vector<KVCache>> next;
  next.reserve(indices.size());
  for (auto i : indices) next.push_back(s->beams[i - 1]);
  s->beams = std::move(next);
  check_invariant(*s);
  return make_empty(MessageKind::reorder, m.session);
}

// Full-sequence pass through [a, b), chunked by the micro-batch size.
HiddenStates BlockServer::run_full(std::uint32_t a, std::uint32_t b, const HiddenStates& in) {
  if (in.hidden() != model_->config.hidden_dim) throw ProtocolError("hidden size mismatch");
  if (in.position_offset != 0) throw ProtocolError("training inputs must start at position 0");
  if (in.tokens() > model_->config.max_seq_len) throw CapacityError("sequence exceeds max_seq_len");
  if (config_.passthrough) return in;
  const auto blocks = std::span<const BlockParams>(model_->blocks).subspan(a, b - a);
  std::vector<KVCache> caches(b - a);
  HiddenStates out;
  out.values = Matrix(0, in.hidden());
  for (std::size_t r = 0; r < in.tokens(); r += config_.micro_batch_tokens) {
    HiddenStates chunk;
    chunk.values = in.values.slice_rows(r, std::min(in.tokens(), r + config_.micro_batch_tokens));
    chunk.position_offset = r;
    out.values.append_rows(forward_blocks(blocks, std::move(chunk), caches).values);
  }
  return out;
}

namespace {
// Compute time for a training batch, grouped into micro-batches of whole
// sequences (a longer sequence is split into its own chunks).
double training_time(const ComputeModel& cm, std::size_t blocks, std::span<const HiddenStates> batch,
                     std::size_t micro) {
  double t = 0;
  std::size_t acc = 0;
  for (const auto& h : batch) {
    std::size_t n = h.tokens();
    while (n > micro) {
      t += cm.pass_time(blocks, micro);
      n -= micro;
    }
    if (acc + n > micro) {
      t += cm.pass_time(blocks, acc);
      acc = 0;
    }
    acc += n;
  }
  if (acc) t += cm.pass_time(blocks, acc);
  return t;
}
}  // namespace

WireMessage BlockServer::on_forward(const WireMessage& m) {
  WireMessage err;
  Session* s = find_session(m.session, err);
  if (!s) return err;
  ForwardRequest req = parse_forward(m);
  std::vector<HiddenStates> out;
  out.reserve(req.batch.size());
  for (const auto& h : req.batch) out.push_back(run_full(s->start, s->end, h));
  transport_.clock().advance(training_time(config_.compute, s->end - s->start, req.batch,
                                           config_.micro_batch_tokens));
  const auto enc = s->quantized ? ActivationEncoding::q8 : ActivationEncoding::f32;
  if (req.record)
    records_[m.session] = ForwardRecord{std::move(req.batch)};
  else
    records_.erase(m.session);
  return make_activations(MessageKind::step_result, m.session, out, enc);
}

WireMessage BlockServer::on_backward(const WireMessage& m) {
  WireMessage err;
  Session* s = find_session(m.session, err);
  if (!s) return err;
  auto rec = records_.find(m.session);
  if (rec == records_.end())
    return make_error(m.session, {ErrorCode::no_forward_record, "backward without a recorded forward"});
  const std::vector<HiddenStates> inputs = std::move(rec->second.inputs);
  records_.erase(rec);
  const auto grads = parse_activations(m);
  if (grads.size() != inputs.size()) throw ProtocolError("gradient batch does not match the forward");
  std::vector<HiddenStates> out;
  out.reserve(grads.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].tokens() != inputs[i].tokens() || grads[i].hidden() != inputs[i].hidden())
      throw ProtocolError("gradient shape does not match the forward");
    if (config_.passthrough) {
      out.push_back(grads[i]);
      continue;
    }
    // Recompute each block's input, then chain the block gradients backwards.
    std::vector<HiddenStates> xs{inputs[i]};
    for (std::uint32_t b = s->start; b + 1 < s->end; ++b) {
      HiddenStates next;
      next.values = block_forward(model_->blocks[b], xs.back(), KVCache{}).outputs.values;
      xs.push_back(std::move(next));
    }
    HiddenStates g = grads[i];
    for (std::uint32_t b = s->end; b-- > s->start;) g = block_backward(model_->blocks[b], xs[b - s->start], g);
    out.push_back(std::move(g));
  }
  transport_.clock().advance(2.0 * training_time(config_.compute, s->end - s->start, inputs,
                                                 config_.micro_batch_tokens));
  return make_activations(MessageKind::step_result, m.session, out, ActivationEncoding::f32);
}

}  // namespace swarmpipe
