#include "swarmpipe/inference_client.hpp"

#include <algorithm>
#include <cmath>

#include "swarmpipe/errors.hpp"
#include "swarmpipe/quantize.hpp"

namespace swarmpipe {

namespace {

// Session-level error reply: the stage is unusable, unlike a plain drop.
class RemoteError : public ServerFailed {
 public:
  using ServerFailed::ServerFailed;
};

// Unwinds a RESTART attempt.
struct RestartSignal {};

void check_reply(const WireMessage& reply, const std::string& dest) {
  if (reply.kind != MessageKind::error) return;
  const ErrorReply e = parse_error(reply);
  const std::string what = dest + ": " + to_string(e.code) + " (" + e.message + ")";
  switch (e.code) {
    case ErrorCode::capacity:
      throw CapacityError(what);
    case ErrorCode::bad_request:
    case ErrorCode::index_out_of_range:
      throw ProtocolError(what);
    default:
      throw RemoteError(what);
  }
}

HiddenStates empty_like(std::size_t d) {
  HiddenStates h;
  h.values = Matrix(0, d);
  return h;
}

}  // namespace

const char* to_string(Strategy s) noexcept {
  switch (s) {
    case Strategy::dual_cache:
      return "dual-cache";
    case Strategy::restart:
      return "restart";
    case Strategy::cacheless:
      return "cacheless";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  std::string n = name;
  std::replace(n.begin(), n.end(), '_', '-');
  if (n == "dual-cache") return Strategy::dual_cache;
  if (n == "restart") return Strategy::restart;
  if (n == "cacheless") return Strategy::cacheless;
  throw ConfigError("unknown strategy '" + name + "'");
}

InferenceClient::InferenceClient(std::shared_ptr<const Model> model, Transport& transport,
                                 DirectoryView& directory, ClientConfig config)
    : model_(std::move(model)),
      transport_(transport),
      directory_(directory),
      config_(config),
      router_(model_ ? model_->config.n_blocks : 1),
      bans_(config.ban_cooldown_s),
      session_rng_(SplitMix64::keyed(config.seed, 0x636c69656e74)) {
  if (!model_) throw ConfigError("client needs a model");
}

InferenceClient::~InferenceClient() {
  try {
    close_all();
  } catch (...) {
  }
}

std::vector<ChainHop> InferenceClient::current_chain() const {
  std::vector<ChainHop> out;
  for (const auto& s : stages_) out.push_back(s.hop);
  return out;
}

SessionId InferenceClient::new_session() {
  SessionId id{};
  const std::uint64_t a = session_rng_.next(), b = session_rng_.next();
  for (int i = 0; i < 8; ++i) {
    id[i] = static_cast<std::uint8_t>(a >> (8 * i));
    id[8 + i] = static_cast<std::uint8_t>(b >> (8 * i));
  }
  return id;
}

WireMessage InferenceClient::call(const std::string& dest, const WireMessage& m) {
  stats_.bytes_sent += framed_size(m);
  WireMessage reply = transport_.call(dest, m);
  stats_.bytes_received += framed_size(reply);
  return reply;
}

void InferenceClient::check_budget() const {
  if (transport_.clock().now() - stats_.start_time > config_.budget_s)
    throw BudgetExceeded("simulated time budget of " + std::to_string(config_.budget_s) + " s exceeded");
}

void InferenceClient::begin_stats() {
  stats_ = GenerationStats{};
  stats_.start_time = transport_.clock().now();
}

HiddenStates InferenceClient::as_seen(const HiddenStates& h) const {
  if (!config_.quantized) return h;
  return dequantize_hidden(quantize_hidden(h));
}

void InferenceClient::refresh() {
  const auto snap = directory_.snapshot();
  router_.sync(snap, bans_, transport_.clock().now(), [this](const ServerInfo& s) {
    if (auto e = latency_.estimate(s.address)) return *e;
    double rtt;
    try {
      rtt = transport_.ping(s.address);
    } catch (const Unreachable&) {
      rtt = 1e6;
    }
    latency_.observe(s.address, rtt);
    return rtt;
  });
}

Chain InferenceClient::route(std::uint32_t a, std::uint32_t b, std::size_t&) {
  try {
    return router_.find_best_chain(a, b);
  } catch (const NoRouteError&) {
    // Bans may hide the only servers left: forget them and look again.
    bans_.clear();
    router_.clear_bans();
    refresh();
    try {
      return router_.find_best_chain(a, b);
    } catch (const NoRouteError& e) {
      throw SwarmUnavailable(e.what());
    }
  }
}

void InferenceClient::fail_server(ServerId id) {
  bans_.ban(id, transport_.clock().now());
  router_.ban(id);
  ++stats_.failures;
}

void InferenceClient::open_stage(Stage& s) {
  s.session = new_session();
  const WireMessage reply =
      call(s.hop.address, make_open_session(s.session, {s.hop.start, s.hop.end, config_.quantized}));
  check_reply(reply, s.hop.address);
}

std::vector<InferenceClient::Stage> InferenceClient::open_chain(std::uint32_t a, std::uint32_t b,
                                                                std::size_t& retries) {
  for (;;) {
    refresh();
    const Chain chain = route(a, b, retries);
    std::vector<Stage> out;
    ServerId current = 0;
    try {
      for (const auto& hop : chain.hops) {
        current = hop.server_id;
        Stage st{hop, {}, {}};
        open_stage(st);
        out.push_back(std::move(st));
      }
      return out;
    } catch (const ServerFailed&) {
      for (const auto& st : out) transport_.send(st.hop.address, make_empty(MessageKind::close, st.session));
      fail_server(current);
      if (++retries > config_.max_retries) throw SwarmUnavailable("could not open a chain");
      check_budget();
    }
  }
}

void InferenceClient::close_all() {
  for (const auto& st : stages_) {
    const WireMessage m = make_empty(MessageKind::close, st.session);
    stats_.bytes_sent += framed_size(m);
    transport_.send(st.hop.address, m);
  }
  stages_.clear();
}

std::vector<HiddenStates> InferenceClient::run_step(std::vector<HiddenStates> x, std::size_t& retries) {
  const std::size_t d = model_->config.hidden_dim;
  std::size_t i = 0;
  bool relayed = false;  // x was already pushed to stage i by its predecessor
  while (i < stages_.size()) {
    Stage& st = stages_[i];
    const bool relay_next = config_.relay && i + 1 < stages_.size();
    StepRequest req;
    if (relayed) {
      req.from_relay = true;
      req.relay_checksum = batch_checksum(x);
    } else {
      req.batch = x;
    }
    if (relay_next) req.relay_to = RelayTarget{stages_[i + 1].hop.address, stages_[i + 1].session};
    try {
      const WireMessage msg = make_step(st.session, req, encoding());
      const WireMessage reply = call(st.hop.address, msg);
      if (reply.kind == MessageKind::error && parse_error(reply).code == ErrorCode::relay_missing) {
        relayed = false;
        ++stats_.relay_fallbacks;
        continue;
      }
      check_reply(reply, st.hop.address);
      stats_.step_payload_bytes += msg.payload.size();
      std::vector<HiddenStates> y = parse_activations(reply);
      if (y.size() != x.size()) throw RemoteError(st.hop.address + ": reply width differs from the request");
      // Inputs join the history only once the stage has answered.
      if (st.history.size() != x.size()) st.history.assign(x.size(), empty_like(d));
      for (std::size_t b = 0; b < x.size(); ++b)
        st.history[b].values.append_rows(relayed ? x[b].values : as_seen(x[b]).values);
      x = std::move(y);
      relayed = relay_next;
      ++i;
    } catch (const ServerFailed& e) {
      if (config_.strategy == Strategy::restart) throw RestartSignal{};
      fail_server(st.hop.server_id);
      if (++retries > config_.max_retries) throw SwarmUnavailable(std::string("retry budget spent: ") + e.what());
      check_budget();
      replace_failed(i, retries);
      relayed = false;
    }
  }
  return x;
}

std::size_t InferenceClient::replace_failed(std::size_t i, std::size_t& retries) {
  const Stage failed = stages_[i];
  const std::size_t t = failed.history.empty() ? 0 : failed.history.front().tokens();
  RecoveryRecord rec;
  rec.stage_index = i;
  rec.start = failed.hop.start;
  rec.end = failed.hop.end;
  rec.history_tokens = t;
  rec.time = transport_.clock().now();
  for (;;) {
    refresh();
    const Chain chain = route(failed.hop.start, failed.hop.end, retries);
    std::vector<Stage> fresh;
    std::vector<HiddenStates> h = failed.history;
    std::size_t bytes = 0;
    ServerId current = 0;
    try {
      for (std::size_t j = 0; j < chain.hops.size(); ++j) {
        current = chain.hops[j].server_id;
        Stage st{chain.hops[j], {}, {}};
        open_stage(st);
        if (t > 0) {
          const bool want = j + 1 < chain.hops.size();
          const WireMessage msg = make_restore(st.session, {h, want});
          bytes += msg.payload.size();
          stats_.restore_payload_bytes += msg.payload.size();
          const WireMessage reply = call(st.hop.address, msg);
          check_reply(reply, st.hop.address);
          st.history = h;
          if (want) {
            h = parse_activations(reply);
            if (h.size() != st.history.size()) throw RemoteError("restore returned the wrong width");
          }
        }
        fresh.push_back(std::move(st));
      }
    } catch (const ServerFailed&) {
      for (const auto& st : fresh) transport_.send(st.hop.address, make_empty(MessageKind::close, st.session));
      fail_server(current);
      if (++retries > config_.max_retries) throw SwarmUnavailable("no replacement survived");
      check_budget();
      continue;
    }
    transport_.send(failed.hop.address, make_empty(MessageKind::close, failed.session));
    rec.restore_payload_bytes = bytes;
    rec.replacement_servers = fresh.size();
    const std::size_t n = fresh.size();
    stages_.erase(stages_.begin() + static_cast<std::ptrdiff_t>(i));
    stages_.insert(stages_.begin() + static_cast<std::ptrdiff_t>(i), std::make_move_iterator(fresh.begin()),
                   std::make_move_iterator(fresh.end()));
    ++stats_.recoveries;
    stats_.recovery_log.push_back(rec);
    return n;
  }
}

void InferenceClient::reorder_all(const std::vector<std::uint32_t>& indices, std::size_t& retries) {
  for (auto& st : stages_) {
    std::vector<HiddenStates> gathered;
    gathered.reserve(indices.size());
    for (auto idx : indices) gathered.push_back(st.history.at(idx - 1));
    st.history = std::move(gathered);
  }
  for (std::size_t i = 0; i < stages_.size();) {
    Stage& st = stages_[i];
    try {
      check_reply(call(st.hop.address, make_reorder(st.session, indices)), st.hop.address);
      ++i;
    } catch (const ServerFailed& e) {
      fail_server(st.hop.server_id);
      if (++retries > config_.max_retries) throw SwarmUnavailable(std::string("retry budget spent: ") + e.what());
      // The replacement is restored from the already gathered history.
      i += replace_failed(i, retries);
    }
  }
}

Token InferenceClient::next_token(TokenChooser& chooser, const HiddenStates& out, const std::vector<Token>& seq,
                                  std::size_t prefix_len) {
  if (config_.passthrough) return seq[seq.size() % prefix_len];
  return chooser.choose(compute_logits(model_->client, out.values.row(out.tokens() - 1)));
}

std::vector<Token> InferenceClient::generate(std::span<const Token> prefix, std::size_t n_new,
                                             const DecodeMode& mode) {
  if (prefix.empty()) throw ConfigError("prefix must not be empty");
  if (prefix.size() + n_new > model_->config.max_seq_len) throw CapacityError("sequence exceeds max_seq_len");
  if (mode.kind == DecodeMode::Kind::beam) return beam_generate(prefix, n_new, mode.beam_width).front().tokens;
  begin_stats();
  try {
    std::vector<Token> out;
    if (config_.strategy == Strategy::cacheless) {
      out = generate_cacheless(prefix, n_new, mode);
    } else {
      for (;;) {
        try {
          out = generate_once(prefix, n_new, mode);
          break;
        } catch (const RestartSignal&) {
          ++stats_.restarts;
          ++stats_.failures;
          close_all();
          check_budget();
        }
      }
    }
    stats_.completed = true;
    stats_.end_time = transport_.clock().now();
    return out;
  } catch (...) {
    stats_.end_time = transport_.clock().now();
    throw;
  }
}

std::vector<Token> InferenceClient::generate_once(std::span<const Token> prefix, std::size_t n_new,
                                                  const DecodeMode& mode) {
  close_all();
  std::size_t retries = 0;
  stages_ = open_chain(0, static_cast<std::uint32_t>(model_->config.n_blocks), retries);
  TokenChooser chooser(mode);
  std::vector<Token> seq(prefix.begin(), prefix.end());
  stats_.tokens = 0;
  stats_.step_bytes.clear();
  HiddenStates inputs = embed_tokens(model_->client, prefix, 0);
  for (std::size_t step = 0; step < n_new; ++step) {
    retries = 0;
    const auto before = stats_.step_payload_bytes;
    std::vector<HiddenStates> batch;
    batch.push_back(std::move(inputs));
    const auto out = run_step(std::move(batch), retries);
    seq.push_back(next_token(chooser, out.front(), seq, prefix.size()));
    ++stats_.tokens;
    stats_.step_bytes.push_back(stats_.step_payload_bytes - before);
    check_budget();
    if (step + 1 < n_new) inputs = embed_tokens(model_->client, std::span<const Token>(&seq.back(), 1), seq.size() - 1);
  }
  return seq;
}

std::vector<HiddenStates> InferenceClient::run_forward(std::vector<HiddenStates> x, std::size_t& retries) {
  std::size_t i = 0;
  while (i < stages_.size()) {
    Stage& st = stages_[i];
    try {
      const WireMessage msg = make_forward(st.session, {x, false}, encoding());
      const WireMessage reply = call(st.hop.address, msg);
      check_reply(reply, st.hop.address);
      stats_.step_payload_bytes += msg.payload.size();
      auto y = parse_activations(reply);
      if (y.size() != x.size()) throw RemoteError(st.hop.address + ": reply width differs from the request");
      x = std::move(y);
      ++i;
    } catch (const ServerFailed& e) {
      if (++retries > config_.max_retries) throw SwarmUnavailable(std::string("retry budget spent: ") + e.what());
      check_budget();
      // A lost request is simply resent; a dead or confused stage is replaced.
      const bool dropped = !dynamic_cast<const RemoteError*>(&e) && !dynamic_cast<const ConnectionError*>(&e);
      if (!dropped) {
        fail_server(st.hop.server_id);
        replace_failed(i, retries);
      } else {
        ++stats_.failures;
      }
    }
  }
  return x;
}

std::vector<Token> InferenceClient::generate_cacheless(std::span<const Token> prefix, std::size_t n_new,
                                                       const DecodeMode& mode) {
  close_all();
  std::size_t retries = 0;
  stages_ = open_chain(0, static_cast<std::uint32_t>(model_->config.n_blocks), retries);
  TokenChooser chooser(mode);
  std::vector<Token> seq(prefix.begin(), prefix.end());
  for (std::size_t step = 0; step < n_new; ++step) {
    retries = 0;
    const auto before = stats_.step_payload_bytes;
    std::vector<HiddenStates> batch;
    batch.push_back(embed_tokens(model_->client, seq, 0));
    const auto out = run_forward(std::move(batch), retries);
    seq.push_back(next_token(chooser, out.front(), seq, prefix.size()));
    ++stats_.tokens;
    stats_.step_bytes.push_back(stats_.step_payload_bytes - before);
    check_budget();
  }
  return seq;
}

std::vector<BeamHypothesis> InferenceClient::beam_generate(std::span<const Token> prefix, std::size_t n_new,
                                                           std::size_t k) {
  if (prefix.empty()) throw ConfigError("prefix must not be empty");
  if (k == 0 || k > model_->config.vocab_size) throw ConfigError("beam width must be in [1, vocab_size]");
  if (prefix.size() + n_new > model_->config.max_seq_len) throw CapacityError("sequence exceeds max_seq_len");
  begin_stats();
  try {
    close_all();
    std::size_t retries = 0;
    stages_ = open_chain(0, static_cast<std::uint32_t>(model_->config.n_blocks), retries);
    std::vector<BeamHypothesis> beams{{std::vector<Token>(prefix.begin(), prefix.end()), 0.0}};
    std::vector<HiddenStates> batch{embed_tokens(model_->client, prefix, 0)};
    for (std::size_t step = 0; step < n_new; ++step) {
      retries = 0;
      const auto before = stats_.step_payload_bytes;
      const auto out = run_step(std::move(batch), retries);
      std::vector<double> scores;
      std::vector<std::vector<double>> log_probs;
      for (std::size_t b = 0; b < beams.size(); ++b) {
        log_probs.push_back(log_softmax(compute_logits(model_->client, out[b].values.row(out[b].tokens() - 1))));
        scores.push_back(beams[b].score);
      }
      const auto cands = select_beam_candidates(scores, log_probs, k);
      std::vector<BeamHypothesis> next;
      std::vector<std::uint32_t> indices;
      for (const auto& c : cands) {
        BeamHypothesis h = beams[c.parent];
        h.tokens.push_back(c.token);
        h.score = c.score;
        next.push_back(std::move(h));
        indices.push_back(static_cast<std::uint32_t>(c.parent + 1));
      }
      beams = std::move(next);
      ++stats_.tokens;
      stats_.step_bytes.push_back(stats_.step_payload_bytes - before);
      check_budget();
      if (step + 1 == n_new) break;
      reorder_all(indices, retries);
      batch.clear();
      for (const auto& h : beams)
        batch.push_back(embed_tokens(model_->client, std::span<const Token>(&h.tokens.back(), 1), h.tokens.size() - 1));
    }
    stats_.completed = true;
    stats_.end_time = transport_.clock().now();
    return beams;
  } catch (...) {
    stats_.end_time = transport_.clock().now();
    throw;
  }
}

std::vector<TrainExample> make_copy_task(std::size_t batch, std::size_t length, std::size_t vocab,
                                         std::uint64_t seed) {
  if (vocab < 3 || length == 0) throw ConfigError("copy task needs vocab >= 3 and length >= 1");
  constexpr Token kSep = 1;
  SplitMix64 rng = SplitMix64::keyed(seed, 0x636f7079);
  std::vector<TrainExample> out(batch);
  for (auto& ex : out) {
    std::vector<Token> body(length);
    for (auto& t : body) t = static_cast<Token>(2 + rng.below(vocab - 2));
    ex.tokens = body;
    ex.tokens.push_back(kSep);
    ex.tokens.insert(ex.tokens.end(), body.begin(), body.end());
    ex.targets.assign(ex.tokens.size(), -1);
    for (std::size_t j = length; j + 1 < ex.tokens.size(); ++j) ex.targets[j] = static_cast<std::int32_t>(ex.tokens[j + 1]);
  }
  return out;
}

namespace {

HiddenStates prompt_inputs(const Model& model, const Matrix& prompt, const TrainExample& ex) {
  HiddenStates h;
  h.values = prompt;
  h.values.append_rows(embed_tokens(model.client, ex.tokens, prompt.rows()).values);
  return h;
}

// Mean cross-entropy over labelled rows; fills dL/dhidden when asked.
double cross_entropy(const Model& model, std::size_t prompt_len, const std::vector<TrainExample>& batch,
                     const std::vector<HiddenStates>& outputs, std::vector<HiddenStates>* grads) {
  std::size_t count = 0;
  for (const auto& ex : batch)
    for (auto t : ex.targets) count += t >= 0;
  if (count == 0) throw ConfigError("training batch has no labels");
  const Matrix& E = model.client.embedding;
  const std::size_t d = E.cols();
  double loss = 0;
  if (grads) grads->clear();
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const auto& out = outputs[e];
    HiddenStates g;
    g.values = Matrix(out.tokens(), d);
    for (std::size_t j = 0; j < batch[e].targets.size(); ++j) {
      const std::int32_t target = batch[e].targets[j];
      if (target < 0) continue;
      const std::size_t row = prompt_len + j;
      const auto lp = log_softmax(compute_logits(model.client, out.values.row(row)));
      loss -= lp[static_cast<std::size_t>(target)];
      if (!grads) continue;
      std::vector<double> acc(d, 0.0);
      for (std::size_t v = 0; v < E.rows(); ++v) {
        const double coeff = std::exp(lp[v]) - (static_cast<std::int32_t>(v) == target ? 1.0 : 0.0);
        const auto ev = E.row(v);
        for (std::size_t c = 0; c < d; ++c) acc[c] += coeff * ev[c];
      }
      auto gr = g.values.row(row);
      for (std::size_t c = 0; c < d; ++c) gr[c] = static_cast<float>(acc[c] / static_cast<double>(count));
    }
    if (grads) grads->push_back(std::move(g));
  }
  return loss / static_cast<double>(count);
}

}  // namespace

FinetuneSession::FinetuneSession(std::shared_ptr<const Model> model, Transport& transport,
                                 DirectoryView& directory, FinetuneConfig config, ClientConfig client)
    : model_(model), config_(config), client_(model, transport, directory, client) {
  if (config_.prompt_len == 0) throw ConfigError("soft prompt needs at least one row");
  if (!(config_.learning_rate > 0)) throw ConfigError("learning rate must be positive");
  prompt_ = Matrix(config_.prompt_len, model_->config.hidden_dim);
  SplitMix64 rng = SplitMix64::keyed(config_.seed, 0x70726f6d7074);
  for (float& v : prompt_.data()) v = static_cast<float>((rng.uniform() * 2.0 - 1.0) * 0.1);
}

double FinetuneSession::local_loss(const Model& model, const Matrix& prompt, const std::vector<TrainExample>& batch) {
  std::vector<HiddenStates> outs;
  for (const auto& ex : batch) {
    std::vector<KVCache> caches(model.blocks.size());
    outs.push_back(forward_blocks(model.blocks, prompt_inputs(model, prompt, ex), caches));
  }
  return cross_entropy(model, prompt.rows(), batch, outs, nullptr);
}

double FinetuneSession::pass(const std::vector<TrainExample>& batch, Matrix& grad) {
  auto& c = client_;
  std::size_t retries = 0;
  if (c.stages_.empty()) c.stages_ = c.open_chain(0, static_cast<std::uint32_t>(model_->config.n_blocks), retries);
  std::vector<HiddenStates> x;
  for (const auto& ex : batch) x.push_back(prompt_inputs(*model_, prompt_, ex));

  auto fail = [&](std::size_t i) {
    c.fail_server(c.stages_[i].hop.server_id);
    c.replace_failed(i, retries);
  };
  for (std::size_t i = 0; i < c.stages_.size(); ++i) {
    auto& st = c.stages_[i];
    try {
      const WireMessage reply = c.call(st.hop.address, make_forward(st.session, {x, true}, ActivationEncoding::f32));
      check_reply(reply, st.hop.address);
      x = parse_activations(reply);
    } catch (const ServerFailed&) {
      fail(i);
      throw;
    }
  }
  std::vector<HiddenStates> g;
  const double loss = cross_entropy(*model_, prompt_.rows(), batch, x, &g);
  for (std::size_t i = c.stages_.size(); i-- > 0;) {
    auto& st = c.stages_[i];
    try {
      const WireMessage reply =
          c.call(st.hop.address, make_activations(MessageKind::backward, st.session, g, ActivationEncoding::f32));
      check_reply(reply, st.hop.address);
      g = parse_activations(reply);
    } catch (const ServerFailed&) {
      fail(i);
      throw;
    }
  }
  grad = Matrix(prompt_.rows(), prompt_.cols());
  for (const auto& ge : g)
    for (std::size_t r = 0; r < prompt_.rows(); ++r)
      for (std::size_t col = 0; col < prompt_.cols(); ++col) grad(r, col) += ge.values(r, col);
  return loss;
}

double FinetuneSession::step(const std::vector<TrainExample>& batch) {
  Matrix grad;
  double loss = 0;
  for (std::size_t attempt = 0;; ++attempt) {
    try {
      loss = pass(batch, grad);
      break;
    } catch (const ServerFailed&) {
      ++repeats_;
      if (attempt >= config_.max_pass_retries) throw SwarmUnavailable("training pass kept failing");
    }
  }
  const auto lr = static_cast<float>(config_.learning_rate);
  for (std::size_t i = 0; i < prompt_.size(); ++i) prompt_.data()[i] -= lr * grad.data()[i];
  losses_.push_back(loss);
  return loss;
}

}  // namespace swarmpipe
