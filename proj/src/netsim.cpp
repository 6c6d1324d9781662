#include "swarmpipe/netsim.hpp"

#include <chrono>
#include <cmath>

#include "swarmpipe/errors.hpp"

namespace swarmpipe {

namespace {
double steady_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}
}  // namespace

WallClock::WallClock() : origin_(steady_seconds()) {}
double WallClock::now() const { return steady_seconds() - origin_; }

void EventLoop::schedule_at(double t, std::function<void()> fn) {
  queue_.push(Event{t, next_seq_++, std::move(fn)});
}

std::size_t EventLoop::run_until(double t) {
  std::size_t ran = 0;
  while (!queue_.empty() && queue_.top().time <= t) {
    Event ev = queue_.top();
    queue_.pop();
    clock_.advance_to(ev.time);
    ev.fn();
    ++ran;
  }
  clock_.advance_to(t);
  return ran;
}

void NetProfile::validate() const {
  if (!(bandwidth_bps > 0)) throw ConfigError("bandwidth must be positive");
  if (!(rtt_ms >= 0)) throw ConfigError("rtt must be non-negative");
  if (!(failure_prob >= 0 && failure_prob <= 1)) throw ConfigError("failure_prob must be in [0, 1]");
}

void ChurnSchedule::add(const std::string& address, double on, double off) {
  if (!(off > on)) throw ConfigError("churn interval must have off > on");
  auto& list = intervals_[address];
  if (!list.empty() && on < list.back().off)
    throw ConfigError("churn intervals must be sorted and non-overlapping");
  list.push_back({on, off});
}

bool ChurnSchedule::is_online(const std::string& address, double t) const {
  auto it = intervals_.find(address);
  if (it == intervals_.end()) return true;
  for (const auto& iv : it->second)
    if (t >= iv.on && t < iv.off) return true;
  return false;
}

const std::vector<OnlineInterval>& ChurnSchedule::intervals(const std::string& address) const {
  static const std::vector<OnlineInterval> none;
  auto it = intervals_.find(address);
  return it == intervals_.end() ? none : it->second;
}

SimNetwork::SimNetwork(EventLoop& loop, NetProfile default_profile, std::uint64_t seed)
    : loop_(loop), default_profile_(default_profile), rng_(SplitMix64::keyed(seed, 0x6e6574)) {
  default_profile_.validate();
}

void SimNetwork::attach(const std::string& address, Endpoint* endpoint) {
  endpoints_[address] = endpoint;
  node_id(address);
}

void SimNetwork::detach(const std::string& address) { endpoints_.erase(address); }

void SimNetwork::set_profile(const std::string& dest, const NetProfile& p) {
  p.validate();
  profiles_[dest] = p;
}

const NetProfile& SimNetwork::profile(const std::string& dest) const {
  auto it = profiles_.find(dest);
  return it == profiles_.end() ? default_profile_ : it->second;
}

void SimNetwork::inject_drops(const std::string& dest, std::size_t count) {
  forced_drops_[dest] += count;
}

bool SimNetwork::is_online(const std::string& address) const {
  auto it = endpoints_.find(address);
  if (it == endpoints_.end() || !it->second->online()) return false;
  return churn_.empty() || churn_.is_online(address, loop_.now());
}

std::size_t SimNetwork::node_id(const std::string& address) {
  auto [it, inserted] = node_ids_.try_emplace(address, node_ids_.size());
  return it->second;
}

LinkStats& SimNetwork::link(const std::string& from, const std::string& dest) {
  const std::uint64_t key = (static_cast<std::uint64_t>(node_id(from)) << 32) | node_id(dest);
  return links_[key];
}

void SimNetwork::record(const std::string& from, const std::string& dest, MessageKind kind,
                        std::size_t bytes, DeliveryStatus status) {
  if (trace_enabled_) trace_.push_back({loop_.now(), from, dest, kind, bytes, status});
}

bool SimNetwork::draw_drop(const std::string& dest, MessageKind kind, double p) {
  if (!drop_all_kinds_ && !carries_activations(kind)) return false;
  if (!forced_drops_.empty()) {
    auto it = forced_drops_.find(dest);
    if (it != forced_drops_.end() && it->second > 0) {
      if (--it->second == 0) forced_drops_.erase(it);
      return true;
    }
  }
  // Always consume one draw so failure positions do not depend on p.
  return rng_.uniform() < p;
}

WireMessage SimNetwork::call(const std::string& from, const std::string& dest,
                             const WireMessage& request) {
  loop_.run_due();
  const NetProfile& prof = profile(dest);
  const std::size_t size = framed_size(request);
  LinkStats& out = link(from, dest);
  if (!is_online(dest)) {
    ++out.refused;
    record(from, dest, request.kind, size, DeliveryStatus::connection_error);
    loop_.clock().advance(prof.rtt_ms / 1000.0);
    throw ConnectionError(dest + " is offline");
  }
  out.bytes += size;
  ++out.messages;
  Endpoint* ep = endpoints_.at(dest);
  if (draw_drop(dest, request.kind, prof.failure_prob)) {
    ++out.drops;
    record(from, dest, request.kind, size, DeliveryStatus::dropped);
    ep->on_link_failure(request.session);
    loop_.clock().advance(prof.ack_timeout_s(size));
    throw ServerFailed(std::string(to_string(request.kind)) + " to " + dest + " was dropped");
  }
  record(from, dest, request.kind, size, DeliveryStatus::delivered);
  loop_.clock().advance(prof.delivery_s(size));
  loop_.run_due();

  WireMessage reply = ep->handle(request, from);

  const std::size_t reply_size = framed_size(reply);
  LinkStats& back = link(dest, from);
  if (!is_online(dest)) {
    // Crashed while processing: the client learns it after the ack timeout.
    record(dest, from, reply.kind, reply_size, DeliveryStatus::connection_error);
    loop_.clock().advance(prof.ack_timeout_s(size));
    throw ConnectionError(dest + " went offline during the call");
  }
  back.bytes += reply_size;
  ++back.messages;
  if (lossy_replies_ && draw_drop(from, reply.kind, prof.failure_prob)) {
    ++back.drops;
    record(dest, from, reply.kind, reply_size, DeliveryStatus::dropped);
    loop_.clock().advance(prof.ack_timeout_s(reply_size));
    throw ServerFailed("reply from " + dest + " was dropped");
  }
  record(dest, from, reply.kind, reply_size, DeliveryStatus::delivered);
  loop_.clock().advance(prof.delivery_s(reply_size));
  return reply;
}

DeliveryOutcome SimNetwork::send(const std::string& from, const std::string& dest,
                                 const WireMessage& message) {
  const NetProfile& prof = profile(dest);
  DeliveryOutcome outcome;
  outcome.framed_bytes = framed_size(message);
  LinkStats& out = link(from, dest);
  if (!is_online(dest)) {
    ++out.refused;
    outcome.status = DeliveryStatus::connection_error;
    record(from, dest, message.kind, outcome.framed_bytes, outcome.status);
    return outcome;
  }
  out.bytes += outcome.framed_bytes;
  ++out.messages;
  if (draw_drop(dest, message.kind, prof.failure_prob)) {
    ++out.drops;
    outcome.status = DeliveryStatus::dropped;
    record(from, dest, message.kind, outcome.framed_bytes, outcome.status);
    return outcome;
  }
  // FIFO per ordered pair: never deliver before an earlier message.
  const std::uint64_t key = (static_cast<std::uint64_t>(node_id(from)) << 32) | node_id(dest);
  double at = loop_.now() + prof.delivery_s(outcome.framed_bytes);
  auto& last = last_delivery_[key];
  at = std::max(at, last);
  last = at;
  outcome.deliver_at = at;
  record(from, dest, message.kind, outcome.framed_bytes, DeliveryStatus::delivered);
  loop_.schedule_at(at, [this, dest, from, message] {
    auto it = endpoints_.find(dest);
    if (it != endpoints_.end() && is_online(dest)) it->second->deliver(message, from);
  });
  return outcome;
}

double SimNetwork::ping(const std::string& from, const std::string& dest) {
  const NetProfile& prof = profile(dest);
  if (!is_online(dest)) {
    loop_.clock().advance(ping_deadline_ms_ / 1000.0);
    throw Unreachable(dest + " did not answer ping");
  }
  const std::size_t size = framed_size(0);
  LinkStats& out = link(from, dest);
  out.bytes += size;
  ++out.messages;
  LinkStats& back = link(dest, from);
  back.bytes += size;
  ++back.messages;
  loop_.clock().advance(prof.rtt_ms / 1000.0);
  return prof.rtt_ms;
}

LinkStats SimNetwork::stats(const std::string& from, const std::string& dest) const {
  auto f = node_ids_.find(from);
  auto d = node_ids_.find(dest);
  if (f == node_ids_.end() || d == node_ids_.end()) return {};
  auto it = links_.find((static_cast<std::uint64_t>(f->second) << 32) | d->second);
  return it == links_.end() ? LinkStats{} : it->second;
}

LinkStats SimNetwork::totals() const {
  LinkStats t;
  for (const auto& [key, s] : links_) {
    t.bytes += s.bytes;
    t.messages += s.messages;
    t.drops += s.drops;
    t.refused += s.refused;
  }
  return t;
}

}  // namespace swarmpipe
