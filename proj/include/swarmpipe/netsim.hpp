#pragma once

// Transport abstraction and the deterministic simulated network.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <queue>
#include <string>
#include <unordered_map>
#include <vector>

#include "swarmpipe/random.hpp"
#include "swarmpipe/wire.hpp"

namespace swarmpipe {

class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() const = 0;  // seconds
  // Charges `seconds` of work. Simulated clocks move forward; wall clocks
  // ignore it because real time passes by itself.
  virtual void advance(double seconds) = 0;
};

class SimClock final : public Clock {
 public:
  double now() const override { return now_; }
  void advance(double seconds) override {
    if (seconds > 0) now_ += seconds;
  }
  void advance_to(double t) {
    if (t > now_) now_ = t;
  }

 private:
  double now_ = 0.0;
};

class WallClock final : public Clock {
 public:
  WallClock();
  double now() const override;
  void advance(double) override {}

 private:
  double origin_;
};

/// Single-threaded discrete-event loop over a virtual clock. Events at equal
/// times run in scheduling order.
class EventLoop {
 public:
  explicit EventLoop(SimClock& clock) : clock_(clock) {}

  SimClock& clock() noexcept { return clock_; }
  double now() const noexcept { return clock_.now(); }

  void schedule_at(double t, std::function<void()> fn);
  void schedule_after(double dt, std::function<void()> fn) { schedule_at(now() + dt, std::move(fn)); }

  // Runs every event with time <= t, then moves the clock to t.
  std::size_t run_until(double t);
  // Runs events already due at the current time.
  std::size_t run_due() { return run_until(now()); }
  std::size_t pending() const noexcept { return queue_.size(); }

 private:
  struct Event {
    double time;
    std::uint64_t seq;
    std::function<void()> fn;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };
  SimClock& clock_;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::uint64_t next_seq_ = 0;
};

struct NetProfile {
  double bandwidth_bps = 1e9;
  double rtt_ms = 1.0;
  double failure_prob = 0.0;

  void validate() const;  // throws ConfigError
  double transfer_s(std::size_t bytes) const noexcept {
    return static_cast<double>(bytes) * 8.0 / bandwidth_bps;
  }
  // One-way delivery delay: rtt/2 + size/bandwidth.
  double delivery_s(std::size_t bytes) const noexcept { return rtt_ms / 2000.0 + transfer_s(bytes); }
  // Sender-side drop detection: rtt*4 + size/bandwidth*2.
  double ack_timeout_s(std::size_t bytes) const noexcept {
    return rtt_ms * 4.0 / 1000.0 + 2.0 * transfer_s(bytes);
  }
};

struct OnlineInterval {
  double on = 0.0;
  double off = 0.0;
};

/// Per-server availability: a server is reachable only inside its intervals.
/// Servers without an entry are always online.
class ChurnSchedule {
 public:
  void add(const std::string& address, double on, double off);  // throws ConfigError
  bool has(const std::string& address) const { return intervals_.count(address) != 0; }
  bool is_online(const std::string& address, double t) const;
  const std::vector<OnlineInterval>& intervals(const std::string& address) const;
  const std::map<std::string, std::vector<OnlineInterval>>& all() const noexcept { return intervals_; }
  bool empty() const noexcept { return intervals_.empty(); }

 private:
  std::map<std::string, std::vector<OnlineInterval>> intervals_;
};

/// Something that answers wire messages: a block server, a directory.
class Endpoint {
 public:
  virtual ~Endpoint() = default;
  virtual WireMessage handle(const WireMessage& request, const std::string& from) = 0;
  // One-way delivery (direct server-to-server relay).
  virtual void deliver(const WireMessage& /*message*/, const std::string& /*from*/) {}
  // Activations sent to this endpoint were lost: the stage resets the session.
  virtual void on_link_failure(const SessionId& /*session*/) {}
  virtual bool online() const { return true; }
};

enum class DeliveryStatus { delivered, dropped, connection_error };

struct DeliveryOutcome {
  DeliveryStatus status = DeliveryStatus::delivered;
  double deliver_at = 0.0;
  std::size_t framed_bytes = 0;
};

struct LinkStats {
  std::uint64_t bytes = 0;
  std::uint64_t messages = 0;
  std::uint64_t drops = 0;
  std::uint64_t refused = 0;
};

class Transport {
 public:
  virtual ~Transport() = default;
  // Request/reply. Throws ServerFailed when the request or reply is lost and
  // ConnectionError when the destination is offline.
  virtual WireMessage call(const std::string& dest, const WireMessage& request) = 0;
  // One-way message.
  virtual DeliveryOutcome send(const std::string& dest, const WireMessage& message) = 0;
  // Round-trip estimate in ms; throws Unreachable.
  virtual double ping(const std::string& dest) = 0;
  virtual Clock& clock() = 0;
  virtual const std::string& local_address() const = 0;
};

struct TraceEvent {
  double time;
  std::string from;
  std::string to;
  MessageKind kind;
  std::size_t bytes;
  DeliveryStatus status;
};

/// In-process network with per-destination profiles, seeded per-message
/// failures, churn and exact per-link byte accounting.
class SimNetwork {
 public:
  SimNetwork(EventLoop& loop, NetProfile default_profile, std::uint64_t seed);

  EventLoop& loop() noexcept { return loop_; }
  SimClock& clock() noexcept { return loop_.clock(); }

  void attach(const std::string& address, Endpoint* endpoint);
  void detach(const std::string& address);

  void set_profile(const std::string& dest, const NetProfile& p);
  const NetProfile& profile(const std::string& dest) const;
  void set_churn(ChurnSchedule schedule) { churn_ = std::move(schedule); }
  const ChurnSchedule& churn() const noexcept { return churn_; }
  // Replies are reliable by default; failures hit activations sent to a stage.
  void set_lossy_replies(bool lossy) { lossy_replies_ = lossy; }
  // By default only activation-carrying messages can be lost.
  void set_drop_all_kinds(bool all) { drop_all_kinds_ = all; }
  // Forces the next `count` droppable requests to `dest` to be dropped.
  void inject_drops(const std::string& dest, std::size_t count);
  void set_ping_deadline_ms(double ms) { ping_deadline_ms_ = ms; }
  void enable_trace(bool on) { trace_enabled_ = on; }

  bool is_online(const std::string& address) const;

  WireMessage call(const std::string& from, const std::string& dest, const WireMessage& request);
  DeliveryOutcome send(const std::string& from, const std::string& dest, const WireMessage& message);
  double ping(const std::string& from, const std::string& dest);

  LinkStats stats(const std::string& from, const std::string& dest) const;
  LinkStats totals() const;
  const std::vector<TraceEvent>& trace() const noexcept { return trace_; }

 private:
  std::size_t node_id(const std::string& address);
  LinkStats& link(const std::string& from, const std::string& dest);
  void record(const std::string& from, const std::string& dest, MessageKind kind,
              std::size_t bytes, DeliveryStatus status);
  bool draw_drop(const std::string& dest, MessageKind kind, double p);

  EventLoop& loop_;
  NetProfile default_profile_;
  SplitMix64 rng_;
  std::unordered_map<std::string, Endpoint*> endpoints_;
  std::unordered_map<std::string, NetProfile> profiles_;
  std::unordered_map<std::string, std::size_t> node_ids_;
  std::unordered_map<std::uint64_t, LinkStats> links_;
  std::unordered_map<std::string, std::size_t> forced_drops_;
  std::unordered_map<std::uint64_t, double> last_delivery_;
  ChurnSchedule churn_;
  bool lossy_replies_ = false;
  bool drop_all_kinds_ = false;
  bool trace_enabled_ = false;
  double ping_deadline_ms_ = 1000.0;
  std::vector<TraceEvent> trace_;
};

/// A node's view of a SimNetwork.
class SimTransport final : public Transport {
 public:
  SimTransport(SimNetwork& net, std::string self) : net_(net), self_(std::move(self)) {}
  WireMessage call(const std::string& dest, const WireMessage& request) override {
    return net_.call(self_, dest, request);
  }
  DeliveryOutcome send(const std::string& dest, const WireMessage& message) override {
    return net_.send(self_, dest, message);
  }
  double ping(const std::string& dest) override { return net_.ping(self_, dest); }
  Clock& clock() override { return net_.clock(); }
  const std::string& local_address() const override { return self_; }
  SimNetwork& network() noexcept { return net_; }

 private:
  SimNetwork& net_;
  std::string self_;
};

}  // namespace swarmpipe
