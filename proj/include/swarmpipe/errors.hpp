#pragma once

#include <stdexcept>
#include <string>

namespace swarmpipe {

// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid model, server or experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Server-side cache length does not match the position the client expects.
// The client must restore the session or restart it.
class StateDesyncError : public Error {
 public:
  using Error::Error;
};

// Malformed frame, wrong payload shape or unexpected message kind.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Sequence would exceed max_seq_len.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// A remote call did not complete: message dropped, reply timed out or the
// server answered with a session-level error. Algorithm-wise this is the
// "server failed" signal that triggers replacement.
class ServerFailed : public Error {
 public:
  using Error::Error;
};

// Destination is offline (churned out or crashed). Distinct from a drop.
class ConnectionError : public ServerFailed {
 public:
  using ServerFailed::ServerFailed;
};

// Ping deadline expired.
class Unreachable : public Error {
 public:
  using Error::Error;
};

// No chain of servers covers the requested interval.
class NoRouteError : public Error {
 public:
  using Error::Error;
};

// Retry budget exhausted while trying to find a working chain.
class SwarmUnavailable : public Error {
 public:
  using Error::Error;
};

// Simulated-time budget for a run was exceeded.
class BudgetExceeded : public Error {
 public:
  using Error::Error;
};

// Directory refused an announcement.
class RejectedAnnouncement : public Error {
 public:
  using Error::Error;
};

// Problem instance exceeds the exhaustive-search guard.
class InstanceTooLarge : public Error {
 public:
  using Error::Error;
};

}  // namespace swarmpipe
