#pragma once

// Pure transport models: handshake shapes, retransmission timers, connection
// ids and the socket port-binding rules. The engine-driven connection state
// machine lives in endpoint.h.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <tuple>

#include "holepunch/time.h"

namespace holepunch {

enum class TransportKind {
  kQuic,
  kTcp,
  kTcpTls13,
};

std::string_view to_string(TransportKind kind);
// Accepts "quic", "tcp", "tcp-tls13" (case-insensitive); throws InvalidArgument.
TransportKind parse_transport(std::string_view text);

inline bool is_tcp_family(TransportKind kind) { return kind != TransportKind::kQuic; }

// Handshake length in round trips: 1, 1.5 and 2.
double handshake_rtts(TransportKind kind);
// Number of alternating flights; the last one completes the handshake.
int flight_count(TransportKind kind);
// Flight i travels initiator -> responder when i is even.
inline bool flight_from_initiator(int flight) { return flight % 2 == 0; }

// Flight count times half an RTT, exact for any tick count.
Duration lossless_handshake(TransportKind kind, Duration rtt);

inline constexpr Duration kMinRto = std::chrono::milliseconds(1000);

// max(srtt + 4 * rttvar, 1 s). Throws InvalidArgument on negative inputs.
Duration compute_rto(Duration srtt, Duration rttvar);

struct RetransmissionPolicy {
  Duration quic_pto = std::chrono::milliseconds(200);
  int max_retries = 8;
};

// First retransmission wait for a timer of this transport. TCP kinds seed
// the estimator from one RTT sample: srtt = rtt, rttvar = rtt / 2.
Duration initial_timeout(TransportKind kind, const RetransmissionPolicy& policy,
                         Duration rtt_estimate);
// Wait before retransmission number `attempt` (0-based); doubles each time.
Duration backoff_timeout(Duration initial, int attempt);

struct BindingHandle {
  std::string node;
  std::uint16_t port = 0;
  bool tcp = false;
};

class PortBindingTable {
 public:
  // QUIC sockets share a port freely. A second TCP socket on the same port
  // needs reuse requested by the first and the new binding. Throws PortInUse.
  BindingHandle bind(std::string_view node, std::uint16_t port, TransportKind kind,
                     bool reuse);
  void release(const BindingHandle& handle);
  int bindings(std::string_view node, std::uint16_t port, TransportKind kind) const;

 private:
  struct Entry {
    int count = 0;
    bool reuse = false;
  };
  std::map<std::tuple<std::string, std::uint16_t, bool>, Entry, std::less<>> table_;
};

}  // namespace holepunch
