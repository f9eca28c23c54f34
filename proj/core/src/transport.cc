#include "holepunch/transport.h"

#include <algorithm>
#include <cctype>

#include "holepunch/error.h"

namespace holepunch {

std::string_view to_string(TransportKind kind) {
  switch (kind) {
    case TransportKind::kQuic: return "quic";
    case TransportKind::kTcp: return "tcp";
    case TransportKind::kTcpTls13: return "tcp-tls13";
  }
  return "unknown";
}

TransportKind parse_transport(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "quic") return TransportKind::kQuic;
  if (lower == "tcp") return TransportKind::kTcp;
  if (lower == "tcp-tls13" || lower == "tcptls13" || lower == "tls") {
    return TransportKind::kTcpTls13;
  }
  fail(ErrorCode::kInvalidArgument, "unknown transport '" + std::string(text) + "'");
}

int flight_count(TransportKind kind) {
  switch (kind) {
    case TransportKind::kQuic: return 2;
    case TransportKind::kTcp: return 3;
    case TransportKind::kTcpTls13: return 4;
  }
  return 2;
}

double handshake_rtts(TransportKind kind) { return flight_count(kind) / 2.0; }

Duration lossless_handshake(TransportKind kind, Duration rtt) {
  return rtt * flight_count(kind) / 2;
}

Duration compute_rto(Duration srtt, Duration rttvar) {
  if (srtt < Duration::zero() || rttvar < Duration::zero()) {
    fail(ErrorCode::kInvalidArgument, "negative RTT estimator input");
  }
  return std::max(srtt + 4 * rttvar, kMinRto);
}

Duration initial_timeout(TransportKind kind, const RetransmissionPolicy& policy,
                         Duration rtt_estimate) {
  if (kind == TransportKind::kQuic) return policy.quic_pto;
  return compute_rto(rtt_estimate, rtt_estimate / 2);
}

Duration backoff_timeout(Duration initial, int attempt) {
  return initial * (std::int64_t{1} << std::min(attempt, 30));
}

BindingHandle PortBindingTable::bind(std::string_view node, std::uint16_t port,
                                     TransportKind kind, bool reuse) {
  if (port == 0) fail(ErrorCode::kInvalidArgument, "port 0 cannot be bound");
  const bool tcp = is_tcp_family(kind);
  Entry& e = table_[{std::string(node), port, tcp}];
  if (tcp && e.count > 0 && !(e.reuse && reuse)) {
    fail(ErrorCode::kPortInUse, std::string(node) + ":" + std::to_string(port) +
                                    " already has a TCP socket");
  }
  if (e.count == 0) e.reuse = reuse;
  ++e.count;
  return BindingHandle{std::string(node), port, tcp};
}

void PortBindingTable::release(const BindingHandle& handle) {
  auto it = table_.find(std::tuple{handle.node, handle.port, handle.tcp});
  if (it == table_.end()) return;
  if (--it->second.count <= 0) table_.erase(it);
}

int PortBindingTable::bindings(std::string_view node, std::uint16_t port,
                               TransportKind kind) const {
  auto it = table_.find(std::tuple{std::string(node), port, is_tcp_family(kind)});
  return it == table_.end() ? 0 : it->second.count;
}

}  // namespace holepunch
