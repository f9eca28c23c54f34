#pragma once

// End-to-end hole punch on the three-site topology. Before the measured
// window both clients connect to S and register; the window opens when A asks
// S for B's address and closes when the first A<->B connection establishes.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "holepunch/endpoint.h"
#include "holepunch/rendezvous.h"
#include "holepunch/topology.h"

namespace holepunch {

inline constexpr ClientId kClientA = 1;
inline constexpr ClientId kClientB = 2;

struct PunchScenario {
  TransportKind transport = TransportKind::kQuic;
  Duration rtt = std::chrono::milliseconds(100);
  double loss_rate = 0.0;
  // ConnA departure minus ConnB departure, each measured from the moment
  // that client learns the other's address.
  Duration start_offset{0};
  std::uint64_t seed = 0;
};

struct PunchOutcome {
  bool success = false;
  // From A's request to S until the first A<->B connection is established.
  Duration elapsed{0};
  VirtualTime requested_at;
  // Events of the measured window (empty when tracing is off).
  std::vector<TraceEntry> trace;
  std::uint64_t retransmission_count = 0;
  std::size_t unsolicited_drops = 0;
  std::optional<ErrorCode> failure;
  std::string failure_reason;
  // "ConnA" (initiated by A) or "ConnB".
  std::string winner;
};

// Extension points used by the punch itself and by the recovery flows.
struct SessionHooks {
  // A client received a control message from S.
  std::function<void(Site client, const ControlMessage&)> control;
  // S accepted a control message / sent one.
  std::function<void(Site from, const ControlMessage&)> server_received;
  std::function<void(Site to, const ControlMessage&)> server_sent;
  // A client's connection to S became established; registers when unset.
  std::function<void(Site client, const ConnectionPtr&)> relay_established;
  std::function<void(Site client, const ConnectionPtr&)> peer_established;
  std::function<void(Site client, const ConnectionPtr&, ErrorCode)> peer_failed;
  std::function<void(Site client, const ConnectionPtr&, const Datagram&)> peer_data;
  std::function<void(Site client, const Datagram&)> probe;
};

class PunchSession {
 public:
  // The scenario's rtt, loss and seed override the topology config.
  explicit PunchSession(const PunchScenario& scenario, TopologyConfig config = {});

  Topology& topology() { return topology_; }
  Engine& engine() { return topology_.engine(); }
  const PunchScenario& scenario() const { return scenario_; }
  RendezvousServer& server() { return server_; }
  SessionHooks& hooks() { return hooks_; }

  static ClientId client_id(Site client);
  static Site client_site(ClientId id);
  static Site peer_of(Site client) { return client == Site::kA ? Site::kB : Site::kA; }

  // Connects both clients to S and registers them. Throws PunchFailed when
  // the relay cannot be reached.
  void setup();
  bool ready() const;

  // Runs one punch; setup() first if needed. Modeled failures (ADPM NATs,
  // exhausted retries) come back as success = false.
  PunchOutcome punch();

  Endpoint& client_endpoint(Site client, TransportKind kind);
  Endpoint& server_endpoint(TransportKind kind);

  ConnectionPtr relay_connection(Site client) const { return relay_[index(client)]; }
  void set_relay_connection(Site client, ConnectionPtr conn);
  ConnectionPtr peer_connection() const { return peer_; }
  void set_peer_connection(ConnectionPtr conn) { peer_ = std::move(conn); }
  // The peer's public address as last learned from S.
  std::optional<EndpointAddress> known_peer_address(Site client) const {
    return peer_addr_[index(client)];
  }

  // Sends a control message over the client's relay connection.
  void send_control(Site client, const ControlMessage& msg);

 private:
  static int index(Site s) { return s == Site::kA ? 0 : 1; }
  bool is_relay(Endpoint& ep, const ConnectionPtr& conn) const;
  void install(Site client, Endpoint& ep);
  void install_server(Endpoint& ep);
  void on_server_data(Endpoint& ep, const ConnectionPtr& conn, const Datagram& d);
  void on_client_data(Site client, Endpoint& ep, const ConnectionPtr& conn, const Datagram& d);

  PunchScenario scenario_;
  Topology topology_;
  RendezvousServer server_;
  SessionHooks hooks_;
  ConnectionPtr relay_[2];
  std::map<ClientId, ConnectionPtr> server_conns_;
  ConnectionPtr peer_;
  std::optional<EndpointAddress> peer_addr_[2];
  bool ready_ = false;
};

PunchOutcome punch(const PunchScenario& scenario, const TopologyConfig& config = {});

// Analytic punch-time window: one RTT to learn addresses, the handshake,
// and up to half an RTT lost to a wasted first connection.
std::pair<Duration, Duration> predicted_bounds(TransportKind kind, Duration rtt);

// Trial i uses seed derive_seed({scenario.seed, i}). Results are in trial
// order for any thread count (0 = hardware concurrency).
std::vector<PunchOutcome> run_trials(const PunchScenario& scenario, std::size_t n,
                                     const TopologyConfig& config = {}, unsigned threads = 1);

}  // namespace holepunch
