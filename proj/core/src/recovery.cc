#include "holepunch/recovery.h"

#include "holepunch/error.h"

namespace holepunch {
namespace {

constexpr std::size_t kMigrationDataBytes = 1200;

class HookScope {
 public:
  explicit HookScope(SessionHooks& hooks) : hooks_(hooks), saved_(hooks) {}
  ~HookScope() { hooks_ = saved_; }

 private:
  SessionHooks& hooks_;
  SessionHooks saved_;
};

// Send/arrival instants of the four relayed messages plus connection spans.
struct Marks {
  std::optional<VirtualTime> as_start, as_end;
  std::optional<VirtualTime> a2s_send, a2s_recv;
  std::optional<VirtualTime> s2b_send, s2b_recv;
  std::optional<VirtualTime> b2a_send, b2a_arrive;
  std::optional<VirtualTime> ab_start, ab_end;
  std::optional<VirtualTime> a2b_send, a2b_recv;
};

Site site_of_node(std::string_view node) {
  if (node == "A") return Site::kA;
  if (node == "B") return Site::kB;
  fail(ErrorCode::kInvalidArgument, std::string(node) + " is not a client");
}

void mark(Engine& e, std::string_view node, const std::string& what) {
  if (e.tracing()) e.trace(node, "recovery " + what);
}

Duration span(const std::optional<VirtualTime>& from, const std::optional<VirtualTime>& to) {
  return from && to ? *to - *from : Duration::zero();
}

bool complete_relay_legs(const Marks& m) {
  return m.a2s_send && m.a2s_recv && m.s2b_send && m.s2b_recv && m.b2a_send &&
         m.b2a_arrive && m.a2b_send && m.a2b_recv;
}

}  // namespace

std::string_view to_string(ChangeCause cause) {
  switch (cause) {
    case ChangeCause::kNetworkSwitch: return "network-switch";
    case ChangeCause::kNatTimeout: return "nat-timeout";
    case ChangeCause::kNatReboot: return "nat-reboot";
  }
  return "unknown";
}

std::string_view to_string(RecoveryScheme scheme) {
  switch (scheme) {
    case RecoveryScheme::kMigration: return "migration";
    case RecoveryScheme::kRepunchQuic: return "repunch-quic";
    case RecoveryScheme::kRepunchTcp: return "repunch-tcp";
  }
  return "unknown";
}

Duration RecoveryLegs::sum() const {
  return t_a_s.value_or(Duration::zero()) + t_a2s + t_s2b + t_b2a +
         t_a_b.value_or(Duration::zero()) + t_a2b;
}

AddressChangeEvent inject_address_change(PunchSession& session, std::string_view node,
                                         const EndpointAddress& new_private, ChangeCause cause) {
  Topology& topo = session.topology();
  if (!topo.has_node(node)) {
    fail(ErrorCode::kUnknownNode, "no node named '" + std::string(node) + "'");
  }
  const Site site = site_of_node(node);
  Host& host = topo.host(site);
  NatBox& nat = topo.nat(site);
  const EndpointAddress old_private{host.local_ip(), Topology::kClientPort};
  if (new_private.port != Topology::kClientPort) {
    fail(ErrorCode::kInvalidArgument, "a moved client keeps its port " +
                                          std::to_string(Topology::kClientPort));
  }
  if (!new_private.ip.in_subnet(nat.config().private_network, nat.config().prefix_len)) {
    fail(ErrorCode::kInvalidArgument,
         new_private.to_string() + " is outside the subnet behind " + nat.name());
  }
  if (cause == ChangeCause::kNetworkSwitch && new_private.ip == old_private.ip) {
    fail(ErrorCode::kInvalidArgument, "a network switch must change the private address");
  }

  host.set_ip(new_private.ip);
  switch (cause) {
    case ChangeCause::kNetworkSwitch:
      nat.drop_sessions_for(old_private.ip);
      break;
    case ChangeCause::kNatTimeout:
      if (auto peer = session.known_peer_address(site)) nat.drop_session(old_private, *peer);
      if (new_private.ip != old_private.ip) nat.drop_sessions_for(old_private.ip);
      break;
    case ChangeCause::kNatReboot:
      nat.reboot();
      break;
  }
  Engine& e = session.engine();
  if (e.tracing()) {
    e.trace(node, "address_change " + old_private.to_string() + " -> " +
                      new_private.to_string() + " (" + std::string(to_string(cause)) + ")");
  }
  return AddressChangeEvent{std::string(node), old_private, new_private, e.now(), cause};
}

RecoveryReport migrate(PunchSession& session, const AddressChangeEvent& change) {
  ConnectionPtr conn = session.peer_connection();
  if (!conn || !conn->established()) {
    fail(ErrorCode::kInvalidArgument, "migration needs an established punched connection");
  }
  if (conn->kind() != TransportKind::kQuic) {
    fail(ErrorCode::kNotQuic, conn->label() + " cannot migrate");
  }
  const Site mover = site_of_node(change.node);
  const Site peer = PunchSession::peer_of(mover);
  Topology& topo = session.topology();
  Engine& e = session.engine();
  if (e.now() < change.at) e.run_until(change.at);

  Endpoint& mover_ep = session.client_endpoint(mover, TransportKind::kQuic);
  Endpoint& peer_ep = session.client_endpoint(peer, TransportKind::kQuic);
  if (conn->peer_of(mover_ep) != &peer_ep) {
    fail(ErrorCode::kInvalidArgument, "punched connection does not join A and B over QUIC");
  }

  Marks m;
  std::optional<EndpointAddress> announced;
  HookScope scope(session.hooks());
  SessionHooks& hooks = session.hooks();
  hooks.server_received = [&](Site from, const ControlMessage& msg) {
    if (from == mover && msg.tag == MessageTag::kMigrateUpdate && !m.a2s_recv) {
      m.a2s_recv = e.now();
    }
  };
  hooks.server_sent = [&](Site to, const ControlMessage& msg) {
    if (to == peer && msg.tag == MessageTag::kTriggerSend && !m.s2b_send) m.s2b_send = e.now();
  };
  hooks.control = [&](Site client, const ControlMessage& msg) {
    if (client != peer || msg.tag != MessageTag::kTriggerSend || m.s2b_recv) return;
    m.s2b_recv = e.now();
    announced = msg.address;
    // The peer's datagram toward the new address opens its own NAT; the
    // mover's NAT has no session for it yet.
    m.b2a_send = e.now();
    mark(e, to_string(peer), "trigger probe toward " + msg.address->to_string());
    conn->send_probe(peer_ep, *msg.address);
  };
  const int observer = topo.add_nat_observer([&](Site nat_site, const Datagram& d, bool) {
    if (nat_site != mover || d.kind != MessageKind::kProbe || m.b2a_arrive) return;
    if (!announced || d.dst != *announced) return;
    m.b2a_arrive = e.now();
    m.a2b_send = e.now();
    mark(e, to_string(mover), "migration data toward peer");
    conn->send(mover_ep, kMigrationDataBytes);
  });
  hooks.peer_data = [&](Site client, const ConnectionPtr& c, const Datagram&) {
    if (client == peer && c == conn && m.a2b_send && !m.a2b_recv) m.a2b_recv = e.now();
  };

  const VirtualTime t0 = e.now();
  m.a2s_send = t0;
  mark(e, to_string(mover), "migrate_update");
  session.send_control(mover, ControlMessage::migrate_update(
                                  PunchSession::client_id(mover),
                                  PunchSession::client_id(peer), change.new_private));
  e.run_until_idle();
  topo.remove_nat_observer(observer);

  RecoveryReport report;
  report.scheme = RecoveryScheme::kMigration;
  report.connection_label = conn->label();
  report.cid_history = conn->cid_history();
  report.legs.t_a2s = span(m.a2s_send, m.a2s_recv);
  report.legs.t_s2b = span(m.s2b_send, m.s2b_recv);
  report.legs.t_b2a = span(m.b2a_send, m.b2a_arrive);
  report.legs.t_a2b = span(m.a2b_send, m.a2b_recv);
  const bool validated = announced && conn->established() &&
                         conn->remote_of(peer_ep) == *announced;
  if (!complete_relay_legs(m) || !validated) {
    fail(ErrorCode::kMigrationFailed,
         !complete_relay_legs(m) ? "migration messages did not all arrive"
                                 : "peer did not validate the new path");
  }
  report.total = *m.a2b_recv - t0;
  report.success = true;
  return report;
}

RecoveryReport repunch(PunchSession& session, const AddressChangeEvent& change,
                       TransportKind kind) {
  const Site mover = site_of_node(change.node);
  const Site peer = PunchSession::peer_of(mover);
  Topology& topo = session.topology();
  Engine& e = session.engine();
  if (!session.ready()) fail(ErrorCode::kInvalidArgument, "session was never set up");
  if (e.now() < change.at) e.run_until(change.at);

  auto peer_public = session.known_peer_address(mover);
  if (!peer_public) fail(ErrorCode::kInvalidArgument, "mover never learned its peer's address");
  if (auto old = session.peer_connection()) old->close();
  if (auto relay = session.relay_connection(mover)) relay->close();
  session.set_peer_connection(nullptr);

  session.server_endpoint(kind);
  Endpoint& mover_ep = session.client_endpoint(mover, kind);
  session.client_endpoint(peer, kind);
  Endpoint& peer_probe_ep = session.client_endpoint(peer, TransportKind::kQuic);

  Marks m;
  std::optional<EndpointAddress> announced;
  ConnectionPtr relay;
  ConnectionPtr fresh;
  std::optional<ErrorCode> failure;
  HookScope scope(session.hooks());
  SessionHooks& hooks = session.hooks();
  hooks.relay_established = [&](Site client, const ConnectionPtr& c) {
    if (client != mover || c != relay || m.as_end) return;
    m.as_end = e.now();
    session.set_relay_connection(mover, c);
    m.a2s_send = e.now();
    session.send_control(mover, ControlMessage::migrate_update(
                                    PunchSession::client_id(mover),
                                    PunchSession::client_id(peer), change.new_private));
  };
  hooks.server_received = [&](Site from, const ControlMessage& msg) {
    if (from == mover && msg.tag == MessageTag::kMigrateUpdate && !m.a2s_recv) {
      m.a2s_recv = e.now();
    }
  };
  hooks.server_sent = [&](Site to, const ControlMessage& msg) {
    if (to == peer && msg.tag == MessageTag::kTriggerSend && !m.s2b_send) m.s2b_send = e.now();
  };
  hooks.control = [&](Site client, const ControlMessage& msg) {
    if (client != peer || msg.tag != MessageTag::kTriggerSend || m.s2b_recv) return;
    m.s2b_recv = e.now();
    announced = msg.address;
    m.b2a_send = e.now();
    mark(e, to_string(peer), "trigger probe toward " + msg.address->to_string());
    peer_probe_ep.send_probe(*msg.address);
  };
  const int observer = topo.add_nat_observer([&](Site nat_site, const Datagram& d, bool) {
    if (nat_site != mover || d.kind != MessageKind::kProbe || m.b2a_arrive) return;
    if (!announced || d.dst != *announced) return;
    m.b2a_arrive = e.now();
    m.ab_start = e.now();
    mark(e, to_string(mover), "reconnect toward " + peer_public->to_string());
    fresh = mover_ep.connect(*peer_public);
  });
  hooks.peer_established = [&](Site client, const ConnectionPtr& c) {
    if (client != mover || c != fresh || m.ab_end) return;
    m.ab_end = e.now();
    m.a2b_send = e.now();
    c->send(mover_ep, kMigrationDataBytes);
  };
  hooks.peer_failed = [&](Site, const ConnectionPtr& c, ErrorCode code) {
    if (c == fresh) failure = code;
  };
  hooks.peer_data = [&](Site client, const ConnectionPtr& c, const Datagram&) {
    if (client == peer && c == fresh && !m.a2b_recv) m.a2b_recv = e.now();
  };

  const VirtualTime t0 = e.now();
  m.as_start = t0;
  mark(e, to_string(mover), "reconnect to relay");
  relay = mover_ep.connect(Topology::kAddressS);
  e.run_until_idle();
  topo.remove_nat_observer(observer);

  RecoveryReport report;
  report.scheme = kind == TransportKind::kQuic ? RecoveryScheme::kRepunchQuic
                                               : RecoveryScheme::kRepunchTcp;
  report.legs.t_a_s = span(m.as_start, m.as_end);
  report.legs.t_a2s = span(m.a2s_send, m.a2s_recv);
  report.legs.t_s2b = span(m.s2b_send, m.s2b_recv);
  report.legs.t_b2a = span(m.b2a_send, m.b2a_arrive);
  report.legs.t_a_b = span(m.ab_start, m.ab_end);
  report.legs.t_a2b = span(m.a2b_send, m.a2b_recv);
  if (fresh) {
    report.connection_label = fresh->label();
    report.cid_history = fresh->cid_history();
  }
  report.success = complete_relay_legs(m) && m.as_end && m.ab_end && !failure;
  if (report.success) {
    report.total = *m.a2b_recv - t0;
    session.set_peer_connection(fresh);
  }
  return report;
}

Duration delta(const RecoveryReport& repunch_report, const RecoveryReport& migrate_report) {
  if (repunch_report.scheme == RecoveryScheme::kMigration ||
      migrate_report.scheme != RecoveryScheme::kMigration) {
    fail(ErrorCode::kTopologyMismatch, "delta compares a re-punch against a migration");
  }
  if (!repunch_report.success || !migrate_report.success) {
    fail(ErrorCode::kTopologyMismatch, "delta needs two successful recoveries");
  }
  const RecoveryLegs& r = repunch_report.legs;
  const RecoveryLegs& g = migrate_report.legs;
  if (r.t_a2s != g.t_a2s || r.t_s2b != g.t_s2b || r.t_b2a != g.t_b2a || r.t_a2b != g.t_a2b) {
    fail(ErrorCode::kTopologyMismatch, "shared legs differ between the two reports");
  }
  if (!r.t_a_s || !r.t_a_b) {
    fail(ErrorCode::kTopologyMismatch, "re-punch report lacks its connection legs");
  }
  const Duration d = repunch_report.total - migrate_report.total;
  if (d != *r.t_a_s + *r.t_a_b) {
    fail(ErrorCode::kIdentityViolation,
         "delta " + format_ms(d) + " ms differs from T_A_S + T_A_B = " +
             format_ms(*r.t_a_s + *r.t_a_b) + " ms");
  }
  return d;
}

}  // namespace holepunch
