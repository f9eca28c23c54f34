#include "holepunch/puncher.h"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "holepunch/error.h"

namespace holepunch {
namespace {

// Restores the session hooks when a flow that replaced them returns.
class HookScope {
 public:
  explicit HookScope(SessionHooks& hooks) : hooks_(hooks), saved_(hooks) {}
  ~HookScope() { hooks_ = saved_; }

 private:
  SessionHooks& hooks_;
  SessionHooks saved_;
};

void trace(Engine& e, std::string_view node, const std::string& event) {
  if (e.tracing()) e.trace(node, event);
}

}  // namespace

PunchSession::PunchSession(const PunchScenario& scenario, TopologyConfig config)
    : scenario_(scenario),
      topology_([&] {
        config.rtt = scenario.rtt;
        config.loss_rate = scenario.loss_rate;
        config.seed = scenario.seed;
        return config;
      }()) {}

ClientId PunchSession::client_id(Site client) {
  if (client == Site::kS) fail(ErrorCode::kInvalidArgument, "S is not a client");
  return client == Site::kA ? kClientA : kClientB;
}

Site PunchSession::client_site(ClientId id) {
  if (id == kClientA) return Site::kA;
  if (id == kClientB) return Site::kB;
  fail(ErrorCode::kInvalidArgument, "unknown client id " + std::to_string(id));
}

bool PunchSession::is_relay(Endpoint& ep, const ConnectionPtr& conn) const {
  return conn->remote_of(ep).ip == Topology::kAddressS.ip;
}

Endpoint& PunchSession::client_endpoint(Site client, TransportKind kind) {
  Endpoint& ep = topology_.host(client).endpoint(Topology::kClientPort, kind);
  install(client, ep);
  return ep;
}

Endpoint& PunchSession::server_endpoint(TransportKind kind) {
  Endpoint& ep = topology_.host(Site::kS).endpoint(Topology::kServerPort, kind);
  install_server(ep);
  return ep;
}

void PunchSession::set_relay_connection(Site client, ConnectionPtr conn) {
  relay_[index(client)] = std::move(conn);
}

void PunchSession::install(Site client, Endpoint& ep) {
  Endpoint* e = &ep;
  EndpointHandlers h;
  h.on_established = [this, client, e](const ConnectionPtr& conn) {
    if (is_relay(*e, conn)) {
      if (hooks_.relay_established) {
        hooks_.relay_established(client, conn);
      } else {
        const auto frame = encode(
            ControlMessage::register_client(client_id(client), e->local_address()));
        conn->send(*e, frame.size(), frame);
      }
    } else if (hooks_.peer_established) {
      hooks_.peer_established(client, conn);
    }
  };
  h.on_failed = [this, client, e](const ConnectionPtr& conn, ErrorCode code) {
    if (!is_relay(*e, conn) && hooks_.peer_failed) hooks_.peer_failed(client, conn, code);
  };
  h.on_data = [this, client, e](const ConnectionPtr& conn, const Datagram& d) {
    on_client_data(client, *e, conn, d);
  };
  h.on_probe = [this, client](const Datagram& d) {
    if (hooks_.probe) hooks_.probe(client, d);
  };
  ep.set_handlers(std::move(h));
}

void PunchSession::install_server(Endpoint& ep) {
  Endpoint* e = &ep;
  EndpointHandlers h;
  h.on_data = [this, e](const ConnectionPtr& conn, const Datagram& d) {
    on_server_data(*e, conn, d);
  };
  ep.set_handlers(std::move(h));
}

void PunchSession::on_client_data(Site client, Endpoint& ep, const ConnectionPtr& conn,
                                  const Datagram& d) {
  if (!is_relay(ep, conn)) {
    if (hooks_.peer_data) hooks_.peer_data(client, conn, d);
    return;
  }
  ControlMessage msg;
  try {
    msg = decode(d.payload);
  } catch (const Error& err) {
    trace(engine(), to_string(client), std::string("bad_control ") + err.what());
    return;
  }
  trace(engine(), to_string(client), "control " + msg.describe());
  if (msg.tag == MessageTag::kPeerInfo || msg.tag == MessageTag::kTriggerSend) {
    peer_addr_[index(client)] = msg.address;
  }
  if (hooks_.control) hooks_.control(client, msg);
}

void PunchSession::on_server_data(Endpoint& ep, const ConnectionPtr& conn, const Datagram& d) {
  ControlMessage msg;
  try {
    msg = decode(d.payload);
  } catch (const Error& err) {
    trace(engine(), "S", std::string("bad_control ") + err.what());
    const auto frame =
        encode(ControlMessage::error_reply(0, ControlError::kMalformedMessage));
    conn->send(ep, frame.size(), frame);
    return;
  }
  trace(engine(), "S", "control " + msg.describe() + " from " + d.src.to_string());
  const bool known = msg.client_id == kClientA || msg.client_id == kClientB;
  if (known && (msg.tag == MessageTag::kRegister || msg.tag == MessageTag::kMigrateUpdate)) {
    server_conns_[msg.client_id] = conn;
  }
  const auto outbound = server_.handle(msg, d.src, engine().now());
  if (known && hooks_.server_received) hooks_.server_received(client_site(msg.client_id), msg);
  for (const auto& out : outbound) {
    ConnectionPtr target = conn;
    auto it = server_conns_.find(out.to_client);
    if (it != server_conns_.end() && it->second->established()) target = it->second;
    const auto frame = encode(out.message);
    trace(engine(), "S", "send " + out.message.describe() + " to " + std::to_string(out.to_client));
    target->send(*target->responder(), frame.size(), frame);
    if (hooks_.server_sent && (out.to_client == kClientA || out.to_client == kClientB)) {
      hooks_.server_sent(client_site(out.to_client), out.message);
    }
  }
}

void PunchSession::send_control(Site client, const ControlMessage& msg) {
  ConnectionPtr conn = relay_[index(client)];
  if (!conn || !conn->established()) {
    fail(ErrorCode::kInvalidArgument, std::string(to_string(client)) + " has no relay connection");
  }
  Endpoint* ep = conn->initiator();
  const auto frame = encode(msg);
  trace(engine(), to_string(client), "send " + msg.describe());
  conn->send(*ep, frame.size(), frame);
}

bool PunchSession::ready() const { return ready_; }

void PunchSession::setup() {
  if (ready_) return;
  const TransportKind relay = topology_.config().relay_transport;
  server_endpoint(relay);
  for (Site c : {Site::kA, Site::kB}) {
    client_endpoint(c, scenario_.transport);
    relay_[index(c)] = client_endpoint(c, relay).connect(Topology::kAddressS);
  }
  engine().run_until_idle();
  for (Site c : {Site::kA, Site::kB}) {
    if (!relay_[index(c)]->established() || !server_.lookup(client_id(c))) {
      fail(ErrorCode::kPunchFailed,
           std::string(to_string(c)) + " could not register with the relay");
    }
  }
  ready_ = true;
}

PunchOutcome PunchSession::punch() {
  // On a very lossy network registration itself can give up; that is a
  // failed trial, not a broken experiment.
  try {
    setup();
  } catch (const Error& err) {
    if (err.code() != ErrorCode::kPunchFailed) throw;
    PunchOutcome out;
    out.requested_at = engine().now();
    out.failure = err.code();
    out.failure_reason = err.what();
    return out;
  }
  Engine& e = engine();
  const std::size_t trace_start = e.trace_log().size();
  const std::uint64_t retrans_before = topology_.directory().retransmissions();
  const std::size_t drops_before = topology_.unsolicited_drops();

  struct Attempt {
    ConnectionPtr conn;
    std::string name;
    bool failed = false;
  };
  std::vector<Attempt> attempts;
  ConnectionPtr winner;
  std::string winner_name;
  std::vector<std::string> reasons;

  HookScope scope(hooks_);
  hooks_.control = [&](Site client, const ControlMessage& msg) {
    if (msg.tag == MessageTag::kError) {
      reasons.push_back("relay replied with an error");
      return;
    }
    if (msg.tag != MessageTag::kPeerInfo) return;
    const Duration offset = scenario_.start_offset;
    const Duration wait = std::max(Duration::zero(), client == Site::kA ? offset : -offset);
    const EndpointAddress to = *msg.address;
    e.schedule_after(wait, [&, client, to] {
      if (winner) return;
      const std::string name = client == Site::kA ? "ConnA" : "ConnB";
      trace(e, to_string(client), name + " start toward " + to.to_string());
      attempts.push_back({client_endpoint(client, scenario_.transport).connect(to), name});
    });
  };
  hooks_.peer_established = [&](Site, const ConnectionPtr& conn) {
    if (winner) return;
    winner = conn;
    for (auto& a : attempts) {
      if (a.conn == conn) {
        winner_name = a.name;
      } else {
        a.conn->close();
      }
    }
    trace(e, "A", "punched " + winner_name);
  };
  hooks_.peer_failed = [&](Site, const ConnectionPtr& conn, ErrorCode code) {
    for (auto& a : attempts) {
      if (a.conn == conn && !a.failed) {
        a.failed = true;
        reasons.push_back(a.name + " " + std::string(to_string(code)));
      }
    }
  };

  const VirtualTime requested = e.now();
  trace(e, "A", "request_peer " + std::to_string(kClientB));
  send_control(Site::kA, ControlMessage::connect_request(kClientA, kClientB));
  e.run_until_idle();

  PunchOutcome out;
  out.requested_at = requested;
  out.retransmission_count = topology_.directory().retransmissions() - retrans_before;
  out.unsolicited_drops = topology_.unsolicited_drops() - drops_before;
  out.trace.assign(e.trace_log().begin() + static_cast<std::ptrdiff_t>(trace_start),
                   e.trace_log().end());
  if (winner) {
    out.success = true;
    out.elapsed = *winner->established_at() - requested;
    out.winner = winner_name;
    peer_ = winner;
  } else {
    out.failure = ErrorCode::kPunchFailed;
    if (reasons.empty()) reasons.push_back("no connection attempt completed");
    for (std::size_t i = 0; i < reasons.size(); ++i) {
      out.failure_reason += (i ? "; " : "") + reasons[i];
    }
  }
  return out;
}

PunchOutcome punch(const PunchScenario& scenario, const TopologyConfig& config) {
  PunchSession session(scenario, config);
  return session.punch();
}

std::pair<Duration, Duration> predicted_bounds(TransportKind kind, Duration rtt) {
  if (rtt < Duration::zero()) fail(ErrorCode::kInvalidArgument, "negative rtt");
  const Duration lo = rtt + lossless_handshake(kind, rtt);
  return {lo, lo + rtt / 2};
}

std::vector<PunchOutcome> run_trials(const PunchScenario& scenario, std::size_t n,
                                     const TopologyConfig& config, unsigned threads) {
  if (n == 0) fail(ErrorCode::kInvalidArgument, "need at least one trial");
  std::vector<PunchOutcome> results(n);
  auto one = [&](std::size_t i) {
    PunchScenario s = scenario;
    s.seed = derive_seed({scenario.seed, i});
    results[i] = punch(s, config);
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) one(i);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          one(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
  return results;
}

}  // namespace holepunch
