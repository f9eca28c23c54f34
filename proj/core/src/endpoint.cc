#include "holepunch/endpoint.h"

#include <algorithm>
#include <cstdio>

namespace holepunch {

std::string_view to_string(ConnectionState state) {
  switch (state) {
    case ConnectionState::kHandshaking: return "handshaking";
    case ConnectionState::kEstablished: return "established";
    case ConnectionState::kFailed: return "failed";
    case ConnectionState::kClosed: return "closed";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// ConnectionDirectory

std::uint64_t ConnectionDirectory::mint_cid() {
  // mix64 is a bijection, so distinct counters give distinct ids.
  std::uint64_t cid = 0;
  while (cid == 0) cid = mix64(seed_ ^ mix64(++minted_));
  return cid;
}

void ConnectionDirectory::attach(std::uint64_t cid, std::shared_ptr<Connection> conn) {
  cids_[cid] = std::move(conn);
}

void ConnectionDirectory::retire(std::uint64_t cid) { cids_.erase(cid); }

std::shared_ptr<Connection> ConnectionDirectory::find(std::uint64_t cid) const {
  auto it = cids_.find(cid);
  return it == cids_.end() ? nullptr : it->second;
}

// ---------------------------------------------------------------------------
// Endpoint

Endpoint::Endpoint(PacketIo& io, ConnectionDirectory& directory, PortBindingTable& bindings,
                   std::uint16_t port, TransportKind kind, TransportOptions options)
    : io_(io), directory_(directory), bindings_(bindings), port_(port), kind_(kind),
      options_(std::move(options)) {
  held_.push_back(bindings_.bind(io_.node_name(), port_, kind_, options_.reuse_port));
}

Endpoint::~Endpoint() {
  for (const auto& h : held_) bindings_.release(h);
}

ConnectionPtr Endpoint::connect(const EndpointAddress& remote) {
  if (is_tcp_family(kind_)) {
    held_.push_back(bindings_.bind(io_.node_name(), port_, kind_, options_.reuse_port));
  }
  auto conn = std::make_shared<Connection>(*this, remote);
  conn->start();
  return conn;
}

void Endpoint::send_probe(const EndpointAddress& to, std::uint32_t token) {
  Datagram d;
  d.src = local_address();
  d.dst = to;
  d.kind = MessageKind::kProbe;
  d.payload_len = options_.control_bytes;
  d.seq = token;
  if (io_.engine().tracing()) io_.engine().trace(io_.node_name(), "probe " + d.describe());
  io_.transmit(std::move(d));
}

void Endpoint::receive(const Datagram& d) {
  if (d.conn_tag) {
    if (auto conn = directory_.find(*d.conn_tag)) {
      conn->on_datagram(*this, d);
      return;
    }
  } else if (d.kind == MessageKind::kProbe) {
    if (handlers_.on_probe) handlers_.on_probe(d);
    return;
  }
  if (io_.engine().tracing()) io_.engine().trace(io_.node_name(), "stray " + d.describe());
  if (handlers_.on_stray) handlers_.on_stray(d);
}

// ---------------------------------------------------------------------------
// Connection

Connection::Connection(Endpoint& initiator, const EndpointAddress& remote)
    : engine_(initiator.io().engine()),
      directory_(initiator.directory()),
      kind_(initiator.kind()),
      options_(initiator.options()) {
  sides_[0].ep = &initiator;
  sides_[0].remote = remote;
  label_ = std::string(to_string(kind_)) + "#" + std::to_string(directory_.next_serial());
}

void Connection::start() {
  auto self = shared_from_this();
  active_cid_ = directory_.mint_cid();
  cid_history_.push_back(active_cid_);
  directory_.attach(active_cid_, self);
  replenish_pool();
  sides_[0].ep->adopt(self);
  started_at_ = engine_.now();
  note(0, "connect " + sides_[0].remote.to_string());
  send_flight(0, 0, false);
}

void Connection::replenish_pool() {
  const auto want = static_cast<std::size_t>(std::max(1, options_.cid_pool_size));
  while (cid_pool_.size() < want) {
    const std::uint64_t cid = directory_.mint_cid();
    cid_pool_.push_back(cid);
    directory_.attach(cid, shared_from_this());
  }
}

int Connection::side_of(const Endpoint& ep) const {
  if (sides_[0].ep == &ep) return 0;
  if (sides_[1].ep == &ep) return 1;
  return -1;
}

Endpoint* Connection::peer_of(const Endpoint& ep) const {
  const int s = side_of(ep);
  return s < 0 ? nullptr : sides_[1 - s].ep;
}

EndpointAddress Connection::remote_of(const Endpoint& ep) const {
  const int s = side_of(ep);
  if (s < 0) fail(ErrorCode::kInvalidArgument, "endpoint is not part of " + label_);
  return sides_[s].remote;
}

Datagram Connection::make(int side, const EndpointAddress& to, MessageKind kind,
                          std::size_t len, std::uint32_t seq) const {
  Datagram d;
  d.src = local_of(side);
  d.dst = to;
  d.kind = kind;
  d.payload_len = len;
  d.conn_tag = active_cid_;
  d.seq = seq;
  return d;
}

void Connection::note(int side, const std::string& event) const {
  if (!engine_.tracing()) return;
  const Endpoint* ep = sides_[side].ep;
  engine_.trace(ep ? ep->io().node_name() : "?", label_ + " " + event);
}

void Connection::emit(int side, Datagram d, bool retransmission) {
  if (retransmission) {
    ++retransmissions_;
    directory_.count_retransmission();
    note(side, "retransmit " + d.describe());
  } else {
    note(side, "send " + d.describe());
  }
  sides_[side].ep->io().transmit(std::move(d));
}

Duration Connection::first_timeout() const {
  return initial_timeout(kind_, options_.policy, options_.rtt_estimate);
}

// --- handshake -------------------------------------------------------------

void Connection::send_flight(int side, int flight, bool retransmission) {
  emit(side, make(side, sides_[side].remote, MessageKind::kHandshake, options_.flight_bytes,
                  static_cast<std::uint32_t>(flight)),
       retransmission);
  // The completing flight is never timed: its loss shows up as a duplicate
  // of the previous flight, which triggers a resend.
  if (!retransmission && flight < flight_count(kind_) - 1) {
    Side& s = sides_[side];
    engine_.cancel(s.hs_timer);
    s.hs_flight = flight;
    s.hs_attempts = 0;
    arm_handshake_timer(side);
  }
}

void Connection::arm_handshake_timer(int side) {
  Side& s = sides_[side];
  const Duration wait = backoff_timeout(first_timeout(), s.hs_attempts);
  std::weak_ptr<Connection> weak = weak_from_this();
  s.hs_timer = engine_.schedule_after(wait, [weak, side] {
    auto self = weak.lock();
    if (!self || self->state_ != ConnectionState::kHandshaking) return;
    Side& st = self->sides_[side];
    if (st.hs_attempts >= self->options_.policy.max_retries) {
      const bool unreachable = self->sides_[1].ep == nullptr && self->unsolicited_drops_ > 0;
      self->fail_with(unreachable ? ErrorCode::kUnreachablePeer : ErrorCode::kMaxRetriesExceeded,
                      "handshake flight " + std::to_string(st.hs_flight) + " exhausted retries");
      return;
    }
    ++st.hs_attempts;
    self->send_flight(side, st.hs_flight, true);
    self->arm_handshake_timer(side);
  });
}

void Connection::on_handshake(int side, const Datagram& d) {
  if (state_ != ConnectionState::kHandshaking) {
    note(side, "ignore " + d.describe());
    return;
  }
  const int flight = static_cast<int>(d.seq);
  const int n = flight_count(kind_);
  // Even flights travel to the responder, odd ones back to the initiator.
  if (flight >= n || flight_from_initiator(flight) != (side == 1)) {
    note(side, "ignore " + d.describe());
    return;
  }
  Side& s = sides_[side];
  note(side, "recv " + d.describe());
  if (flight > s.received) {
    s.received = flight;
    if (s.hs_flight >= 0 && s.hs_flight < flight) {
      engine_.cancel(s.hs_timer);
      s.hs_flight = -1;
    }
    if (flight == n - 1) {
      establish();
    } else {
      send_flight(side, flight + 1, false);
    }
    return;
  }
  // Duplicate: our answer was probably lost. Resend it unless our own timer
  // is already responsible for it.
  const int answer = flight + 1;
  if (answer < n && s.hs_flight != answer) send_flight(side, answer, true);
}

void Connection::establish() {
  state_ = ConnectionState::kEstablished;
  established_at_ = engine_.now();
  cancel_timers();
  note(0, "established");
  auto self = shared_from_this();
  for (const Side& s : sides_) {
    if (s.ep && s.ep->handlers().on_established) s.ep->handlers().on_established(self);
  }
}

void Connection::fail_with(ErrorCode code, const std::string& why) {
  state_ = ConnectionState::kFailed;
  failure_ = code;
  cancel_timers();
  note(0, "failed " + std::string(to_string(code)) + " (" + why + ")");
  auto self = shared_from_this();
  for (const Side& s : sides_) {
    if (s.ep && s.ep->handlers().on_failed) s.ep->handlers().on_failed(self, code);
  }
}

void Connection::cancel_timers() {
  for (Side& s : sides_) {
    engine_.cancel(s.hs_timer);
    s.hs_flight = -1;
    for (auto& [seq, o] : s.unacked) engine_.cancel(o.timer);
    if (s.validation) engine_.cancel(s.validation->timer);
  }
}

void Connection::close() {
  if (state_ == ConnectionState::kClosed) return;
  auto keep = shared_from_this();
  cancel_timers();
  for (Side& s : sides_) {
    s.unacked.clear();
    s.validation.reset();
  }
  state_ = ConnectionState::kClosed;
  note(0, "closed");
  directory_.retire(active_cid_);
  for (const auto cid : cid_pool_) directory_.retire(cid);
}

// --- reliable data ---------------------------------------------------------

std::uint32_t Connection::send(Endpoint& from, std::size_t payload_len,
                               std::vector<std::uint8_t> payload) {
  const int side = side_of(from);
  if (side < 0) fail(ErrorCode::kInvalidArgument, "endpoint is not part of " + label_);
  if (!established()) fail(ErrorCode::kInvalidArgument, label_ + " is not established");
  Side& s = sides_[side];
  const std::uint32_t seq = s.next_seq++;
  Datagram d = make(side, s.remote, MessageKind::kData, payload_len, seq);
  d.payload = std::move(payload);
  s.unacked[seq] = Outstanding{d, {}, 0};
  emit(side, std::move(d), false);
  arm_data_timer(side, seq);
  return seq;
}

bool Connection::all_acked(const Endpoint& from) const {
  const int side = side_of(from);
  return side < 0 || sides_[side].unacked.empty();
}

void Connection::arm_data_timer(int side, std::uint32_t seq) {
  Outstanding& o = sides_[side].unacked.at(seq);
  const Duration wait = backoff_timeout(first_timeout(), o.attempts);
  std::weak_ptr<Connection> weak = weak_from_this();
  o.timer = engine_.schedule_after(wait, [weak, side, seq] {
    auto self = weak.lock();
    if (!self || !self->established()) return;
    auto it = self->sides_[side].unacked.find(seq);
    if (it == self->sides_[side].unacked.end()) return;
    if (it->second.attempts >= self->options_.policy.max_retries) {
      self->fail_with(ErrorCode::kMaxRetriesExceeded,
                      "data " + std::to_string(seq) + " exhausted retries");
      return;
    }
    ++it->second.attempts;
    Datagram d = it->second.d;
    // Resend from the current address toward the current remote.
    d.src = self->local_of(side);
    d.dst = self->sides_[side].remote;
    d.conn_tag = self->active_cid_;
    self->emit(side, std::move(d), true);
    self->arm_data_timer(side, seq);
  });
}

void Connection::on_data(int side, const Datagram& d) {
  Side& s = sides_[side];
  if (!established()) {
    note(side, "ignore " + d.describe());
    return;
  }
  if (is_tcp_family(kind_) && d.src != s.remote) {
    note(side, "drop 4-tuple mismatch " + d.describe());
    return;
  }
  Datagram ack = make(side, d.src, MessageKind::kAck, options_.control_bytes, d.seq);
  ack.conn_tag = d.conn_tag;
  emit(side, std::move(ack), false);
  if (!s.delivered.insert(d.seq).second) return;
  note(side, "recv " + d.describe());
  // QUIC keeps the data and proves the new path in parallel.
  if (d.src != s.remote && !(s.validation && s.validation->target == d.src)) {
    validate_path(*s.ep, d.src);
  }
  if (s.ep->handlers().on_data) s.ep->handlers().on_data(shared_from_this(), d);
}

void Connection::on_ack(int side, const Datagram& d) {
  Side& s = sides_[side];
  auto it = s.unacked.find(d.seq);
  if (it == s.unacked.end()) return;
  engine_.cancel(it->second.timer);
  s.unacked.erase(it);
}

// --- path validation -------------------------------------------------------

void Connection::validate_path(Endpoint& from, const EndpointAddress& new_remote,
                               std::function<void(const PathValidationResult&)> done) {
  if (kind_ != TransportKind::kQuic) {
    fail(ErrorCode::kNotQuic, label_ + " cannot validate a path");
  }
  const int side = side_of(from);
  if (side < 0) fail(ErrorCode::kInvalidArgument, "endpoint is not part of " + label_);
  if (!established()) fail(ErrorCode::kInvalidArgument, label_ + " is not established");
  Side& s = sides_[side];
  if (s.validation) {
    engine_.cancel(s.validation->timer);
    directory_.retire(s.validation->cid);
    s.validation.reset();
  }
  if (cid_pool_.empty()) replenish_pool();
  Validation v;
  v.target = new_remote;
  v.cid = cid_pool_.front();
  cid_pool_.pop_front();
  v.token = ++next_token_;
  v.done = std::move(done);
  s.validation = std::move(v);
  note(side, "validate_path " + new_remote.to_string());
  send_challenge(side);
}

bool Connection::validating(const Endpoint& from) const {
  const int side = side_of(from);
  return side >= 0 && sides_[side].validation.has_value();
}

void Connection::send_challenge(int side) {
  Validation& v = *sides_[side].validation;
  Datagram d = make(side, v.target, MessageKind::kPathChallenge, options_.flight_bytes, v.token);
  d.conn_tag = v.cid;
  emit(side, std::move(d), v.attempts > 0);
  const Duration wait = backoff_timeout(first_timeout(), v.attempts);
  std::weak_ptr<Connection> weak = weak_from_this();
  v.timer = engine_.schedule_after(wait, [weak, side] {
    auto self = weak.lock();
    if (!self || !self->sides_[side].validation) return;
    Validation& cur = *self->sides_[side].validation;
    if (cur.attempts >= self->options_.policy.max_retries) {
      self->finish_validation(side, false);
      return;
    }
    ++cur.attempts;
    self->send_challenge(side);
  });
}

void Connection::on_challenge(int side, const Datagram& d) {
  Datagram r = make(side, d.src, MessageKind::kPathResponse, options_.flight_bytes, d.seq);
  r.conn_tag = d.conn_tag;
  note(side, "recv " + d.describe());
  emit(side, std::move(r), false);
}

void Connection::on_response(int side, const Datagram& d) {
  Side& s = sides_[side];
  if (!s.validation || s.validation->token != d.seq || d.src != s.validation->target) {
    note(side, "ignore " + d.describe());
    return;
  }
  note(side, "recv " + d.describe());
  finish_validation(side, true);
}

void Connection::finish_validation(int side, bool ok) {
  Side& s = sides_[side];
  Validation v = std::move(*s.validation);
  s.validation.reset();
  engine_.cancel(v.timer);
  PathValidationResult result;
  result.validated = ok;
  result.completed_at = engine_.now();
  result.remote = v.target;
  result.cid = v.cid;
  if (ok) {
    s.remote = v.target;
    directory_.retire(active_cid_);
    active_cid_ = v.cid;
    cid_history_.push_back(v.cid);
    note(side, "path_validated " + v.target.to_string());
  } else {
    result.error = ErrorCode::kValidationTimeout;
    directory_.retire(v.cid);
    note(side, "path_validation_failed " + v.target.to_string());
  }
  replenish_pool();
  if (v.done) v.done(result);
}

void Connection::send_probe(Endpoint& from, const EndpointAddress& to) {
  const int side = side_of(from);
  if (side < 0) fail(ErrorCode::kInvalidArgument, "endpoint is not part of " + label_);
  emit(side, make(side, to, MessageKind::kProbe, options_.control_bytes, 0), false);
}

// --- dispatch --------------------------------------------------------------

void Connection::on_datagram(Endpoint& at, const Datagram& d) {
  int side = side_of(at);
  if (side < 0 && sides_[1].ep == nullptr && d.kind == MessageKind::kHandshake &&
      d.seq == 0 && is_tcp_family(at.kind()) == is_tcp_family(kind_)) {
    sides_[1].ep = &at;
    sides_[1].remote = d.src;
    at.adopt(shared_from_this());
    side = 1;
  }
  if (side < 0 || state_ == ConnectionState::kClosed) {
    if (engine_.tracing()) engine_.trace(at.io().node_name(), "stray " + d.describe());
    if (at.handlers().on_stray) at.handlers().on_stray(d);
    return;
  }
  if (is_tcp_family(kind_) && d.src != sides_[side].remote && d.kind != MessageKind::kData) {
    note(side, "drop 4-tuple mismatch " + d.describe());
    return;
  }
  switch (d.kind) {
    case MessageKind::kHandshake: on_handshake(side, d); break;
    case MessageKind::kData: on_data(side, d); break;
    case MessageKind::kAck: on_ack(side, d); break;
    case MessageKind::kPathChallenge: on_challenge(side, d); break;
    case MessageKind::kPathResponse: on_response(side, d); break;
    case MessageKind::kProbe:
      note(side, "recv " + d.describe());
      if (at.handlers().on_probe) at.handlers().on_probe(d);
      break;
    case MessageKind::kControl:
      note(side, "ignore " + d.describe());
      break;
  }
}

// ---------------------------------------------------------------------------
// SocketTable, LinkedNode, PointToPoint

Endpoint& SocketTable::open(std::uint16_t port, TransportKind kind, TransportOptions options) {
  auto key = std::pair{port, is_tcp_family(kind)};
  auto it = endpoints_.find(key);
  if (it != endpoints_.end()) {
    if (it->second->kind() != kind) {
      fail(ErrorCode::kPortInUse, io_.node_name() + ":" + std::to_string(port) +
                                      " is open for " + std::string(to_string(it->second->kind())));
    }
    return *it->second;
  }
  auto ep = std::make_unique<Endpoint>(io_, directory_, bindings_, port, kind, std::move(options));
  return *endpoints_.emplace(key, std::move(ep)).first->second;
}

Endpoint* SocketTable::find(std::uint16_t port, bool tcp) const {
  auto it = endpoints_.find(std::pair{port, tcp});
  return it == endpoints_.end() ? nullptr : it->second.get();
}

void SocketTable::deliver(const Datagram& d) {
  bool tcp = false;
  if (d.conn_tag) {
    if (auto conn = directory_.find(*d.conn_tag)) tcp = is_tcp_family(conn->kind());
  }
  Endpoint* ep = find(d.dst.port, tcp);
  if (!ep) {
    if (io_.engine().tracing()) io_.engine().trace(io_.node_name(), "no_socket " + d.describe());
    return;
  }
  ep->receive(d);
}

LinkedNode::LinkedNode(Engine& engine, ConnectionDirectory& directory,
                       PortBindingTable& bindings, std::string name, IpAddress ip)
    : engine_(engine), name_(std::move(name)), ip_(ip), sockets_(*this, directory, bindings) {}

void LinkedNode::transmit(Datagram d) {
  LinkedNode* peer = peer_;
  engine_.send(std::move(d), link_, [peer](Datagram got) { peer->receive(got); });
}

void LinkedNode::receive(const Datagram& d) {
  if (d.dst.ip != ip_) {
    if (engine_.tracing()) engine_.trace(name_, "unroutable " + d.describe());
    return;
  }
  sockets_.deliver(d);
}

PointToPoint::PointToPoint(TransportKind kind, Duration rtt, TransportOptions options,
                           std::uint64_t seed, double loss_rate)
    : engine_(seed),
      directory_(seed),
      i_node_(engine_, directory_, bindings_, "I", IpAddress::from_octets(10, 0, 0, 1)),
      r_node_(engine_, directory_, bindings_, "R", IpAddress::from_octets(10, 0, 0, 2)) {
  if (rtt <= Duration::zero()) fail(ErrorCode::kInvalidArgument, "rtt must be positive");
  const LinkSpec half{rtt / 2, loss_rate, std::nullopt};
  // Odd tick counts put the spare nanosecond on the return leg.
  LinkSpec back = half;
  back.one_way_delay = rtt - half.one_way_delay;
  forward_ = engine_.add_link(half, "I->R");
  reverse_ = engine_.add_link(back, "R->I");
  i_node_.connect_to(&r_node_, forward_);
  r_node_.connect_to(&i_node_, reverse_);
  options.rtt_estimate = rtt;
  initiator_ = &i_node_.sockets().open(kInitiatorPort, kind, options);
  responder_ = &r_node_.sockets().open(kResponderPort, kind, options);
}

Duration handshake_duration(TransportKind kind, Duration rtt,
                            const std::vector<int>& lost_flights,
                            const RetransmissionPolicy& policy) {
  if (rtt <= Duration::zero()) fail(ErrorCode::kInvalidArgument, "rtt must be positive");
  const int n = flight_count(kind);
  std::vector<int> budget(static_cast<std::size_t>(n), 0);
  for (const int f : lost_flights) {
    if (f < 0 || f >= n) {
      fail(ErrorCode::kInvalidArgument,
           "flight " + std::to_string(f) + " outside " + std::string(to_string(kind)) +
               " schedule of " + std::to_string(n));
    }
    ++budget[static_cast<std::size_t>(f)];
  }
  TransportOptions options;
  options.policy = policy;
  PointToPoint p2p(kind, rtt, options);
  p2p.engine().set_tracing(false);
  auto drop = [&budget](const Datagram& d) {
    if (d.kind != MessageKind::kHandshake) return false;
    int& left = budget[d.seq];
    if (left == 0) return false;
    --left;
    return true;
  };
  p2p.engine().set_drop_filter(p2p.forward_link(), drop);
  p2p.engine().set_drop_filter(p2p.reverse_link(), drop);
  auto conn = p2p.initiator().connect(
      {p2p.responder_node().local_ip(), PointToPoint::kResponderPort});
  p2p.engine().run_until_idle();
  if (!conn->established()) {
    fail(conn->failure().value_or(ErrorCode::kMaxRetriesExceeded),
         "handshake did not complete");
  }
  return *conn->established_at() - conn->started_at();
}

}  // namespace holepunch
