#include "holepunch/topology.h"

#include "holepunch/error.h"

namespace holepunch {
namespace {

constexpr int idx(Site s) { return static_cast<int>(s); }

NatConfig nat_config(const TopologyConfig& c, IpAddress public_ip, IpAddress network,
                     MappingPolicy mapping, std::uint16_t port_base, std::uint64_t salt) {
  NatConfig n;
  n.public_ip = public_ip;
  n.private_network = network;
  n.prefix_len = 24;
  n.mapping = mapping;
  n.filtering = c.filtering;
  n.session_timeout = c.session_timeout;
  n.port_base = port_base;
  n.seed = derive_seed({c.seed, salt});
  return n;
}

}  // namespace

const EndpointAddress Topology::kAddressA{IpAddress::from_octets(192, 168, 0, 2), kClientPort};
const EndpointAddress Topology::kAddressB{IpAddress::from_octets(192, 168, 1, 2), kClientPort};
const EndpointAddress Topology::kAddressS{IpAddress::from_octets(123, 56, 64, 101), kServerPort};
const IpAddress Topology::kPublicA = IpAddress::from_octets(123, 56, 64, 102);
const IpAddress Topology::kPublicB = IpAddress::from_octets(123, 56, 64, 103);

std::string_view to_string(Site site) {
  switch (site) {
    case Site::kA: return "A";
    case Site::kB: return "B";
    case Site::kS: return "S";
  }
  return "?";
}

Duration PathDelays::between(Site from, Site to) const {
  if (from == Site::kA && to == Site::kS) return a_to_s;
  if (from == Site::kS && to == Site::kA) return s_to_a;
  if (from == Site::kB && to == Site::kS) return b_to_s;
  if (from == Site::kS && to == Site::kB) return s_to_b;
  if (from == Site::kA && to == Site::kB) return a_to_b;
  if (from == Site::kB && to == Site::kA) return b_to_a;
  return Duration::zero();
}

void TopologyConfig::validate() const {
  if (rtt <= Duration::zero()) fail(ErrorCode::kInvalidArgument, "rtt must be positive");
  if (!(loss_rate >= 0.0 && loss_rate <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "loss rate outside [0,1]");
  }
  if (bandwidth_bps && *bandwidth_bps == 0) {
    fail(ErrorCode::kInvalidArgument, "zero bandwidth cap");
  }
  if (host_processing_delay < Duration::zero()) {
    fail(ErrorCode::kInvalidArgument, "negative processing delay");
  }
  if (path_delays) {
    for (Duration d : {path_delays->a_to_s, path_delays->s_to_a, path_delays->b_to_s,
                       path_delays->s_to_b, path_delays->a_to_b, path_delays->b_to_a}) {
      if (d < Duration::zero()) fail(ErrorCode::kInvalidArgument, "negative path delay");
    }
  }
}

// ---------------------------------------------------------------------------

Host::Host(Topology& topology, Site site, std::string name, IpAddress ip)
    : topology_(topology), site_(site), name_(std::move(name)), ip_(ip),
      sockets_(*this, topology.directory_, topology.bindings_) {}

Engine& Host::engine() { return topology_.engine_; }

void Host::transmit(Datagram d) { topology_.route_from(site_, std::move(d)); }

Endpoint& Host::endpoint(std::uint16_t port, TransportKind kind) {
  return sockets_.open(port, kind, topology_.transport_options());
}

void Host::receive(const Datagram& d) {
  if (d.dst.ip != ip_) {
    if (engine().tracing()) engine().trace(name_, "unroutable " + d.describe());
    return;
  }
  sockets_.deliver(d);
}

// ---------------------------------------------------------------------------

Topology::Topology(TopologyConfig config)
    : config_((config.validate(), config)),
      engine_(config.seed),
      directory_(config.seed),
      nat_a_(nat_config(config, kPublicA, IpAddress::from_octets(192, 168, 0, 0),
                        config.nat_a_mapping, 8001, 1),
             "NAT-A"),
      nat_b_(nat_config(config, kPublicB, IpAddress::from_octets(192, 168, 1, 0),
                        config.nat_b_mapping, 8002, 2),
             "NAT-B") {
  engine_.set_tracing(config_.trace);
  hosts_[idx(Site::kA)] = std::make_unique<Host>(*this, Site::kA, "A", kAddressA.ip);
  hosts_[idx(Site::kB)] = std::make_unique<Host>(*this, Site::kB, "B", kAddressB.ip);
  hosts_[idx(Site::kS)] = std::make_unique<Host>(*this, Site::kS, "S", kAddressS.ip);

  const Duration half = config_.rtt / 2;
  const Duration up_delay =
      (config_.path_delays ? Duration::zero() : half) + config_.host_processing_delay;
  for (Site s : {Site::kA, Site::kB, Site::kS}) {
    LinkSpec up{up_delay, config_.loss_rate, config_.bandwidth_bps};
    uplink_[idx(s)] = engine_.add_link(up, std::string(to_string(s)) + "-up");
  }
  for (Site from : {Site::kA, Site::kB, Site::kS}) {
    for (Site to : {Site::kA, Site::kB, Site::kS}) {
      if (from == to) continue;
      LinkSpec core;
      if (config_.path_delays) core.one_way_delay = config_.path_delays->between(from, to);
      core_[idx(from)][idx(to)] = engine_.add_link(
          core, std::string(to_string(from)) + "->" + std::string(to_string(to)));
    }
  }
  downlink_[0] = engine_.add_link(LinkSpec{}, "NAT-A-down");
  downlink_[1] = engine_.add_link(LinkSpec{}, "NAT-B-down");
}

TransportOptions Topology::transport_options() const {
  TransportOptions o;
  o.policy = config_.retransmission;
  o.rtt_estimate = config_.rtt;
  o.reuse_port = config_.tcp_port_reuse;
  return o;
}

Host& Topology::host(Site site) { return *hosts_[idx(site)]; }

Host& Topology::host(std::string_view name) {
  for (auto& h : hosts_) {
    if (h->node_name() == name) return *h;
  }
  fail(ErrorCode::kUnknownNode, "no host named '" + std::string(name) + "'");
}

bool Topology::has_node(std::string_view name) const {
  for (const auto& h : hosts_) {
    if (h->node_name() == name) return true;
  }
  return name == nat_a_.name() || name == nat_b_.name();
}

NatBox& Topology::nat(Site site) {
  if (site == Site::kA) return nat_a_;
  if (site == Site::kB) return nat_b_;
  fail(ErrorCode::kInvalidArgument, "S has no NAT");
}

Duration Topology::path_delay(Site from, Site to) const {
  const Duration up =
      (config_.path_delays ? Duration::zero() : config_.rtt / 2) + config_.host_processing_delay;
  const Duration core = config_.path_delays ? config_.path_delays->between(from, to)
                                            : Duration::zero();
  return up + core;
}

int Topology::add_nat_observer(NatObserver observer) {
  observers_[++next_observer_] = std::move(observer);
  return next_observer_;
}

void Topology::remove_nat_observer(int id) { observers_.erase(id); }

std::optional<Site> Topology::site_of_public(IpAddress ip) const {
  if (ip == kPublicA) return Site::kA;
  if (ip == kPublicB) return Site::kB;
  if (ip == kAddressS.ip) return Site::kS;
  return std::nullopt;
}

void Topology::route_from(Site site, Datagram d) {
  engine_.send(std::move(d), uplink_[idx(site)],
               [this, site](Datagram got) { after_uplink(site, std::move(got)); });
}

void Topology::after_uplink(Site site, Datagram d) {
  if (site == Site::kS) {
    core_forward(site, std::move(d));
    return;
  }
  NatBox& box = nat(site);
  if (box.is_hairpin(d)) {
    drop_at_nat(site, d, "drop_hairpin ");
    return;
  }
  const EndpointAddress internal = d.src;
  Datagram out = box.translate_outbound(std::move(d), engine_.now());
  if (engine_.tracing()) {
    engine_.trace(box.name(), "out " + internal.to_string() + "=>" + out.src.to_string() +
                                  " " + out.describe());
  }
  core_forward(site, std::move(out));
}

void Topology::core_forward(Site from, Datagram d) {
  auto to = site_of_public(d.dst.ip);
  if (!to || *to == from) {
    if (engine_.tracing()) engine_.trace("core", "unroutable " + d.describe());
    return;
  }
  const Site dest = *to;
  engine_.send(std::move(d), core_[idx(from)][idx(dest)],
               [this, dest](Datagram got) { arrive(dest, std::move(got)); });
}

void Topology::arrive(Site site, Datagram d) {
  if (site == Site::kS) {
    hosts_[idx(Site::kS)]->receive(d);
    return;
  }
  NatBox& box = nat(site);
  InboundResult r = box.translate_inbound(d, engine_.now());
  if (std::holds_alternative<DroppedUnsolicited>(r)) {
    drop_at_nat(site, d, "drop_unsolicited ");
    return;
  }
  for (auto& [id, obs] : std::map<int, NatObserver>(observers_)) obs(site, d, false);
  Datagram in = std::move(std::get<Forwarded>(r).datagram);
  if (engine_.tracing()) engine_.trace(box.name(), "in " + in.describe());
  Host* h = hosts_[idx(site)].get();
  engine_.send(std::move(in), downlink_[idx(site)], [h](Datagram got) { h->receive(got); });
}

void Topology::drop_at_nat(Site site, const Datagram& d, const std::string& why) {
  ++unsolicited_drops_;
  if (engine_.tracing()) engine_.trace(nat(site).name(), why + d.describe());
  if (d.conn_tag) {
    if (auto conn = directory_.find(*d.conn_tag)) conn->note_unsolicited_drop();
  }
  for (auto& [id, obs] : std::map<int, NatObserver>(observers_)) obs(site, d, true);
}

}  // namespace holepunch
