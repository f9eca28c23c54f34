#pragma once

// The three-site world: client A behind NAT-A, client B behind NAT-B and the
// public relay S. Each site's uplink carries that site's share of the path
// delay, its loss and its bandwidth cap; the NAT sits after the uplink and
// the core between sites adds no delay unless per-path delays are given.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "holepunch/endpoint.h"
#include "holepunch/natbox.h"
#include "holepunch/simnet.h"
#include "holepunch/transport.h"

namespace holepunch {

enum class Site { kA = 0, kB = 1, kS = 2 };

std::string_view to_string(Site site);

// One-way delays per ordered site pair. When set, uplinks add only the host
// processing delay.
struct PathDelays {
  Duration a_to_s{0};
  Duration s_to_a{0};
  Duration b_to_s{0};
  Duration s_to_b{0};
  Duration a_to_b{0};
  Duration b_to_a{0};

  Duration between(Site from, Site to) const;
};

struct TopologyConfig {
  Duration rtt = std::chrono::milliseconds(100);
  double loss_rate = 0.0;
  std::optional<std::uint64_t> bandwidth_bps;
  MappingPolicy nat_a_mapping = MappingPolicy::kEndpointIndependent;
  MappingPolicy nat_b_mapping = MappingPolicy::kEndpointIndependent;
  FilteringPolicy filtering = FilteringPolicy::kAddressAndPortDependent;
  Duration session_timeout = std::chrono::seconds(30);
  TransportKind relay_transport = TransportKind::kQuic;
  RetransmissionPolicy retransmission;
  // Added to every uplink; emulates user-space overhead.
  Duration host_processing_delay{0};
  std::optional<PathDelays> path_delays;
  bool tcp_port_reuse = true;
  std::uint64_t seed = 0;
  bool trace = true;

  void validate() const;
};

class Topology;

class Host : public PacketIo {
 public:
  Host(Topology& topology, Site site, std::string name, IpAddress ip);

  Engine& engine() override;
  const std::string& node_name() const override { return name_; }
  IpAddress local_ip() const override { return ip_; }
  void transmit(Datagram d) override;

  Site site() const { return site_; }
  void set_ip(IpAddress ip) { ip_ = ip; }
  SocketTable& sockets() { return sockets_; }
  // Opens (or returns) the endpoint with the topology's transport options.
  Endpoint& endpoint(std::uint16_t port, TransportKind kind);
  void receive(const Datagram& d);

 private:
  Topology& topology_;
  Site site_;
  std::string name_;
  IpAddress ip_;
  SocketTable sockets_;
};

class Topology {
 public:
  static constexpr std::uint16_t kClientPort = 7000;
  static constexpr std::uint16_t kServerPort = 9999;
  static const EndpointAddress kAddressA;  // 192.168.0.2:7000
  static const EndpointAddress kAddressB;  // 192.168.1.2:7000
  static const EndpointAddress kAddressS;  // 123.56.64.101:9999
  static const IpAddress kPublicA;         // 123.56.64.102
  static const IpAddress kPublicB;         // 123.56.64.103

  // Called for every datagram reaching a NAT's public side.
  using NatObserver = std::function<void(Site nat_site, const Datagram& d, bool dropped)>;

  explicit Topology(TopologyConfig config);
  Topology(const Topology&) = delete;
  Topology& operator=(const Topology&) = delete;

  const TopologyConfig& config() const { return config_; }
  Engine& engine() { return engine_; }
  ConnectionDirectory& directory() { return directory_; }
  PortBindingTable& bindings() { return bindings_; }
  TransportOptions transport_options() const;

  Host& host(Site site);
  // "A", "B" or "S"; throws UnknownNode.
  Host& host(std::string_view name);
  bool has_node(std::string_view name) const;
  // NAT in front of a client site; throws InvalidArgument for S.
  NatBox& nat(Site site);

  LinkId uplink(Site site) const { return uplink_[static_cast<int>(site)]; }
  // One-way delay of the whole path between two sites, without serialization.
  Duration path_delay(Site from, Site to) const;

  int add_nat_observer(NatObserver observer);
  void remove_nat_observer(int id);

  std::size_t unsolicited_drops() const { return unsolicited_drops_; }

 private:
  friend class Host;

  void route_from(Site site, Datagram d);
  void after_uplink(Site site, Datagram d);
  void core_forward(Site from, Datagram d);
  void arrive(Site site, Datagram d);
  std::optional<Site> site_of_public(IpAddress ip) const;
  void drop_at_nat(Site site, const Datagram& d, const std::string& why);

  TopologyConfig config_;
  Engine engine_;
  ConnectionDirectory directory_;
  PortBindingTable bindings_;
  NatBox nat_a_;
  NatBox nat_b_;
  std::unique_ptr<Host> hosts_[3];
  LinkId uplink_[3];
  LinkId core_[3][3];
  LinkId downlink_[2];
  std::map<int, NatObserver> observers_;
  int next_observer_ = 0;
  std::size_t unsolicited_drops_ = 0;
};

}  // namespace holepunch
