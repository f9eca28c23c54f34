#pragma once

// Stateful NAT device: source rewriting for outbound traffic, a session table
// with idle expiry, and dropping of inbound datagrams no session admits.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "holepunch/address.h"
#include "holepunch/simnet.h"
#include "holepunch/time.h"

namespace holepunch {

enum class MappingPolicy {
  kEndpointIndependent,
  kAddressAndPortDependent,
};

// Which remotes may send inbound through a mapped port. Address+port
// dependent filtering admits only remotes the internal host has sent to.
enum class FilteringPolicy {
  kEndpointIndependent,
  kAddressAndPortDependent,
};

enum class PortAllocation {
  kSequential,
  kRandom,
};

std::string_view to_string(MappingPolicy policy);
std::string_view to_string(FilteringPolicy policy);

struct NatConfig {
  IpAddress public_ip;
  IpAddress private_network;
  int prefix_len = 24;
  MappingPolicy mapping = MappingPolicy::kEndpointIndependent;
  FilteringPolicy filtering = FilteringPolicy::kAddressAndPortDependent;
  Duration session_timeout = std::chrono::seconds(30);
  std::uint16_t port_base = 8001;
  // Inclusive upper bound of the external port range.
  std::uint16_t port_limit = 65535;
  PortAllocation allocation = PortAllocation::kSequential;
  std::uint64_t seed = 0;

  void validate() const;
};

struct NatSession {
  EndpointAddress internal;
  EndpointAddress external;
  EndpointAddress remote;
  VirtualTime last_activity;
  Duration timeout;

  bool expired_at(VirtualTime now) const { return now - last_activity > timeout; }
};

struct Forwarded {
  Datagram datagram;
};
struct DroppedUnsolicited {};
using InboundResult = std::variant<Forwarded, DroppedUnsolicited>;

class NatBox {
 public:
  explicit NatBox(NatConfig config, std::string name = "NAT");

  const NatConfig& config() const { return config_; }
  const std::string& name() const { return name_; }

  // Rewrites the source to the external mapping and creates or refreshes
  // the (internal, remote) session. Throws InvalidArgument when the source
  // is outside the private subnet and PortExhaustion when no port is free.
  Datagram translate_outbound(Datagram d, VirtualTime now);

  // Rewrites the destination to the internal endpoint when a live session
  // admits the datagram.
  InboundResult translate_inbound(Datagram d, VirtualTime now);

  // Destination is this NAT's own public address (hairpinning).
  bool is_hairpin(const Datagram& outbound) const;

  std::size_t expire_sessions(VirtualTime now);

  // Without a remote only an endpoint-independent mapping can answer.
  std::optional<EndpointAddress> current_mapping(
      const EndpointAddress& internal, const std::optional<EndpointAddress>& remote,
      VirtualTime now) const;

  std::size_t drop_sessions_for(IpAddress internal_ip);
  bool drop_session(const EndpointAddress& internal, const EndpointAddress& remote);
  // Clears every session and restarts port allocation from the base.
  void reboot();

  std::vector<NatSession> live_sessions(VirtualTime now) const;
  std::size_t session_count() const { return sessions_.size(); }

 private:
  using Key = std::pair<EndpointAddress, EndpointAddress>;  // (internal, remote)

  std::optional<std::uint16_t> existing_eim_port(const EndpointAddress& internal,
                                                 VirtualTime now) const;
  std::uint16_t allocate_port(VirtualTime now);
  void purge(VirtualTime now);

  NatConfig config_;
  std::string name_;
  std::map<Key, NatSession> sessions_;
  std::uint32_t cursor_;
  Rng rng_;
};

}  // namespace holepunch
