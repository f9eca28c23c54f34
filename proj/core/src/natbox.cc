#include "holepunch/natbox.h"

#include <algorithm>

#include "holepunch/error.h"

namespace holepunch {

std::string_view to_string(MappingPolicy policy) {
  return policy == MappingPolicy::kEndpointIndependent ? "EIM" : "ADPM";
}

std::string_view to_string(FilteringPolicy policy) {
  return policy == FilteringPolicy::kEndpointIndependent ? "EIF" : "APDF";
}

void NatConfig::validate() const {
  if (prefix_len < 0 || prefix_len > 32) {
    fail(ErrorCode::kInvalidArgument, "prefix length outside [0,32]");
  }
  if (port_base == 0 || port_limit < port_base) {
    fail(ErrorCode::kInvalidArgument, "empty external port range");
  }
  if (session_timeout < Duration::zero()) {
    fail(ErrorCode::kInvalidArgument, "negative session timeout");
  }
}

NatBox::NatBox(NatConfig config, std::string name)
    : config_(config), name_(std::move(name)), cursor_(config.port_base),
      rng_(derive_seed({config.seed, config.public_ip.value})) {
  config_.validate();
}

bool NatBox::is_hairpin(const Datagram& outbound) const {
  return outbound.dst.ip == config_.public_ip;
}

void NatBox::purge(VirtualTime now) {
  std::erase_if(sessions_, [now](const auto& kv) { return kv.second.expired_at(now); });
}

std::optional<std::uint16_t> NatBox::existing_eim_port(const EndpointAddress& internal,
                                                       VirtualTime now) const {
  // Sessions are ordered by internal first, so one range covers them all.
  auto it = sessions_.lower_bound(Key{internal, EndpointAddress{}});
  for (; it != sessions_.end() && it->first.first == internal; ++it) {
    if (!it->second.expired_at(now)) return it->second.external.port;
  }
  return std::nullopt;
}

std::uint16_t NatBox::allocate_port(VirtualTime now) {
  std::set<std::uint16_t> used;
  for (const auto& [key, s] : sessions_) {
    if (!s.expired_at(now)) used.insert(s.external.port);
  }
  const std::uint32_t span = std::uint32_t{config_.port_limit} - config_.port_base + 1;
  if (used.size() >= span) {
    fail(ErrorCode::kPortExhaustion, name_ + " has no free external port");
  }
  std::uint32_t start = cursor_;
  if (config_.allocation == PortAllocation::kRandom) {
    start = config_.port_base + static_cast<std::uint32_t>(rng_.next() % span);
  }
  for (std::uint32_t i = 0; i < span; ++i) {
    const std::uint32_t port =
        config_.port_base + (start - config_.port_base + i) % span;
    if (!used.count(static_cast<std::uint16_t>(port))) {
      cursor_ = config_.port_base + (port - config_.port_base + 1) % span;
      return static_cast<std::uint16_t>(port);
    }
  }
  fail(ErrorCode::kPortExhaustion, name_ + " has no free external port");
}

Datagram NatBox::translate_outbound(Datagram d, VirtualTime now) {
  if (!d.src.ip.in_subnet(config_.private_network, config_.prefix_len)) {
    fail(ErrorCode::kInvalidArgument,
         d.src.to_string() + " is outside the private subnet of " + name_);
  }
  const Key key{d.src, d.dst};
  auto it = sessions_.find(key);
  if (it != sessions_.end() && it->second.expired_at(now)) {
    sessions_.erase(it);
    it = sessions_.end();
  }
  if (it == sessions_.end()) {
    std::optional<std::uint16_t> port;
    if (config_.mapping == MappingPolicy::kEndpointIndependent) {
      port = existing_eim_port(d.src, now);
    }
    if (!port) port = allocate_port(now);
    NatSession s{d.src, EndpointAddress{config_.public_ip, *port}, d.dst, now,
                 config_.session_timeout};
    it = sessions_.emplace(key, s).first;
  }
  it->second.last_activity = now;
  d.src = it->second.external;
  return d;
}

InboundResult NatBox::translate_inbound(Datagram d, VirtualTime now) {
  if (d.dst.ip != config_.public_ip) return DroppedUnsolicited{};
  NatSession* match = nullptr;
  for (auto& [key, s] : sessions_) {
    if (s.external != d.dst || s.expired_at(now)) continue;
    if (s.remote == d.src) {
      match = &s;
      break;
    }
    if (config_.filtering == FilteringPolicy::kEndpointIndependent && !match) match = &s;
  }
  if (!match) return DroppedUnsolicited{};
  match->last_activity = now;
  d.dst = match->internal;
  return Forwarded{std::move(d)};
}

std::size_t NatBox::expire_sessions(VirtualTime now) {
  const std::size_t before = sessions_.size();
  purge(now);
  return before - sessions_.size();
}

std::optional<EndpointAddress> NatBox::current_mapping(
    const EndpointAddress& internal, const std::optional<EndpointAddress>& remote,
    VirtualTime now) const {
  if (remote) {
    auto it = sessions_.find(Key{internal, *remote});
    if (it != sessions_.end() && !it->second.expired_at(now)) return it->second.external;
    if (config_.mapping == MappingPolicy::kAddressAndPortDependent) return std::nullopt;
  } else if (config_.mapping == MappingPolicy::kAddressAndPortDependent) {
    return std::nullopt;
  }
  if (auto port = existing_eim_port(internal, now)) {
    return EndpointAddress{config_.public_ip, *port};
  }
  return std::nullopt;
}

std::size_t NatBox::drop_sessions_for(IpAddress internal_ip) {
  return std::erase_if(sessions_, [internal_ip](const auto& kv) {
    return kv.first.first.ip == internal_ip;
  });
}

bool NatBox::drop_session(const EndpointAddress& internal, const EndpointAddress& remote) {
  return sessions_.erase(Key{internal, remote}) > 0;
}

void NatBox::reboot() {
  sessions_.clear();
  cursor_ = config_.port_base;
}

std::vector<NatSession> NatBox::live_sessions(VirtualTime now) const {
  std::vector<NatSession> out;
  for (const auto& [key, s] : sessions_) {
    if (!s.expired_at(now)) out.push_back(s);
  }
  return out;
}

}  // namespace holepunch
