#pragma once

// Relay server S: client registration, peer address exchange and migration
// updates, plus the length-prefixed binary codec its control messages use.
//
// Frame: u16 length (bytes after the length field), u8 tag, body.
// Multi-byte integers are big-endian; an address is 4 bytes of IPv4 then a
// 2-byte port; client ids are u64.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "holepunch/address.h"
#include "holepunch/time.h"

namespace holepunch {

using ClientId = std::uint64_t;

enum class MessageTag : std::uint8_t {
  kRegister = 1,        // client id, private address
  kConnectRequest = 2,  // client id, target id
  kPeerInfo = 3,        // peer id, peer public address
  kMigrateUpdate = 4,   // client id, target id, new private address
  kTriggerSend = 5,     // moved peer id, its new public address
  kError = 6,           // client id, error code
};

enum class ControlError : std::uint8_t {
  kPeerNotRegistered = 1,
  kMalformedMessage = 2,
};

std::string_view to_string(MessageTag tag);

struct ControlMessage {
  MessageTag tag = MessageTag::kRegister;
  ClientId client_id = 0;
  std::optional<ClientId> target_id;
  std::optional<EndpointAddress> address;
  std::optional<ControlError> error;

  static ControlMessage register_client(ClientId id, const EndpointAddress& private_addr);
  static ControlMessage connect_request(ClientId id, ClientId target);
  static ControlMessage peer_info(ClientId peer, const EndpointAddress& public_addr);
  static ControlMessage migrate_update(ClientId id, ClientId target,
                                       const EndpointAddress& private_addr);
  static ControlMessage trigger_send(ClientId peer, const EndpointAddress& new_public);
  static ControlMessage error_reply(ClientId id, ControlError code);

  std::string describe() const;

  bool operator==(const ControlMessage&) const = default;
};

// Frame size in bytes, including the length prefix.
std::size_t frame_size(MessageTag tag);

// Throws MalformedMessage if a field the tag requires is missing or a field
// it does not carry is set.
std::vector<std::uint8_t> encode(const ControlMessage& msg);
// Throws MalformedMessage on truncation, length mismatch, unknown tag or
// unknown error code.
ControlMessage decode(std::span<const std::uint8_t> frame);

struct Registration {
  ClientId client_id = 0;
  EndpointAddress public_addr;
  EndpointAddress private_addr;
  VirtualTime registered_at;

  bool operator==(const Registration&) const = default;
};

struct Outbound {
  ClientId to_client = 0;
  ControlMessage message;

  bool operator==(const Outbound&) const = default;
};

class RendezvousServer {
 public:
  // Stores public = observed source. Throws MalformedMessage.
  const Registration& handle_register(const ControlMessage& msg,
                                      const EndpointAddress& observed_src, VirtualTime now);
  // Two PEER_INFO messages (requester first) or one ERROR to the requester.
  std::vector<Outbound> handle_connect_request(const ControlMessage& msg);
  // Updates the sender's addresses and tells the target where to send.
  std::vector<Outbound> handle_migrate_update(const ControlMessage& msg,
                                              const EndpointAddress& observed_src,
                                              VirtualTime now);
  // Dispatches on the tag; REGISTER yields no outbound messages.
  std::vector<Outbound> handle(const ControlMessage& msg, const EndpointAddress& observed_src,
                               VirtualTime now);

  std::optional<Registration> lookup(ClientId id) const;
  const std::map<ClientId, Registration>& registrations() const { return table_; }

 private:
  std::map<ClientId, Registration> table_;
};

}  // namespace holepunch
