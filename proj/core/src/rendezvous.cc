#include "holepunch/rendezvous.h"

#include "holepunch/error.h"

namespace holepunch {
namespace {

constexpr std::size_t kAddressBytes = 6;
constexpr std::size_t kIdBytes = 8;

struct Layout {
  bool target = false;
  bool address = false;
  bool error = false;
};

std::optional<Layout> layout_of(std::uint8_t tag) {
  switch (static_cast<MessageTag>(tag)) {
    case MessageTag::kRegister: return Layout{false, true, false};
    case MessageTag::kConnectRequest: return Layout{true, false, false};
    case MessageTag::kPeerInfo: return Layout{false, true, false};
    case MessageTag::kMigrateUpdate: return Layout{true, true, false};
    case MessageTag::kTriggerSend: return Layout{false, true, false};
    case MessageTag::kError: return Layout{false, false, true};
  }
  return std::nullopt;
}

std::size_t body_size(const Layout& l) {
  return kIdBytes + (l.target ? kIdBytes : 0) + (l.address ? kAddressBytes : 0) +
         (l.error ? 1 : 0);
}

void put(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = bytes - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}
  std::uint64_t take(int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v = (v << 8) | data_[pos_++];
    return v;
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

[[noreturn]] void malformed(const std::string& why) { fail(ErrorCode::kMalformedMessage, why); }

}  // namespace

std::string_view to_string(MessageTag tag) {
  switch (tag) {
    case MessageTag::kRegister: return "REGISTER";
    case MessageTag::kConnectRequest: return "CONNECT_REQUEST";
    case MessageTag::kPeerInfo: return "PEER_INFO";
    case MessageTag::kMigrateUpdate: return "MIGRATE_UPDATE";
    case MessageTag::kTriggerSend: return "TRIGGER_SEND";
    case MessageTag::kError: return "ERROR";
  }
  return "UNKNOWN";
}

ControlMessage ControlMessage::register_client(ClientId id, const EndpointAddress& private_addr) {
  return {MessageTag::kRegister, id, std::nullopt, private_addr, std::nullopt};
}

ControlMessage ControlMessage::connect_request(ClientId id, ClientId target) {
  return {MessageTag::kConnectRequest, id, target, std::nullopt, std::nullopt};
}

ControlMessage ControlMessage::peer_info(ClientId peer, const EndpointAddress& public_addr) {
  return {MessageTag::kPeerInfo, peer, std::nullopt, public_addr, std::nullopt};
}

ControlMessage ControlMessage::migrate_update(ClientId id, ClientId target,
                                              const EndpointAddress& private_addr) {
  return {MessageTag::kMigrateUpdate, id, target, private_addr, std::nullopt};
}

ControlMessage ControlMessage::trigger_send(ClientId peer, const EndpointAddress& new_public) {
  return {MessageTag::kTriggerSend, peer, std::nullopt, new_public, std::nullopt};
}

ControlMessage ControlMessage::error_reply(ClientId id, ControlError code) {
  return {MessageTag::kError, id, std::nullopt, std::nullopt, code};
}

std::string ControlMessage::describe() const {
  std::string out(to_string(tag));
  out += " id=" + std::to_string(client_id);
  if (target_id) out += " target=" + std::to_string(*target_id);
  if (address) out += " addr=" + address->to_string();
  if (error) out += " code=" + std::to_string(static_cast<int>(*error));
  return out;
}

std::size_t frame_size(MessageTag tag) {
  auto l = layout_of(static_cast<std::uint8_t>(tag));
  if (!l) malformed("unknown tag");
  return 3 + body_size(*l);
}

std::vector<std::uint8_t> encode(const ControlMessage& msg) {
  auto l = layout_of(static_cast<std::uint8_t>(msg.tag));
  if (!l) malformed("unknown tag");
  if (l->target != msg.target_id.has_value() || l->address != msg.address.has_value() ||
      l->error != msg.error.has_value()) {
    malformed(std::string(to_string(msg.tag)) + " fields do not match its layout");
  }
  if (msg.error && *msg.error != ControlError::kPeerNotRegistered &&
      *msg.error != ControlError::kMalformedMessage) {
    malformed("unknown error code");
  }
  std::vector<std::uint8_t> out;
  const std::size_t body = body_size(*l);
  out.reserve(3 + body);
  put(out, 1 + body, 2);
  out.push_back(static_cast<std::uint8_t>(msg.tag));
  put(out, msg.client_id, 8);
  if (msg.target_id) put(out, *msg.target_id, 8);
  if (msg.address) {
    put(out, msg.address->ip.value, 4);
    put(out, msg.address->port, 2);
  }
  if (msg.error) out.push_back(static_cast<std::uint8_t>(*msg.error));
  return out;
}

ControlMessage decode(std::span<const std::uint8_t> frame) {
  if (frame.size() < 3) malformed("frame shorter than its header");
  const std::size_t length = (std::size_t{frame[0]} << 8) | frame[1];
  if (length + 2 != frame.size()) {
    malformed("length field " + std::to_string(length) + " does not match frame of " +
              std::to_string(frame.size()) + " bytes");
  }
  auto l = layout_of(frame[2]);
  if (!l) malformed("unknown tag " + std::to_string(frame[2]));
  if (length != 1 + body_size(*l)) malformed("body size does not match tag");

  Reader r(frame.subspan(3));
  ControlMessage msg;
  msg.tag = static_cast<MessageTag>(frame[2]);
  msg.client_id = r.take(8);
  if (l->target) msg.target_id = r.take(8);
  if (l->address) {
    EndpointAddress a;
    a.ip.value = static_cast<std::uint32_t>(r.take(4));
    a.port = static_cast<std::uint16_t>(r.take(2));
    msg.address = a;
  }
  if (l->error) {
    const auto code = static_cast<std::uint8_t>(r.take(1));
    if (code != static_cast<std::uint8_t>(ControlError::kPeerNotRegistered) &&
        code != static_cast<std::uint8_t>(ControlError::kMalformedMessage)) {
      malformed("unknown error code " + std::to_string(code));
    }
    msg.error = static_cast<ControlError>(code);
  }
  return msg;
}

const Registration& RendezvousServer::handle_register(const ControlMessage& msg,
                                                      const EndpointAddress& observed_src,
                                                      VirtualTime now) {
  if (msg.tag != MessageTag::kRegister || !msg.address) {
    malformed("REGISTER needs a private address");
  }
  Registration& r = table_[msg.client_id];
  r = Registration{msg.client_id, observed_src, *msg.address, now};
  return r;
}

std::vector<Outbound> RendezvousServer::handle_connect_request(const ControlMessage& msg) {
  if (msg.tag != MessageTag::kConnectRequest || !msg.target_id) {
    malformed("CONNECT_REQUEST needs a target");
  }
  auto self = table_.find(msg.client_id);
  auto peer = table_.find(*msg.target_id);
  if (self == table_.end() || peer == table_.end()) {
    return {{msg.client_id,
             ControlMessage::error_reply(msg.client_id, ControlError::kPeerNotRegistered)}};
  }
  return {
      {msg.client_id, ControlMessage::peer_info(peer->first, peer->second.public_addr)},
      {peer->first, ControlMessage::peer_info(self->first, self->second.public_addr)},
  };
}

std::vector<Outbound> RendezvousServer::handle_migrate_update(const ControlMessage& msg,
                                                              const EndpointAddress& observed_src,
                                                              VirtualTime now) {
  if (msg.tag != MessageTag::kMigrateUpdate || !msg.target_id || !msg.address) {
    malformed("MIGRATE_UPDATE needs a target and a private address");
  }
  auto self = table_.find(msg.client_id);
  auto peer = table_.find(*msg.target_id);
  if (self == table_.end() || peer == table_.end()) {
    return {{msg.client_id,
             ControlMessage::error_reply(msg.client_id, ControlError::kPeerNotRegistered)}};
  }
  self->second.public_addr = observed_src;
  self->second.private_addr = *msg.address;
  self->second.registered_at = now;
  return {{peer->first, ControlMessage::trigger_send(msg.client_id, observed_src)}};
}

std::vector<Outbound> RendezvousServer::handle(const ControlMessage& msg,
                                               const EndpointAddress& observed_src,
                                               VirtualTime now) {
  switch (msg.tag) {
    case MessageTag::kRegister:
      handle_register(msg, observed_src, now);
      return {};
    case MessageTag::kConnectRequest: return handle_connect_request(msg);
    case MessageTag::kMigrateUpdate: return handle_migrate_update(msg, observed_src, now);
    default:
      return {{msg.client_id,
               ControlMessage::error_reply(msg.client_id, ControlError::kMalformedMessage)}};
  }
}

std::optional<Registration> RendezvousServer::lookup(ClientId id) const {
  auto it = table_.find(id);
  if (it == table_.end()) return std::nullopt;
  return it->second;
}

}  // namespace holepunch
