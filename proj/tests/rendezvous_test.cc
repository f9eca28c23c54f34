#include "holepunch/rendezvous.h"

#include <gtest/gtest.h>

#include "codec_properties.h"
#include "holepunch/error.h"

namespace holepunch {
namespace {

const EndpointAddress kPrivA = EndpointAddress::parse("192.168.0.2:7000");
const EndpointAddress kPubA = EndpointAddress::parse("123.56.64.102:8001");
const EndpointAddress kPrivB = EndpointAddress::parse("192.168.1.2:7000");
const EndpointAddress kPubB = EndpointAddress::parse("123.56.64.103:8002");

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

TEST(CodecTest, RegisterRoundTrips) {
  const auto m = ControlMessage::register_client(1, kPrivA);
  EXPECT_EQ(decode(encode(m)), m);
}

TEST(CodecTest, PeerInfoAddressBytes) {
  const auto bytes = encode(ControlMessage::peer_info(2, kPubB));
  ASSERT_EQ(bytes.size(), 17u);
  const std::vector<std::uint8_t> addr(bytes.end() - 6, bytes.end());
  EXPECT_EQ(addr, (std::vector<std::uint8_t>{0x7B, 0x38, 0x40, 0x67, 0x1F, 0x42}));
  // u16 length 15, tag 3, id 2.
  EXPECT_EQ(bytes, oracle::hand_encode({3, 2, false, 0, true, 0x7B384067u, 0x1F42, false, 0}));
}

TEST(CodecTest, FrameSizes) {
  EXPECT_EQ(frame_size(MessageTag::kRegister), 17u);
  EXPECT_EQ(frame_size(MessageTag::kConnectRequest), 19u);
  EXPECT_EQ(frame_size(MessageTag::kPeerInfo), 17u);
  EXPECT_EQ(frame_size(MessageTag::kMigrateUpdate), 25u);
  EXPECT_EQ(frame_size(MessageTag::kTriggerSend), 17u);
  EXPECT_EQ(frame_size(MessageTag::kError), 12u);
}

TEST(CodecTest, TruncatedFrameMalformed) {
  auto bytes = encode(ControlMessage::connect_request(1, 2));
  bytes.pop_back();
  EXPECT_EQ(code_of([&] { decode(bytes); }), ErrorCode::kMalformedMessage);
  EXPECT_EQ(code_of([&] { decode(std::vector<std::uint8_t>{}); }), ErrorCode::kMalformedMessage);
}

TEST(CodecTest, UnknownTagMalformed) {
  auto bytes = encode(ControlMessage::register_client(1, kPrivA));
  bytes[2] = 0x7F;
  EXPECT_EQ(code_of([&] { decode(bytes); }), ErrorCode::kMalformedMessage);
}

TEST(CodecTest, EncodeRejectsInconsistentFields) {
  ControlMessage m;
  m.tag = MessageTag::kRegister;
  m.client_id = 1;
  EXPECT_EQ(code_of([&] { encode(m); }), ErrorCode::kMalformedMessage);
  m = ControlMessage::connect_request(1, 2);
  m.address = kPubA;
  EXPECT_EQ(code_of([&] { encode(m); }), ErrorCode::kMalformedMessage);
}

TEST(CodecTest, RandomRoundTrips) { EXPECT_EQ(codecprop::round_trip(10000, 17), ""); }

TEST(CodecTest, MutatedFramesAlwaysMalformed) { EXPECT_EQ(codecprop::mutations(1000, 18), ""); }

TEST(CodecTest, EncodeOfDecodeIsIdentityOnWellFormedFrames) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const auto bytes = encode(codecprop::random_message(rng));
    EXPECT_EQ(encode(decode(bytes)), bytes);
  }
}

TEST(RendezvousServerTest, RegisterStoresObservedPublicAddress) {
  RendezvousServer s;
  const auto& r = s.handle_register(ControlMessage::register_client(1, kPrivA), kPubA,
                                    kTimeZero + millis(5));
  EXPECT_EQ(r.public_addr, kPubA);
  EXPECT_EQ(r.private_addr, kPrivA);
  EXPECT_EQ(r.registered_at, kTimeZero + millis(5));
}

TEST(RendezvousServerTest, ReRegistrationOverwrites) {
  RendezvousServer s;
  s.handle_register(ControlMessage::register_client(1, kPrivA), kPubA, kTimeZero);
  const auto moved = EndpointAddress::parse("123.56.64.102:8009");
  s.handle_register(ControlMessage::register_client(1, kPrivA), moved, kTimeZero + millis(1));
  EXPECT_EQ(s.registrations().size(), 1u);
  EXPECT_EQ(s.lookup(1)->public_addr, moved);
}

TEST(RendezvousServerTest, RegisterWithoutAddressMalformed) {
  RendezvousServer s;
  ControlMessage m;
  m.tag = MessageTag::kRegister;
  m.client_id = 1;
  EXPECT_EQ(code_of([&] { s.handle_register(m, kPubA, kTimeZero); }), ErrorCode::kMalformedMessage);
}

TEST(RendezvousServerTest, ConnectRequestExchangesPublicAddresses) {
  RendezvousServer s;
  s.handle_register(ControlMessage::register_client(1, kPrivA), kPubA, kTimeZero);
  s.handle_register(ControlMessage::register_client(2, kPrivB), kPubB, kTimeZero);
  const auto out = s.handle_connect_request(ControlMessage::connect_request(1, 2));
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0], (Outbound{1, ControlMessage::peer_info(2, kPubB)}));
  EXPECT_EQ(out[1], (Outbound{2, ControlMessage::peer_info(1, kPubA)}));
}

TEST(RendezvousServerTest, UnknownTargetYieldsError) {
  RendezvousServer s;
  s.handle_register(ControlMessage::register_client(1, kPrivA), kPubA, kTimeZero);
  const auto out = s.handle_connect_request(ControlMessage::connect_request(1, 99));
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], (Outbound{1, ControlMessage::error_reply(1, ControlError::kPeerNotRegistered)}));
}

TEST(RendezvousServerTest, MigrateUpdateForwardsTrigger) {
  RendezvousServer s;
  s.handle_register(ControlMessage::register_client(1, kPrivA), kPubA, kTimeZero);
  s.handle_register(ControlMessage::register_client(2, kPrivB), kPubB, kTimeZero);
  const auto new_pub = EndpointAddress::parse("123.56.64.102:8003");
  const auto new_priv = EndpointAddress::parse("192.168.0.3:7000");
  const auto out = s.handle_migrate_update(ControlMessage::migrate_update(1, 2, new_priv), new_pub,
                                           kTimeZero + millis(3));
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], (Outbound{2, ControlMessage::trigger_send(1, new_pub)}));
  EXPECT_EQ(s.lookup(1)->public_addr, new_pub);
  EXPECT_EQ(s.lookup(1)->private_addr, new_priv);
}

TEST(RendezvousServerTest, MigrateUpdateUnknownTarget) {
  RendezvousServer s;
  s.handle_register(ControlMessage::register_client(1, kPrivA), kPubA, kTimeZero);
  const auto out = s.handle_migrate_update(ControlMessage::migrate_update(1, 7, kPrivA), kPubA, kTimeZero);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].message.tag, MessageTag::kError);
}

// Random request streams: every CONNECT_REQUEST gives two PEER_INFO or one
// ERROR, no private address ever leaves S, and replay is deterministic.
TEST(RendezvousServerTest, RandomStreamsProperties) {
  Rng rng(31);
  for (int c = 0; c < 200; ++c) {
    std::vector<std::pair<ControlMessage, EndpointAddress>> stream;
    for (int i = 0; i < 30; ++i) {
      const ClientId id = 1 + rng.next() % 6;
      const ClientId target = 1 + rng.next() % 6;
      const EndpointAddress priv{IpAddress::from_octets(192, 168, 0, static_cast<std::uint8_t>(id)), 7000};
      const EndpointAddress pub{IpAddress::from_octets(123, 56, 64, static_cast<std::uint8_t>(id)),
                                static_cast<std::uint16_t>(8000 + rng.next() % 100)};
      switch (rng.next() % 3) {
        case 0: stream.emplace_back(ControlMessage::register_client(id, priv), pub); break;
        case 1: stream.emplace_back(ControlMessage::connect_request(id, target), pub); break;
        default: stream.emplace_back(ControlMessage::migrate_update(id, target, priv), pub); break;
      }
    }
    auto run = [&](RendezvousServer& s) {
      std::vector<Outbound> all;
      for (const auto& [m, src] : stream) {
        std::vector<Outbound> out;
        try {
          out = s.handle(m, src, kTimeZero);
        } catch (const Error&) {
          continue;
        }
        if (m.tag == MessageTag::kConnectRequest) {
          const bool pair = out.size() == 2 && out[0].message.tag == MessageTag::kPeerInfo &&
                            out[1].message.tag == MessageTag::kPeerInfo;
          const bool error = out.size() == 1 && out[0].message.tag == MessageTag::kError;
          EXPECT_TRUE(pair || error);
        }
        for (const auto& o : out) {
          if (o.message.address) EXPECT_FALSE(o.message.address->ip.in_subnet(IpAddress::parse("192.168.0.0"), 16));
        }
        all.insert(all.end(), out.begin(), out.end());
      }
      return all;
    };
    RendezvousServer s1, s2;
    EXPECT_EQ(run(s1), run(s2));
    EXPECT_EQ(s1.registrations(), s2.registrations());
  }
}

}  // namespace
}  // namespace holepunch
