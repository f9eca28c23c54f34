#include "holepunch/natbox.h"

#include <gtest/gtest.h>

#include "holepunch/error.h"
#include "nat_properties.h"

namespace holepunch {
namespace {

const EndpointAddress kP = EndpointAddress::parse("192.168.0.2:5000");
const EndpointAddress kN1 = EndpointAddress::parse("8.8.8.8:3478");
const EndpointAddress kN2 = EndpointAddress::parse("9.9.9.9:3478");

NatConfig base_config(MappingPolicy mapping) {
  NatConfig c;
  c.public_ip = IpAddress::parse("123.56.64.102");
  c.private_network = IpAddress::parse("192.168.0.0");
  c.mapping = mapping;
  return c;
}

VirtualTime at_s(int s) { return kTimeZero + std::chrono::seconds(s); }

TEST(NatBoxTest, EimReusesMappingAcrossRemotes) {
  NatBox nat(base_config(MappingPolicy::kEndpointIndependent));
  const auto x1 = nat.translate_outbound(natprop::outbound(kP, kN1), at_s(0)).src;
  const auto x2 = nat.translate_outbound(natprop::outbound(kP, kN2), at_s(0)).src;
  EXPECT_EQ(x1, x2);
  EXPECT_EQ(x1.to_string(), "123.56.64.102:8001");
}

TEST(NatBoxTest, AdpmAllocatesPerRemote) {
  NatBox nat(base_config(MappingPolicy::kAddressAndPortDependent));
  const auto x1 = nat.translate_outbound(natprop::outbound(kP, kN1), at_s(0)).src;
  const auto x2 = nat.translate_outbound(natprop::outbound(kP, kN2), at_s(0)).src;
  EXPECT_NE(x1, x2);
  EXPECT_EQ(x1.port, 8001);
  EXPECT_EQ(x2.port, 8002);
}

TEST(NatBoxTest, ExhaustedAllocatorThrows) {
  NatConfig c = base_config(MappingPolicy::kAddressAndPortDependent);
  c.port_base = 9000;
  c.port_limit = 9002;
  NatBox nat(c);
  for (int i = 0; i < 3; ++i) {
    nat.translate_outbound(natprop::outbound(kP, {kN1.ip, static_cast<std::uint16_t>(100 + i)}), at_s(0));
  }
  try {
    nat.translate_outbound(natprop::outbound(kP, kN2), at_s(0));
    FAIL() << "expected PortExhaustion";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPortExhaustion);
  }
}

TEST(NatBoxTest, ExpiredPortsAreReusable) {
  NatConfig c = base_config(MappingPolicy::kAddressAndPortDependent);
  c.port_base = 9000;
  c.port_limit = 9000;
  c.session_timeout = std::chrono::seconds(5);
  NatBox nat(c);
  nat.translate_outbound(natprop::outbound(kP, kN1), at_s(0));
  EXPECT_NO_THROW(nat.translate_outbound(natprop::outbound(kP, kN2), at_s(6)));
}

TEST(NatBoxTest, SourceOutsideSubnetRejected) {
  NatBox nat(base_config(MappingPolicy::kEndpointIndependent));
  EXPECT_THROW(nat.translate_outbound(natprop::outbound(EndpointAddress::parse("10.1.1.1:5"), kN1), at_s(0)),
               Error);
}

TEST(NatBoxTest, UnmappedInboundDropped) {
  NatBox nat(base_config(MappingPolicy::kEndpointIndependent));
  auto r = nat.translate_inbound(natprop::outbound(kN1, EndpointAddress::parse("123.56.64.102:8001")), at_s(0));
  EXPECT_TRUE(std::holds_alternative<DroppedUnsolicited>(r));
}

TEST(NatBoxTest, ReplyAfterOutboundForwarded) {
  NatBox nat(base_config(MappingPolicy::kEndpointIndependent));
  const auto x = nat.translate_outbound(natprop::outbound(kP, kN1), at_s(0)).src;
  auto r = nat.translate_inbound(natprop::outbound(kN1, x), at_s(1));
  ASSERT_TRUE(std::holds_alternative<Forwarded>(r));
  EXPECT_EQ(std::get<Forwarded>(r).datagram.dst, kP);
}

TEST(NatBoxTest, AddressDependentFilteringBlocksOtherRemotes) {
  NatBox nat(base_config(MappingPolicy::kEndpointIndependent));
  const auto x = nat.translate_outbound(natprop::outbound(kP, kN1), at_s(0)).src;
  EXPECT_TRUE(std::holds_alternative<DroppedUnsolicited>(
      nat.translate_inbound(natprop::outbound(kN2, x), at_s(0))));
}

TEST(NatBoxTest, EndpointIndependentFilteringAdmitsAnyRemote) {
  NatConfig c = base_config(MappingPolicy::kEndpointIndependent);
  c.filtering = FilteringPolicy::kEndpointIndependent;
  NatBox nat(c);
  const auto x = nat.translate_outbound(natprop::outbound(kP, kN1), at_s(0)).src;
  EXPECT_TRUE(std::holds_alternative<Forwarded>(nat.translate_inbound(natprop::outbound(kN2, x), at_s(0))));
}

TEST(NatBoxTest, ExpiryBoundary) {
  NatConfig c = base_config(MappingPolicy::kEndpointIndependent);
  c.session_timeout = std::chrono::seconds(30);
  NatBox nat(c);
  const auto x = nat.translate_outbound(natprop::outbound(kP, kN1), at_s(0)).src;
  // Idle exactly the timeout is still live; one tick later it is not.
  EXPECT_TRUE(std::holds_alternative<Forwarded>(
      nat.translate_inbound(natprop::outbound(kN1, x), at_s(0) + std::chrono::seconds(30))));
  NatBox fresh(c);
  const auto y = fresh.translate_outbound(natprop::outbound(kP, kN1), at_s(0)).src;
  EXPECT_TRUE(std::holds_alternative<DroppedUnsolicited>(
      fresh.translate_inbound(natprop::outbound(kN1, y), at_s(30) + Duration(1))));
}

TEST(NatBoxTest, ExpireSessionsCounts) {
  NatBox nat(base_config(MappingPolicy::kEndpointIndependent));
  EXPECT_EQ(nat.expire_sessions(at_s(100)), 0u);
  nat.translate_outbound(natprop::outbound(kP, kN1), at_s(0));
  EXPECT_EQ(nat.expire_sessions(at_s(31)), 1u);
}

TEST(NatBoxTest, RefreshResetsIdleClock) {
  NatBox nat(base_config(MappingPolicy::kEndpointIndependent));
  nat.translate_outbound(natprop::outbound(kP, kN1), at_s(0));
  nat.translate_outbound(natprop::outbound(kP, kN1), at_s(29));
  EXPECT_EQ(nat.expire_sessions(at_s(58)), 0u);
  EXPECT_EQ(nat.session_count(), 1u);
}

TEST(NatBoxTest, CurrentMappingIntrospection) {
  NatBox eim(base_config(MappingPolicy::kEndpointIndependent));
  EXPECT_FALSE(eim.current_mapping(kP, std::nullopt, at_s(0)));
  const auto x = eim.translate_outbound(natprop::outbound(kP, kN1), at_s(0)).src;
  EXPECT_EQ(eim.current_mapping(kP, kN2, at_s(0)), x);
  EXPECT_EQ(eim.current_mapping(kP, std::nullopt, at_s(0)), x);

  NatBox adpm(base_config(MappingPolicy::kAddressAndPortDependent));
  const auto y = adpm.translate_outbound(natprop::outbound(kP, kN1), at_s(0)).src;
  EXPECT_FALSE(adpm.current_mapping(kP, std::nullopt, at_s(0)));
  EXPECT_EQ(adpm.current_mapping(kP, kN1, at_s(0)), y);
  EXPECT_FALSE(adpm.current_mapping(kP, kN2, at_s(0)));
}

TEST(NatBoxTest, DropSessionsForAddressAndReboot) {
  NatBox nat(base_config(MappingPolicy::kEndpointIndependent));
  const auto x = nat.translate_outbound(natprop::outbound(kP, kN1), at_s(0)).src;
  nat.translate_outbound(natprop::outbound(EndpointAddress::parse("192.168.0.9:1"), kN1), at_s(0));
  EXPECT_EQ(nat.drop_sessions_for(kP.ip), 1u);
  EXPECT_TRUE(std::holds_alternative<DroppedUnsolicited>(
      nat.translate_inbound(natprop::outbound(kN1, x), at_s(0))));
  nat.reboot();
  EXPECT_EQ(nat.session_count(), 0u);
  // Allocation restarts from the base.
  EXPECT_EQ(nat.translate_outbound(natprop::outbound(kP, kN1), at_s(1)).src.port, 8001);
}

TEST(NatBoxTest, RandomAllocationStaysInRangeAndUnique) {
  NatConfig c = base_config(MappingPolicy::kAddressAndPortDependent);
  c.allocation = PortAllocation::kRandom;
  c.port_base = 20000;
  c.port_limit = 20099;
  c.seed = 5;
  NatBox nat(c);
  std::set<std::uint16_t> ports;
  for (int i = 0; i < 100; ++i) {
    const auto x = nat.translate_outbound(
        natprop::outbound(kP, {kN1.ip, static_cast<std::uint16_t>(1 + i)}), at_s(0)).src;
    EXPECT_GE(x.port, 20000);
    EXPECT_LE(x.port, 20099);
    ports.insert(x.port);
  }
  EXPECT_EQ(ports.size(), 100u);
}

TEST(NatBoxTest, HairpinDetected) {
  NatBox nat(base_config(MappingPolicy::kEndpointIndependent));
  EXPECT_TRUE(nat.is_hairpin(natprop::outbound(kP, EndpointAddress::parse("123.56.64.102:8001"))));
  EXPECT_FALSE(nat.is_hairpin(natprop::outbound(kP, kN1)));
}

TEST(NatBoxTest, InvalidConfigRejected) {
  NatConfig c = base_config(MappingPolicy::kEndpointIndependent);
  c.port_limit = 100;
  c.port_base = 200;
  EXPECT_THROW(NatBox{c}, Error);
}

class NatPropertyTest : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(NatPropertyTest, EimStability) { EXPECT_EQ(natprop::eim_stability(500, GetParam()), ""); }
TEST_P(NatPropertyTest, AdpmDistinctness) { EXPECT_EQ(natprop::adpm_distinctness(500, GetParam()), ""); }
TEST_P(NatPropertyTest, UnsolicitedDropCompleteness) {
  EXPECT_EQ(natprop::unsolicited_drop(500, GetParam()), "");
}
TEST_P(NatPropertyTest, TranslationRoundTrip) { EXPECT_EQ(natprop::round_trip(500, GetParam()), ""); }
TEST_P(NatPropertyTest, SessionExpiry) { EXPECT_EQ(natprop::expiry(500, GetParam()), ""); }

INSTANTIATE_TEST_SUITE_P(Seeds, NatPropertyTest, ::testing::Values(1u, 2u, 3u));

}  // namespace
}  // namespace holepunch
