#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace holepunch {

struct IpAddress {
  std::uint32_t value = 0;

  static constexpr IpAddress from_octets(std::uint8_t a, std::uint8_t b,
                                         std::uint8_t c, std::uint8_t d) {
    return IpAddress{(std::uint32_t{a} << 24) | (std::uint32_t{b} << 16) |
                     (std::uint32_t{c} << 8) | std::uint32_t{d}};
  }
  // Dotted quad; throws InvalidArgument.
  static IpAddress parse(std::string_view text);

  bool in_subnet(IpAddress network, int prefix_len) const;
  std::string to_string() const;

  auto operator<=>(const IpAddress&) const = default;
};

// An (IP, port) pair; the unit of NAT translation and routing.
struct EndpointAddress {
  IpAddress ip;
  std::uint16_t port = 0;

  // "a.b.c.d:port"; throws InvalidArgument.
  static EndpointAddress parse(std::string_view text);

  std::string to_string() const;

  auto operator<=>(const EndpointAddress&) const = default;
};

struct EndpointAddressHash {
  std::size_t operator()(const EndpointAddress& a) const noexcept {
    return std::hash<std::uint64_t>{}((std::uint64_t{a.ip.value} << 16) | a.port);
  }
};

}  // namespace holepunch
