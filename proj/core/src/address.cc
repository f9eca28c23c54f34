#include "holepunch/address.h"

#include <charconv>

#include "holepunch/error.h"

namespace holepunch {
namespace {

template <typename T>
T parse_number(std::string_view text, T max, std::string_view what) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc{} || ptr != end || value > max) {
    fail(ErrorCode::kInvalidArgument,
         "bad " + std::string(what) + " '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace

IpAddress IpAddress::parse(std::string_view text) {
  std::uint32_t value = 0;
  for (int i = 0; i < 4; ++i) {
    const auto dot = text.find('.');
    if ((i < 3) == (dot == std::string_view::npos)) {
      fail(ErrorCode::kInvalidArgument, "bad IPv4 address");
    }
    const auto part = text.substr(0, dot);
    value = (value << 8) | parse_number<std::uint32_t>(part, 255, "octet");
    text = i < 3 ? text.substr(dot + 1) : std::string_view{};
  }
  return IpAddress{value};
}

bool IpAddress::in_subnet(IpAddress network, int prefix_len) const {
  if (prefix_len <= 0) return true;
  const std::uint32_t mask =
      prefix_len >= 32 ? ~0u : ~((std::uint32_t{1} << (32 - prefix_len)) - 1);
  return (value & mask) == (network.value & mask);
}

std::string IpAddress::to_string() const {
  return std::to_string(value >> 24) + "." + std::to_string((value >> 16) & 0xff) +
         "." + std::to_string((value >> 8) & 0xff) + "." + std::to_string(value & 0xff);
}

EndpointAddress EndpointAddress::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos) {
    fail(ErrorCode::kInvalidArgument, "endpoint needs ip:port");
  }
  return EndpointAddress{IpAddress::parse(text.substr(0, colon)),
                         parse_number<std::uint16_t>(text.substr(colon + 1), 65535, "port")};
}

std::string EndpointAddress::to_string() const {
  return ip.to_string() + ":" + std::to_string(port);
}

}  // namespace holepunch
