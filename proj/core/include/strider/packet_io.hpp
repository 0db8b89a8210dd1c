#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace strider {

using IpAddress = std::array<std::uint8_t, 16>;

/// Builds the IPv4-mapped IPv6 form (::ffff:a.b.c.d) of a 4-byte address.
IpAddress ipv4_mapped(std::span<const std::uint8_t, 4> v4) noexcept;
bool is_ipv4_mapped(const IpAddress& addr) noexcept;
/// Dotted quad for IPv4-mapped addresses, uncompressed hex groups otherwise.
std::string format_ip(const IpAddress& addr);
IpAddress parse_ip(std::string_view text);

struct FiveTuple {
  IpAddress src_ip{};
  IpAddress dst_ip{};
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint8_t protocol = 0;

  friend bool operator==(const FiveTuple&, const FiveTuple&) = default;
  friend auto operator<=>(const FiveTuple&, const FiveTuple&) = default;
};

std::string to_string(const FiveTuple& t);

struct FiveTupleHash {
  std::size_t operator()(const FiveTuple& t) const noexcept;
};

enum class NetworkLayer : std::uint8_t { ipv4, ipv6, other };

struct PacketRecord {
  std::int64_t arrival_us = 0;
  FiveTuple tuple;
  NetworkLayer network = NetworkLayer::other;
  // IP header plus transport header. For non-IP frames: the link payload.
  std::vector<std::uint8_t> header_bytes;
  std::vector<std::uint8_t> payload_bytes;
  // IP datagram length for IP packets, frame length otherwise.
  std::uint32_t wire_length = 0;
};

inline constexpr std::uint32_t kLinkNull = 0;
inline constexpr std::uint32_t kLinkEthernet = 1;
inline constexpr std::uint32_t kLinkRaw = 101;
inline constexpr std::uint32_t kLinkLinuxSll = 113;
inline constexpr std::uint32_t kLinkIpv4 = 228;
inline constexpr std::uint32_t kLinkIpv6 = 229;
inline constexpr std::uint32_t kLinkLinuxSll2 = 276;

/// Parses a classic pcap byte stream. Either byte order, microsecond or
/// nanosecond timestamps. Link headers are stripped, VLAN tags skipped.
/// Arrival times are clamped so they never decrease in file order.
std::vector<PacketRecord> parse_capture(std::span<const std::uint8_t> stream);
std::vector<PacketRecord> read_capture_file(const std::filesystem::path& path);

/// Drops records whose link payload is neither IPv4 nor IPv6.
std::vector<PacketRecord> filter_non_ip(std::vector<PacketRecord> records);

bool protocol_has_ports(std::uint8_t protocol) noexcept;

struct TransportLocation {
  std::size_t offset = 0;     // start of the transport header in header_bytes
  std::uint8_t protocol = 0;  // upper-layer protocol number
  bool first_fragment = true;
};

/// Walks the IP header (and IPv6 extension headers) of an IP header buffer.
/// Throws HeaderTooShort when the buffer is shorter than the IP header claims.
TransportLocation locate_transport(std::span<const std::uint8_t> header,
                                   NetworkLayer network);

/// Zeroes IP addresses and transport ports inside header_bytes. The
/// out-of-band tuple is kept intact. Checksums are left as they are.
PacketRecord anonymize(PacketRecord record);

/// Serializes records as an Ethernet pcap (microsecond timestamps). Used for
/// fixtures and synthetic corpora.
std::vector<std::uint8_t> write_capture(std::span<const PacketRecord> records);
void write_capture_file(const std::filesystem::path& path,
                        std::span<const PacketRecord> records);

}  // namespace strider
