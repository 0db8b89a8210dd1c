#include "strider/packet_io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "strider/error.hpp"

namespace strider {
namespace {

constexpr std::uint32_t kMagicMicro = 0xa1b2c3d4;
constexpr std::uint32_t kMagicNano = 0xa1b23c4d;
constexpr std::size_t kGlobalHeaderLen = 24;
constexpr std::size_t kRecordHeaderLen = 16;

constexpr std::uint16_t kEtherIpv4 = 0x0800;
constexpr std::uint16_t kEtherIpv6 = 0x86dd;
constexpr std::uint16_t kEtherArp = 0x0806;

std::uint16_t load_be16(const std::uint8_t* p) noexcept {
  return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

std::uint32_t load_u32(const std::uint8_t* p, bool swapped) noexcept {
  std::uint32_t le = static_cast<std::uint32_t>(p[0]) |
                     (static_cast<std::uint32_t>(p[1]) << 8) |
                     (static_cast<std::uint32_t>(p[2]) << 16) |
                     (static_cast<std::uint32_t>(p[3]) << 24);
  if (!swapped) return le;
  return ((le & 0xff) << 24) | ((le & 0xff00) << 8) | ((le >> 8) & 0xff00) |
         (le >> 24);
}

void store_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void store_le16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

bool is_ipv6_extension(std::uint8_t next) noexcept {
  return next == 0 || next == 43 || next == 44 || next == 51 || next == 60;
}

std::size_t transport_header_len(std::uint8_t protocol,
                                  std::span<const std::uint8_t> rest) noexcept {
  switch (protocol) {
    case 6: {
      if (rest.size() < 13) return rest.size();
      std::size_t len = static_cast<std::size_t>(rest[12] >> 4) * 4;
      return std::min(std::max<std::size_t>(len, 20), rest.size());
    }
    case 17:
    case 136:
      return std::min<std::size_t>(8, rest.size());
    case 132:
      return std::min<std::size_t>(12, rest.size());
    case 1:
    case 58:
      return std::min<std::size_t>(8, rest.size());
    default:
      return 0;
  }
}

// Fills an IP record from the bytes following the link header. Returns false
// when the bytes do not hold a usable IP header.
bool parse_ip_packet(std::span<const std::uint8_t> ip, NetworkLayer network,
                     std::uint32_t frame_len, std::size_t link_len,
                     PacketRecord& rec) {
  std::size_t datagram_len = 0;
  if (network == NetworkLayer::ipv4) {
    if (ip.size() < 20 || (ip[0] >> 4) != 4) return false;
    std::size_t ihl = static_cast<std::size_t>(ip[0] & 0x0f) * 4;
    if (ihl < 20 || ihl > ip.size()) return false;
    datagram_len = load_be16(ip.data() + 2);
    rec.tuple.src_ip = ipv4_mapped(ip.subspan<12, 4>());
    rec.tuple.dst_ip = ipv4_mapped(ip.subspan<16, 4>());
  } else {
    if (ip.size() < 40 || (ip[0] >> 4) != 6) return false;
    std::size_t payload_len = load_be16(ip.data() + 4);
    datagram_len = payload_len == 0 ? 0 : payload_len + 40;
    std::copy_n(ip.begin() + 8, 16, rec.tuple.src_ip.begin());
    std::copy_n(ip.begin() + 24, 16, rec.tuple.dst_ip.begin());
  }
  // Snaplen truncation or Ethernet trailer padding.
  std::size_t usable = datagram_len == 0 ? ip.size() : std::min(datagram_len, ip.size());
  auto datagram = ip.first(usable);

  TransportLocation loc;
  try {
    loc = locate_transport(datagram, network);
  } catch (const Error&) {
    return false;
  }
  std::size_t th_len = 0;
  if (loc.first_fragment) {
    th_len = transport_header_len(loc.protocol, datagram.subspan(loc.offset));
  }
  rec.network = network;
  rec.tuple.protocol = loc.protocol;
  if (loc.first_fragment && protocol_has_ports(loc.protocol) &&
      datagram.size() >= loc.offset + 4) {
    rec.tuple.src_port = load_be16(datagram.data() + loc.offset);
    rec.tuple.dst_port = load_be16(datagram.data() + loc.offset + 2);
  }
  std::size_t header_end = loc.offset + th_len;
  rec.header_bytes.assign(datagram.begin(), datagram.begin() + header_end);
  rec.payload_bytes.assign(datagram.begin() + header_end, datagram.end());
  if (datagram_len != 0) {
    rec.wire_length = static_cast<std::uint32_t>(datagram_len);
  } else {
    rec.wire_length = frame_len > link_len ? static_cast<std::uint32_t>(frame_len - link_len)
                                           : static_cast<std::uint32_t>(ip.size());
  }
  return true;
}

}  // namespace

IpAddress ipv4_mapped(std::span<const std::uint8_t, 4> v4) noexcept {
  IpAddress out{};
  out[10] = 0xff;
  out[11] = 0xff;
  std::copy(v4.begin(), v4.end(), out.begin() + 12);
  return out;
}

bool is_ipv4_mapped(const IpAddress& addr) noexcept {
  for (int i = 0; i < 10; ++i) {
    if (addr[i] != 0) return false;
  }
  return addr[10] == 0xff && addr[11] == 0xff;
}

std::string format_ip(const IpAddress& addr) {
  char buf[48];
  if (is_ipv4_mapped(addr)) {
    std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", addr[12], addr[13], addr[14], addr[15]);
    return buf;
  }
  std::string out;
  for (int i = 0; i < 16; i += 2) {
    if (i) out.push_back(':');
    std::snprintf(buf, sizeof buf, "%x", (addr[i] << 8) | addr[i + 1]);
    out += buf;
  }
  return out;
}

IpAddress parse_ip(std::string_view text) {
  auto fail = [&] {
    throw Error(Errc::parse_error, "invalid IP address '" + std::string(text) + "'");
  };
  IpAddress out{};
  if (text.find(':') == std::string_view::npos) {
    std::array<std::uint8_t, 4> v4{};
    const char* p = text.data();
    const char* end = text.data() + text.size();
    for (int i = 0; i < 4; ++i) {
      unsigned value = 0;
      auto [next, ec] = std::from_chars(p, end, value);
      if (ec != std::errc{} || value > 255) fail();
      v4[i] = static_cast<std::uint8_t>(value);
      p = next;
      if (i < 3) {
        if (p == end || *p != '.') fail();
        ++p;
      }
    }
    if (p != end) fail();
    return ipv4_mapped(v4);
  }
  // Full form or a single "::" elision.
  std::vector<std::uint16_t> head;
  std::vector<std::uint16_t> tail;
  bool elided = false;
  auto parse_groups = [&](std::string_view part, std::vector<std::uint16_t>& groups) {
    if (part.empty()) return;
    std::size_t start = 0;
    while (true) {
      std::size_t colon = part.find(':', start);
      std::string_view group = part.substr(start, colon - start);
      unsigned value = 0;
      auto [next, ec] = std::from_chars(group.data(), group.data() + group.size(), value, 16);
      if (ec != std::errc{} || next != group.data() + group.size() || value > 0xffff) fail();
      groups.push_back(static_cast<std::uint16_t>(value));
      if (colon == std::string_view::npos) break;
      start = colon + 1;
    }
  };
  if (auto dc = text.find("::"); dc != std::string_view::npos) {
    elided = true;
    parse_groups(text.substr(0, dc), head);
    parse_groups(text.substr(dc + 2), tail);
  } else {
    parse_groups(text, head);
  }
  std::size_t total = head.size() + tail.size();
  if ((!elided && total != 8) || (elided && total > 7)) fail();
  std::vector<std::uint16_t> groups = head;
  groups.resize(8 - tail.size(), 0);
  groups.insert(groups.end(), tail.begin(), tail.end());
  for (int i = 0; i < 8; ++i) {
    out[2 * i] = static_cast<std::uint8_t>(groups[i] >> 8);
    out[2 * i + 1] = static_cast<std::uint8_t>(groups[i]);
  }
  return out;
}

std::string to_string(const FiveTuple& t) {
  return format_ip(t.src_ip) + ":" + std::to_string(t.src_port) + " -> " +
         format_ip(t.dst_ip) + ":" + std::to_string(t.dst_port) + " proto " +
         std::to_string(t.protocol);
}

std::size_t FiveTupleHash::operator()(const FiveTuple& t) const noexcept {
  // FNV-1a over the packed fields.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint8_t b) {
    h ^= b;
    h *= 0x100000001b3ULL;
  };
  for (auto b : t.src_ip) mix(b);
  for (auto b : t.dst_ip) mix(b);
  mix(static_cast<std::uint8_t>(t.src_port >> 8));
  mix(static_cast<std::uint8_t>(t.src_port));
  mix(static_cast<std::uint8_t>(t.dst_port >> 8));
  mix(static_cast<std::uint8_t>(t.dst_port));
  mix(t.protocol);
  return static_cast<std::size_t>(h);
}

bool protocol_has_ports(std::uint8_t protocol) noexcept {
  return protocol == 6 || protocol == 17 || protocol == 132 || protocol == 136;
}

TransportLocation locate_transport(std::span<const std::uint8_t> header,
                                   NetworkLayer network) {
  TransportLocation loc;
  if (network == NetworkLayer::ipv4) {
    if (header.size() < 20) {
      throw Error(Errc::header_too_short, "IPv4 header shorter than 20 bytes");
    }
    std::size_t ihl = static_cast<std::size_t>(header[0] & 0x0f) * 4;
    if (ihl < 20 || header.size() < ihl) {
      throw Error(Errc::header_too_short,
                  "IPv4 header length field claims " + std::to_string(ihl) + " bytes, have " +
                      std::to_string(header.size()));
    }
    loc.offset = ihl;
    loc.protocol = header[9];
    loc.first_fragment = (load_be16(header.data() + 6) & 0x1fff) == 0;
    return loc;
  }
  if (network == NetworkLayer::ipv6) {
    if (header.size() < 40) {
      throw Error(Errc::header_too_short, "IPv6 header shorter than 40 bytes");
    }
    std::uint8_t next = header[6];
    std::size_t offset = 40;
    while (is_ipv6_extension(next) && loc.first_fragment) {
      if (header.size() < offset + 8) break;
      std::uint8_t following = header[offset];
      std::size_t len = 0;
      if (next == 44) {
        len = 8;
        loc.first_fragment = (load_be16(header.data() + offset + 2) & 0xfff8) == 0;
      } else if (next == 51) {
        len = (static_cast<std::size_t>(header[offset + 1]) + 2) * 4;
      } else {
        len = (static_cast<std::size_t>(header[offset + 1]) + 1) * 8;
      }
      if (header.size() < offset + len) break;
      offset += len;
      next = following;
    }
    loc.offset = offset;
    loc.protocol = next;
    return loc;
  }
  throw Error(Errc::header_too_short, "record does not carry an IP header");
}

std::vector<PacketRecord> parse_capture(std::span<const std::uint8_t> stream) {
  if (stream.size() < kGlobalHeaderLen) {
    throw Error(Errc::malformed_global_header, "stream shorter than the pcap global header");
  }
  std::uint32_t magic = load_u32(stream.data(), false);
  bool swapped = false;
  bool nano = false;
  if (magic == kMagicMicro) {
  } else if (magic == kMagicNano) {
    nano = true;
  } else if (load_u32(stream.data(), true) == kMagicMicro) {
    swapped = true;
  } else if (load_u32(stream.data(), true) == kMagicNano) {
    swapped = true;
    nano = true;
  } else {
    char buf[32];
    std::snprintf(buf, sizeof buf, "0x%08x", magic);
    throw Error(Errc::malformed_global_header, std::string("unknown pcap magic ") + buf);
  }
  std::uint32_t link_type = load_u32(stream.data() + 20, swapped) & 0x0fffffff;
  switch (link_type) {
    case kLinkNull:
    case kLinkEthernet:
    case kLinkRaw:
    case kLinkLinuxSll:
    case kLinkIpv4:
    case kLinkIpv6:
    case kLinkLinuxSll2:
      break;
    default:
      throw Error(Errc::unsupported_link_type,
                  "unsupported pcap link type " + std::to_string(link_type));
  }

  std::vector<PacketRecord> out;
  std::size_t pos = kGlobalHeaderLen;
  std::int64_t last_ts = INT64_MIN;
  while (pos < stream.size()) {
    if (stream.size() - pos < kRecordHeaderLen) {
      throw Error(Errc::truncated_record, "record header cut short at offset " + std::to_string(pos));
    }
    const std::uint8_t* rh = stream.data() + pos;
    std::int64_t sec = load_u32(rh, swapped);
    std::int64_t frac = load_u32(rh + 4, swapped);
    std::uint32_t incl = load_u32(rh + 8, swapped);
    std::uint32_t orig = load_u32(rh + 12, swapped);
    pos += kRecordHeaderLen;
    if (incl > stream.size() - pos) {
      throw Error(Errc::truncated_record, "record at offset " + std::to_string(pos - kRecordHeaderLen) +
                                              " claims " + std::to_string(incl) + " bytes, " +
                                              std::to_string(stream.size() - pos) + " remain");
    }
    auto frame = stream.subspan(pos, incl);
    pos += incl;

    PacketRecord rec;
    rec.arrival_us = sec * 1'000'000 + (nano ? frac / 1000 : frac);
    if (rec.arrival_us < last_ts) rec.arrival_us = last_ts;
    last_ts = rec.arrival_us;
    rec.wire_length = orig;

    std::size_t link_len = 0;
    std::optional<NetworkLayer> network;
    auto ether_to_network = [](std::uint16_t et) -> std::optional<NetworkLayer> {
      if (et == kEtherIpv4) return NetworkLayer::ipv4;
      if (et == kEtherIpv6) return NetworkLayer::ipv6;
      return std::nullopt;
    };
    switch (link_type) {
      case kLinkEthernet: {
        if (frame.size() < 14) break;
        std::uint16_t et = load_be16(frame.data() + 12);
        link_len = 14;
        while ((et == 0x8100 || et == 0x88a8 || et == 0x9100) && frame.size() >= link_len + 4) {
          et = load_be16(frame.data() + link_len + 2);
          link_len += 4;
        }
        network = ether_to_network(et);
        break;
      }
      case kLinkLinuxSll:
        if (frame.size() < 16) break;
        link_len = 16;
        network = ether_to_network(load_be16(frame.data() + 14));
        break;
      case kLinkLinuxSll2:
        if (frame.size() < 20) break;
        link_len = 20;
        network = ether_to_network(load_be16(frame.data()));
        break;
      case kLinkNull: {
        if (frame.size() < 4) break;
        link_len = 4;
        std::uint32_t family = load_u32(frame.data(), swapped);
        if (family == 2) network = NetworkLayer::ipv4;
        if (family == 24 || family == 28 || family == 30) network = NetworkLayer::ipv6;
        break;
      }
      case kLinkRaw:
        if (frame.empty()) break;
        if ((frame[0] >> 4) == 4) network = NetworkLayer::ipv4;
        if ((frame[0] >> 4) == 6) network = NetworkLayer::ipv6;
        break;
      case kLinkIpv4:
        network = NetworkLayer::ipv4;
        break;
      case kLinkIpv6:
        network = NetworkLayer::ipv6;
        break;
    }
    link_len = std::min(link_len, frame.size());
    auto link_payload = frame.subspan(link_len);
    if (!network || !parse_ip_packet(link_payload, *network, orig, link_len, rec)) {
      rec.network = NetworkLayer::other;
      rec.tuple = {};
      rec.header_bytes.assign(link_payload.begin(), link_payload.end());
      rec.payload_bytes.clear();
      rec.wire_length = orig;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<PacketRecord> read_capture_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_capture(bytes);
}

std::vector<PacketRecord> filter_non_ip(std::vector<PacketRecord> records) {
  std::erase_if(records, [](const PacketRecord& r) { return r.network == NetworkLayer::other; });
  return records;
}

PacketRecord anonymize(PacketRecord record) {
  auto& h = record.header_bytes;
  TransportLocation loc = locate_transport(h, record.network);
  if (record.network == NetworkLayer::ipv4) {
    std::fill(h.begin() + 12, h.begin() + 20, 0);
  } else {
    std::fill(h.begin() + 8, h.begin() + 40, 0);
  }
  if (loc.first_fragment && protocol_has_ports(loc.protocol)) {
    std::size_t end = std::min(h.size(), loc.offset + 4);
    if (end > loc.offset) std::fill(h.begin() + loc.offset, h.begin() + end, 0);
  }
  return record;
}

std::vector<std::uint8_t> write_capture(std::span<const PacketRecord> records) {
  std::vector<std::uint8_t> out;
  store_le32(out, kMagicMicro);
  store_le16(out, 2);
  store_le16(out, 4);
  store_le32(out, 0);
  store_le32(out, 0);
  store_le32(out, 262144);
  store_le32(out, kLinkEthernet);
  for (const auto& r : records) {
    std::uint16_t et = r.network == NetworkLayer::ipv4   ? kEtherIpv4
                       : r.network == NetworkLayer::ipv6 ? kEtherIpv6
                                                         : kEtherArp;
    std::uint32_t caplen =
        static_cast<std::uint32_t>(14 + r.header_bytes.size() + r.payload_bytes.size());
    std::uint32_t orig = r.network == NetworkLayer::other ? std::max(r.wire_length, caplen)
                                                          : std::max(r.wire_length + 14, caplen);
    store_le32(out, static_cast<std::uint32_t>(r.arrival_us / 1'000'000));
    store_le32(out, static_cast<std::uint32_t>(r.arrival_us % 1'000'000));
    store_le32(out, caplen);
    store_le32(out, orig);
    out.insert(out.end(), 12, 0);
    out.push_back(static_cast<std::uint8_t>(et >> 8));
    out.push_back(static_cast<std::uint8_t>(et));
    out.insert(out.end(), r.header_bytes.begin(), r.header_bytes.end());
    out.insert(out.end(), r.payload_bytes.begin(), r.payload_bytes.end());
  }
  return out;
}

void write_capture_file(const std::filesystem::path& path,
                        std::span<const PacketRecord> records) {
  auto bytes = write_capture(records);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace strider
