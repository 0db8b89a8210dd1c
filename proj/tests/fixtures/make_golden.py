#!/usr/bin/env python3
# Writes golden.pcap and the FlowSample lines expected from it under the
# default representation (5 x (80 + 240) bytes, 20-step sequences, mtu 1500).
# The expected side is computed here from the packet construction itself,
# not by parsing the capture, so it checks the extractor independently.
import base64
import json
import random
import struct
import sys
from pathlib import Path

HEADER_LEN, PAYLOAD_LEN, M_B, M_SEQ, MTU = 80, 240, 5, 20, 1500

rng = random.Random(20240607)


def rbytes(n):
    return bytes(rng.randrange(256) for _ in range(n))


def csum_free_ipv4(proto, src, dst, body_len, options=b"", frag=0, total=None):
    ihl = (20 + len(options)) // 4
    total = 20 + len(options) + body_len if total is None else total
    return (struct.pack("!BBHHHBBH4s4s", 0x40 | ihl, 0x10, total, rng.randrange(65536), frag,
                        64, proto, 0, bytes(src), bytes(dst)) + options)


def ipv6(next_header, src, dst, body_len):
    return struct.pack("!IHBB16s16s", 0x60000000, body_len, next_header, 64, bytes(src), bytes(dst))


def tcp(sport, dport, flags=0x18, options=b""):
    off = (20 + len(options)) // 4
    return struct.pack("!HHIIBBHHH", sport, dport, rng.randrange(1 << 32), rng.randrange(1 << 32),
                       off << 4, flags, 65535, 0, 0) + options


def udp(sport, dport, body_len):
    return struct.pack("!HHHH", sport, dport, 8 + body_len, 0)


class Pkt:
    def __init__(self, ts_us, frame, orig, expect):
        self.ts_us, self.frame, self.orig, self.expect = ts_us, frame, orig, expect


ETH_V4 = b"\x02" * 6 + b"\x04" * 6 + b"\x08\x00"
ETH_V6 = b"\x02" * 6 + b"\x04" * 6 + b"\x86\xdd"
ETH_ARP = b"\xff" * 6 + b"\x04" * 6 + b"\x08\x06"
ETH_VLAN_V4 = b"\x02" * 6 + b"\x04" * 6 + b"\x81\x00\x00\x07\x08\x00"

packets = []


def zero(buf, lo, hi):
    return buf[:lo] + bytes(hi - lo) + buf[hi:]


def add(ts_us, link, net, transport, payload, key, v6=False, transport_at=None,
        has_ports=True, snap=None, trailer=b"", wire=None):
    # net includes any extension headers; transport_at is where the L4
    # header starts inside net + transport.
    header = net + transport
    frame = link + header + payload + trailer
    orig = len(frame) if wire is None else wire + len(link)
    if snap is not None:
        frame = frame[:snap]
    anon = zero(header, 8, 40) if v6 else zero(header, 12, 20)
    at = len(net) if transport_at is None else transport_at
    if has_ports:
        anon = zero(anon, at, at + 4)
    captured_payload = (link + header + payload)[len(link) + len(header):len(frame)] \
        if snap is not None else payload
    wire_len = len(header) + len(payload) if wire is None else wire
    packets.append(Pkt(ts_us, frame, orig,
                       dict(key=key, header=anon, payload=captured_payload, wire=wire_len,
                            ts=ts_us)))


def v4key(src, dst, sport, dport, proto):
    return dict(src=".".join(map(str, src)), dst=".".join(map(str, dst)), sport=sport,
                dport=dport, proto=proto)


def v6key(src, dst, sport, dport, proto):
    fmt = lambda a: ":".join("%x" % (a[i] << 8 | a[i + 1]) for i in range(0, 16, 2))
    return dict(src=fmt(src), dst=fmt(dst), sport=sport, dport=dport, proto=proto)


T0 = 1_700_000_000_000_000

# A long TCP conversation with options, both directions, payloads that are
# empty, shorter and longer than the payload window.
c, s = [10, 0, 0, 1], [93, 184, 216, 34]
opts = bytes([1, 1, 8, 10]) + rbytes(8)
t = T0
for i in range(26):
    t += [0, 1, 17, 250, 1_000, 123_457, 2_000_001][i % 7]
    size = [0, 37, 240, 241, 1200, 1460, 3][i % 7]
    body = rbytes(size)
    if i % 3 == 2:
        tr = tcp(443, 51000, 0x10, opts)
        add(t, ETH_V4, csum_free_ipv4(6, s, c, len(tr) + size), tr, body,
            v4key(s, c, 443, 51000, 6))
    else:
        tr = tcp(51000, 443, 0x18, opts)
        add(t, ETH_V4, csum_free_ipv4(6, c, s, len(tr) + size), tr, body,
            v4key(c, s, 51000, 443, 6))

# Short UDP flow with Ethernet trailer padding on a tiny datagram.
u1, u2 = [192, 168, 1, 20], [8, 8, 8, 8]
for i in range(3):
    t += 4_321
    body = rbytes(6 if i == 0 else 90)
    tr = udp(5353, 53, len(body))
    add(t, ETH_V4, csum_free_ipv4(17, u1, u2, len(tr) + len(body)), tr, body,
        v4key(u1, u2, 5353, 53, 17), trailer=bytes(12) if i == 0 else b"")

# ARP frames are dropped.
t += 10
packets.append(Pkt(t, ETH_ARP + rbytes(28), 42, None))

# IPv6 TCP with a hop-by-hop extension header in front of TCP.
a6 = [0x20, 0x01, 0x0d, 0xb8] + [0] * 11 + [1]
b6 = [0x20, 0x01, 0x0d, 0xb8, 0, 0, 0, 0, 0, 0, 0, 0, 0xab, 0xcd, 0, 2]
for i in range(7):
    t += 77_000 + i
    body = rbytes([500, 0, 10, 300, 64, 64, 2000][i])
    hop = bytes([6, 0]) + bytes([1, 4, 0, 0, 0, 0])
    tr = tcp(40000, 8443, 0x18)
    net = ipv6(0, a6, b6, len(hop) + len(tr) + len(body)) + hop
    add(t, ETH_V6, net, tr, body, v6key(a6, b6, 40000, 8443, 6), v6=True)

# VLAN tagged UDP, IPv4 header with options.
v1, v2 = [172, 16, 5, 5], [172, 16, 9, 9]
ipopts = bytes([0x94, 0x04, 0x00, 0x00])
for i in range(6):
    t += 15
    body = rbytes(40 + 50 * i)
    tr = udp(1194, 1194, len(body))
    add(t, ETH_VLAN_V4, csum_free_ipv4(17, v1, v2, len(tr) + len(body), options=ipopts), tr,
        body, v4key(v1, v2, 1194, 1194, 17))

# ICMP echo: no ports, 8-byte transport header kept.
i1, i2 = [10, 1, 1, 1], [10, 2, 2, 2]
for i in range(2):
    t += 1_000_000
    body = rbytes(56)
    tr = struct.pack("!BBHHH", 8, 0, 0, 0x1234, i)
    add(t, ETH_V4, csum_free_ipv4(1, i1, i2, len(tr) + len(body)), tr, body,
        v4key(i1, i2, 0, 0, 1), has_ports=False)

# Snaplen-truncated jumbo datagrams: wire length comes from the IP header
# and the size feature is clamped at the mtu.
j1, j2 = [10, 9, 9, 1], [10, 9, 9, 2]
for i in range(5):
    t += 333
    full = 8900
    tr = tcp(6000, 7000, 0x10)
    body = rbytes(full - 40)
    add(t, ETH_V4, csum_free_ipv4(6, j1, j2, len(tr) + len(body)), tr, body,
        v4key(j1, j2, 6000, 7000, 6), snap=14 + 40 + 128, wire=full)

# Non-first IPv4 fragment: no transport header, ports unknown.
f1, f2 = [10, 7, 7, 7], [10, 8, 8, 8]
t += 5
body = rbytes(300)
add(t, ETH_V4, csum_free_ipv4(17, f1, f2, len(body), frag=0x00b9), b"", body,
    v4key(f1, f2, 0, 0, 17), has_ports=False)


def write_pcap(path):
    out = bytearray(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 262144, 1))
    for p in packets:
        out += struct.pack("<IIII", p.ts_us // 1_000_000, p.ts_us % 1_000_000, len(p.frame),
                           p.orig)
        out += p.frame
    path.write_bytes(bytes(out))


def expected_lines():
    flows, order = {}, []
    for p in packets:
        if p.expect is None:
            continue
        k = json.dumps(p.expect["key"], sort_keys=True)
        if k not in flows:
            flows[k] = []
            order.append(k)
        flows[k].append(p.expect)
    lines = []
    for k in order:
        pk = flows[k]
        arr = b""
        for e in pk[:M_B]:
            arr += e["header"][:HEADER_LEN].ljust(HEADER_LEN, b"\0")
            arr += e["payload"][:PAYLOAD_LEN].ljust(PAYLOAD_LEN, b"\0")
        arr = arr.ljust(M_B * (HEADER_LEN + PAYLOAD_LEN), b"\0")
        sizes = [min(e["wire"], MTU) for e in pk[:M_SEQ]] + [0] * max(0, M_SEQ - len(pk))
        ivs = []
        for i, e in enumerate(pk[:M_SEQ]):
            gap = 0.0 if i == 0 else (e["ts"] - pk[i - 1]["ts"]) / 1e6
            ivs.append((1.0 + gap) / (2.0 + gap))
        ivs += [0.0] * (M_SEQ - len(ivs))
        obj = dict(key=json.loads(k), byte_array=base64.b64encode(arr).decode(), size_seq=sizes,
                   interval_seq=ivs, first_ts=pk[0]["ts"], label=None)
        lines.append(json.dumps(obj, sort_keys=True, separators=(",", ":")))
    return lines


def online_packets():
    # 30 flows of 5-12 packets, each inside one 3 s flush window counted
    # from the first packet, and 12 flows of 1-4 packets.
    out = []
    base = T0 + 100_000_000
    for f in range(42):
        src = [10, 20, f // 256, f % 256]
        dst = [10, 30, 0, 1 + f % 3]
        n = 5 + f % 8 if f < 30 else 1 + f % 4
        window = f % 20
        t = base + window * 3_000_000 + 200_000 + (f * 37_000) % 400_000
        proto = 6 if f % 2 == 0 else 17
        for i in range(n):
            t += 1_000 + ((f * 7 + i * 13) % 50) * 4_000
            body = rbytes(20 + (f * 31 + i * 17) % 400)
            tr = tcp(20000 + f, 443) if proto == 6 else udp(20000 + f, 443, len(body))
            frame = ETH_V4 + csum_free_ipv4(proto, src, dst, len(tr) + len(body)) + tr + body
            out.append(Pkt(t, frame, len(frame), None))
    out.sort(key=lambda p: p.ts_us)
    return out


if __name__ == "__main__":
    here = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
    write_pcap(here / "golden.pcap")
    golden = packets
    packets = online_packets()
    write_pcap(here / "online.pcap")
    packets = golden
    (here / "golden_flows.jsonl").write_text("\n".join(expected_lines()) + "\n")
