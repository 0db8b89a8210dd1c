#include "strider/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "strider/error.hpp"
#include "strider/rng.hpp"

namespace strider {

namespace {

constexpr int kPayloadPositions = 8;
constexpr int kPayloadLen = 256;
constexpr int kSizePositions = 32;

struct Template {
  std::uint8_t protocol = 6;
  std::uint8_t ttl = 64;
  std::uint8_t tos = 0;
  std::uint16_t window = 65535;
  std::uint16_t dst_port = 443;
  std::array<std::uint8_t, kPayloadPositions> flags{};
  std::array<std::uint8_t, 12> options{};
  bool has_options = false;
  std::array<std::array<std::uint8_t, kPayloadLen>, kPayloadPositions> payload{};
  std::array<double, kSizePositions> sizes{};
  std::array<double, kSizePositions> gaps{};  // mean inter-arrival seconds
};

Template random_template(Rng& rng) {
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Template t;
  t.protocol = u(rng) < 0.75 ? 6 : 17;
  t.ttl = static_cast<std::uint8_t>(std::array{32, 64, 128, 255}[byte(rng) % 4] - byte(rng) % 8);
  t.tos = static_cast<std::uint8_t>(byte(rng) & 0xfc);
  t.window = static_cast<std::uint16_t>(byte(rng) << 8 | byte(rng));
  t.dst_port = static_cast<std::uint16_t>(std::array{443, 80, 8443, 53, 993, 5228}[byte(rng) % 6]);
  for (auto& f : t.flags) f = static_cast<std::uint8_t>(std::array{0x02, 0x10, 0x18, 0x12, 0x11}[byte(rng) % 5]);
  t.has_options = u(rng) < 0.5;
  for (auto& o : t.options) o = static_cast<std::uint8_t>(byte(rng));
  for (auto& block : t.payload) {
    for (auto& b : block) b = static_cast<std::uint8_t>(byte(rng));
  }
  for (auto& s : t.sizes) s = 60.0 + u(rng) * 1500.0;
  for (auto& g : t.gaps) g = std::exp(std::log(1e-4) + u(rng) * (std::log(0.5) - std::log(1e-4)));
  return t;
}

// Each feature comes from `own` with probability `separation`, else `base`.
Template mix(const Template& base, const Template& own, double separation, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto pick = [&](const auto& a, const auto& b) { return u(rng) < separation ? b : a; };
  Template t;
  t.protocol = pick(base.protocol, own.protocol);
  t.ttl = pick(base.ttl, own.ttl);
  t.tos = pick(base.tos, own.tos);
  t.window = pick(base.window, own.window);
  t.dst_port = pick(base.dst_port, own.dst_port);
  for (std::size_t i = 0; i < t.flags.size(); ++i) t.flags[i] = pick(base.flags[i], own.flags[i]);
  t.has_options = pick(base.has_options, own.has_options);
  t.options = pick(base.options, own.options);
  for (std::size_t p = 0; p < t.payload.size(); ++p) {
    for (std::size_t j = 0; j < t.payload[p].size(); ++j) {
      t.payload[p][j] = pick(base.payload[p][j], own.payload[p][j]);
    }
  }
  for (std::size_t i = 0; i < t.sizes.size(); ++i) t.sizes[i] = pick(base.sizes[i], own.sizes[i]);
  for (std::size_t i = 0; i < t.gaps.size(); ++i) t.gaps[i] = pick(base.gaps[i], own.gaps[i]);
  return t;
}

void put16(std::vector<std::uint8_t>& v, std::size_t at, std::uint16_t x) {
  v[at] = static_cast<std::uint8_t>(x >> 8);
  v[at + 1] = static_cast<std::uint8_t>(x);
}

PacketRecord make_packet(const Template& t, const FiveTuple& key, int position, int size,
                         std::int64_t arrival_us, const Template* alt, Rng& rng,
                         double byte_noise) {
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int pay_pos = std::min(position, kPayloadPositions - 1);
  const bool tcp = t.protocol == 6;
  const int opt_len = tcp && t.has_options ? 12 : 0;
  const int transport_len = tcp ? 20 + opt_len : 8;
  const int header_len = 20 + transport_len;
  size = std::max(size, header_len);
  const int payload_len = size - header_len;

  PacketRecord r;
  r.arrival_us = arrival_us;
  r.tuple = key;
  r.network = NetworkLayer::ipv4;
  r.wire_length = static_cast<std::uint32_t>(size);
  auto& h = r.header_bytes;
  h.assign(static_cast<std::size_t>(header_len), 0);
  h[0] = 0x45;
  h[1] = t.tos;
  put16(h, 2, static_cast<std::uint16_t>(std::min(size, 65535)));
  put16(h, 4, static_cast<std::uint16_t>(byte(rng) << 8 | byte(rng)));
  h[6] = 0x40;
  h[8] = t.ttl;
  h[9] = t.protocol;
  put16(h, 10, static_cast<std::uint16_t>(byte(rng) << 8 | byte(rng)));
  std::copy_n(key.src_ip.begin() + 12, 4, h.begin() + 12);
  std::copy_n(key.dst_ip.begin() + 12, 4, h.begin() + 16);
  put16(h, 20, key.src_port);
  put16(h, 22, key.dst_port);
  if (tcp) {
    for (int i = 24; i < 32; ++i) h[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(byte(rng));
    h[32] = static_cast<std::uint8_t>((transport_len / 4) << 4);
    h[33] = t.flags[static_cast<std::size_t>(pay_pos)];
    put16(h, 34, t.window);
    put16(h, 36, static_cast<std::uint16_t>(byte(rng) << 8 | byte(rng)));
    if (opt_len) std::copy(t.options.begin(), t.options.end(), h.begin() + 40);
  } else {
    put16(h, 24, static_cast<std::uint16_t>(std::min(size - 20, 65535)));
    put16(h, 26, static_cast<std::uint16_t>(byte(rng) << 8 | byte(rng)));
  }
  // Only the first bytes of long payloads are captured (snap length).
  const int captured = std::min(payload_len, kPayloadLen + 64);
  r.payload_bytes.resize(static_cast<std::size_t>(captured));
  for (int j = 0; j < captured; ++j) {
    std::uint8_t v;
    if (j >= kPayloadLen || u(rng) < byte_noise) {
      v = static_cast<std::uint8_t>(byte(rng));
    } else {
      const Template& src = alt != nullptr && u(rng) < 0.5 ? *alt : t;
      v = src.payload[static_cast<std::size_t>(pay_pos)][static_cast<std::size_t>(j)];
    }
    r.payload_bytes[static_cast<std::size_t>(j)] = v;
  }
  return r;
}

}  // namespace

SynthCorpus synth_corpus(const SynthConfig& cfg) {
  if (cfg.classes.empty()) throw Error(Errc::invalid_config, "synth: no classes");
  if (cfg.min_packets < 1 || cfg.max_packets < cfg.min_packets) {
    throw Error(Errc::invalid_config, "synth: bad packet count range");
  }
  auto rng = make_rng(cfg.seed, "synth");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Template base = random_template(rng);
  std::vector<Template> templates;
  for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
    templates.push_back(mix(base, random_template(rng), cfg.separation, rng));
  }
  for (const auto& spec : cfg.classes) {
    auto n = static_cast<int>(cfg.classes.size());
    if ((spec.blend_a >= 0) != (spec.blend_b >= 0) || spec.blend_a >= n || spec.blend_b >= n) {
      throw Error(Errc::invalid_config, "synth: bad blend classes");
    }
  }

  SynthCorpus corpus;
  std::uint32_t host = 0;
  for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
    const auto& spec = cfg.classes[c];
    const bool blend = spec.blend_a >= 0;
    for (int f = 0; f < spec.flows; ++f) {
      const Template* main = blend ? &templates[static_cast<std::size_t>(spec.blend_a)] : &templates[c];
      const Template* alt = blend ? &templates[static_cast<std::size_t>(spec.blend_b)] : nullptr;
      FiveTuple key;
      ++host;
      std::array<std::uint8_t, 4> src{10, static_cast<std::uint8_t>(host >> 16),
                                      static_cast<std::uint8_t>(host >> 8),
                                      static_cast<std::uint8_t>(host)};
      std::array<std::uint8_t, 4> dst{172, 16, static_cast<std::uint8_t>(c), 1};
      key.src_ip = ipv4_mapped(src);
      key.dst_ip = ipv4_mapped(dst);
      key.src_port = static_cast<std::uint16_t>(1024 + host % 60000);
      key.dst_port = main->dst_port;
      key.protocol = main->protocol;
      corpus.labels[key] = static_cast<int>(c);

      int packets;
      if (u(rng) < cfg.short_flow_fraction) {
        packets = 1 + static_cast<int>(u(rng) * 4.0);
      } else {
        packets = cfg.min_packets +
                  static_cast<int>(u(rng) * (cfg.max_packets - cfg.min_packets + 1));
      }
      double t = u(rng) * cfg.duration_s;
      for (int i = 0; i < packets; ++i) {
        const auto pos = static_cast<std::size_t>(std::min(i, kSizePositions - 1));
        const Template& src_t = alt != nullptr && u(rng) < 0.5 ? *alt : *main;
        if (i > 0) {
          std::exponential_distribution<double> gap(1.0 / src_t.gaps[pos]);
          t += gap(rng) * cfg.interval_scale;
        }
        double size = src_t.sizes[pos] * (1.0 + cfg.size_jitter * (2.0 * u(rng) - 1.0));
        corpus.packets.push_back(make_packet(*main, key, i, static_cast<int>(std::lround(size)),
                                             static_cast<std::int64_t>(std::llround(t * 1e6)),
                                             alt, rng, cfg.byte_noise));
      }
    }
  }
  std::stable_sort(corpus.packets.begin(), corpus.packets.end(),
                   [](const PacketRecord& a, const PacketRecord& b) { return a.arrival_us < b.arrival_us; });
  return corpus;
}

std::vector<FlowSample> attach_labels(std::vector<FlowSample> samples,
                                      const std::map<FiveTuple, int>& labels) {
  std::vector<FlowSample> out;
  out.reserve(samples.size());
  for (auto& s : samples) {
    auto it = labels.find(s.key);
    if (it == labels.end()) continue;
    s.label = it->second;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<FlowSample> synth_flow_samples(const SynthConfig& cfg, const ReprConfig& repr) {
  auto corpus = synth_corpus(cfg);
  return attach_labels(extract_flow_samples(std::move(corpus.packets), repr), corpus.labels);
}

}  // namespace strider
