#include "strider/flow_repr.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "strider/base64.hpp"
#include "strider/error.hpp"

namespace strider {

void ReprConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(Errc::invalid_config, "repr: " + what); };
  if (packets_for_bytes <= 0 || header_len < 0 || payload_len < 0 || block_len() <= 0) {
    bad("packet counts and lengths must be positive");
  }
  if (stride_len <= 0) bad("stride_len must be positive");
  if (byte_len() % stride_len != 0) {
    bad("byte length " + std::to_string(byte_len()) + " is not divisible by stride_len " +
        std::to_string(stride_len));
  }
  if (packets_for_sequences <= packets_for_bytes) {
    bad("packets_for_sequences must exceed packets_for_bytes");
  }
  if (mtu <= 0) bad("mtu must be positive");
}

std::vector<Flow> split_flows(std::span<const PacketRecord> records) {
  std::vector<Flow> flows;
  std::unordered_map<FiveTuple, std::size_t, FiveTupleHash> index;
  for (const auto& r : records) {
    auto [it, inserted] = index.try_emplace(r.tuple, flows.size());
    if (inserted) flows.push_back(Flow{r.tuple, {}});
    flows[it->second].packets.push_back(r);
  }
  return flows;
}

std::vector<std::uint8_t> crop_pad_packet(const PacketRecord& packet, const ReprConfig& cfg) {
  std::vector<std::uint8_t> block(static_cast<std::size_t>(cfg.block_len()), 0);
  std::size_t nh = std::min<std::size_t>(packet.header_bytes.size(), cfg.header_len);
  std::size_t np = std::min<std::size_t>(packet.payload_bytes.size(), cfg.payload_len);
  std::copy_n(packet.header_bytes.begin(), nh, block.begin());
  std::copy_n(packet.payload_bytes.begin(), np, block.begin() + cfg.header_len);
  return block;
}

std::vector<std::uint8_t> build_byte_array(std::span<const PacketRecord> flow,
                                           const ReprConfig& cfg) {
  if (flow.empty()) throw Error(Errc::empty_flow, "cannot build a byte array from an empty flow");
  std::vector<std::uint8_t> bytes;
  bytes.reserve(static_cast<std::size_t>(cfg.byte_len()));
  std::size_t used = std::min<std::size_t>(flow.size(), cfg.packets_for_bytes);
  for (std::size_t i = 0; i < used; ++i) {
    auto block = crop_pad_packet(flow[i], cfg);
    bytes.insert(bytes.end(), block.begin(), block.end());
  }
  bytes.resize(static_cast<std::size_t>(cfg.byte_len()), 0);
  return bytes;
}

StrideMatrix cut_strides(std::span<const std::uint8_t> bytes, int stride_len) {
  if (stride_len <= 0 || bytes.size() % static_cast<std::size_t>(stride_len) != 0) {
    throw Error(Errc::indivisible_length, "byte length " + std::to_string(bytes.size()) +
                                              " is not a multiple of stride length " +
                                              std::to_string(stride_len));
  }
  StrideMatrix m;
  m.cols = stride_len;
  m.rows = static_cast<int>(bytes.size() / static_cast<std::size_t>(stride_len));
  m.data.assign(bytes.begin(), bytes.end());
  return m;
}

int clamp_size(std::int64_t wire_length, int mtu) {
  return static_cast<int>(std::min<std::int64_t>(wire_length, mtu));
}

double normalize_interval(double seconds) {
  if (!(seconds >= 0.0)) {
    throw Error(Errc::negative_interval, "inter-arrival time must be non-negative");
  }
  return (1.0 + seconds) / (2.0 + seconds);
}

SequenceFeatures extract_sequences(std::span<const PacketRecord> flow, const ReprConfig& cfg) {
  if (flow.empty()) throw Error(Errc::empty_flow, "cannot extract sequences from an empty flow");
  SequenceFeatures f;
  f.sizes.assign(static_cast<std::size_t>(cfg.packets_for_sequences), 0);
  f.intervals.assign(static_cast<std::size_t>(cfg.packets_for_sequences), 0.0);
  std::size_t used = std::min<std::size_t>(flow.size(), cfg.packets_for_sequences);
  for (std::size_t i = 0; i < used; ++i) {
    f.sizes[i] = clamp_size(flow[i].wire_length, cfg.mtu);
    double gap = i == 0 ? 0.0 : static_cast<double>(flow[i].arrival_us - flow[i - 1].arrival_us) / 1e6;
    f.intervals[i] = normalize_interval(gap);
  }
  return f;
}

FlowSample make_flow_sample(const FiveTuple& key, std::span<const PacketRecord> flow,
                            const ReprConfig& cfg) {
  FlowSample s;
  s.key = key;
  s.byte_array = build_byte_array(flow, cfg);
  s.strides = cut_strides(s.byte_array, cfg.stride_len);
  auto seq = extract_sequences(flow, cfg);
  s.size_seq = std::move(seq.sizes);
  s.interval_seq = std::move(seq.intervals);
  s.first_ts = flow.front().arrival_us;
  return s;
}

std::vector<FlowSample> extract_flow_samples(std::vector<PacketRecord> records,
                                             const ReprConfig& cfg) {
  cfg.validate();
  records = filter_non_ip(std::move(records));
  for (auto& r : records) r = anonymize(std::move(r));
  std::vector<FlowSample> out;
  for (const auto& flow : split_flows(records)) {
    out.push_back(make_flow_sample(flow.key, flow.packets, cfg));
  }
  return out;
}

std::string to_jsonl_line(const FlowSample& sample) {
  nlohmann::json j;
  j["key"] = {{"src", format_ip(sample.key.src_ip)},
              {"dst", format_ip(sample.key.dst_ip)},
              {"sport", sample.key.src_port},
              {"dport", sample.key.dst_port},
              {"proto", sample.key.protocol}};
  j["byte_array"] = base64_encode(sample.byte_array);
  j["size_seq"] = sample.size_seq;
  j["interval_seq"] = sample.interval_seq;
  j["first_ts"] = sample.first_ts;
  j["label"] = sample.label ? nlohmann::json(*sample.label) : nlohmann::json(nullptr);
  return j.dump();
}

FlowSample from_jsonl_line(const std::string& line, const ReprConfig& cfg) {
  try {
    auto j = nlohmann::json::parse(line);
    FlowSample s;
    const auto& k = j.at("key");
    s.key.src_ip = parse_ip(k.at("src").get<std::string>());
    s.key.dst_ip = parse_ip(k.at("dst").get<std::string>());
    s.key.src_port = k.at("sport").get<std::uint16_t>();
    s.key.dst_port = k.at("dport").get<std::uint16_t>();
    s.key.protocol = k.at("proto").get<std::uint8_t>();
    s.byte_array = base64_decode(j.at("byte_array").get<std::string>());
    if (s.byte_array.size() != static_cast<std::size_t>(cfg.byte_len())) {
      throw Error(Errc::parse_error, "byte_array holds " + std::to_string(s.byte_array.size()) +
                                         " bytes, expected " + std::to_string(cfg.byte_len()));
    }
    s.strides = cut_strides(s.byte_array, cfg.stride_len);
    s.size_seq = j.at("size_seq").get<std::vector<int>>();
    s.interval_seq = j.at("interval_seq").get<std::vector<double>>();
    if (s.size_seq.size() != static_cast<std::size_t>(cfg.packets_for_sequences) ||
        s.interval_seq.size() != s.size_seq.size()) {
      throw Error(Errc::parse_error, "sequence length does not match packets_for_sequences");
    }
    s.first_ts = j.at("first_ts").get<std::int64_t>();
    if (j.contains("label") && !j.at("label").is_null()) s.label = j.at("label").get<int>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse_error, std::string("flow sample: ") + e.what());
  }
}

void write_flow_samples(std::ostream& out, std::span<const FlowSample> samples) {
  for (const auto& s : samples) out << to_jsonl_line(s) << '\n';
}

void write_flow_samples(const std::filesystem::path& path, std::span<const FlowSample> samples) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  write_flow_samples(out, samples);
}

std::vector<FlowSample> read_flow_samples(std::istream& in, const ReprConfig& cfg) {
  std::vector<FlowSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(from_jsonl_line(line, cfg));
  }
  return out;
}

std::vector<FlowSample> read_flow_samples(const std::filesystem::path& path,
                                          const ReprConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  return read_flow_samples(in, cfg);
}

}  // namespace strider
