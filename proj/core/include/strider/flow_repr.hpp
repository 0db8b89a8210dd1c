#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "strider/packet_io.hpp"

namespace strider {

/// Sizes of the byte and sequence modalities. Defaults follow the reference
/// hyper-parameters: 5 packets of 80 header + 240 payload bytes cut into
/// 4-byte strides, sequences over 20 packets, sizes clamped at 1500.
struct ReprConfig {
  int packets_for_bytes = 5;
  int header_len = 80;
  int payload_len = 240;
  int stride_len = 4;
  int packets_for_sequences = 20;
  int mtu = 1500;

  int block_len() const noexcept { return header_len + payload_len; }
  int byte_len() const noexcept { return packets_for_bytes * block_len(); }
  int n_strides() const noexcept { return byte_len() / stride_len; }

  /// Throws InvalidConfig when sizes are non-positive, the byte array is not
  /// a whole number of strides, or sequences do not outnumber byte packets.
  void validate() const;

  friend bool operator==(const ReprConfig&, const ReprConfig&) = default;
};

/// Row-major byte matrix, one stride per row.
struct StrideMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> data;

  std::span<const std::uint8_t> row(int i) const {
    return {data.data() + static_cast<std::size_t>(i) * cols, static_cast<std::size_t>(cols)};
  }
  std::uint8_t at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }
};

struct FlowSample {
  FiveTuple key;
  std::vector<std::uint8_t> byte_array;
  StrideMatrix strides;
  std::vector<int> size_seq;
  std::vector<double> interval_seq;
  std::int64_t first_ts = 0;
  std::optional<int> label;
};

struct Flow {
  FiveTuple key;
  std::vector<PacketRecord> packets;
};

/// Groups records by exact directed 5-tuple. Flows are returned in order of
/// their first packet; packets keep arrival order.
std::vector<Flow> split_flows(std::span<const PacketRecord> records);

std::vector<std::uint8_t> crop_pad_packet(const PacketRecord& packet, const ReprConfig& cfg);

/// Concatenates the first packets_for_bytes blocks. Missing packets are
/// zero blocks. Throws EmptyFlow.
std::vector<std::uint8_t> build_byte_array(std::span<const PacketRecord> flow,
                                           const ReprConfig& cfg);

/// Throws IndivisibleLength when the array is not a whole number of strides.
StrideMatrix cut_strides(std::span<const std::uint8_t> bytes, int stride_len);

int clamp_size(std::int64_t wire_length, int mtu);

/// Maps an inter-arrival time in seconds onto [0.5, 1) via (1+x)/(2+x).
/// Throws NegativeInterval.
double normalize_interval(double seconds);

struct SequenceFeatures {
  std::vector<int> sizes;
  std::vector<double> intervals;
};

/// Sizes and normalized intervals over the first packets_for_sequences
/// packets, zero-padded. The first packet's interval is 0 seconds.
SequenceFeatures extract_sequences(std::span<const PacketRecord> flow, const ReprConfig& cfg);

/// Full conversion of one flow's (anonymized) packets.
FlowSample make_flow_sample(const FiveTuple& key, std::span<const PacketRecord> flow,
                            const ReprConfig& cfg);

/// Capture records to samples: non-IP filtering, anonymization, splitting.
std::vector<FlowSample> extract_flow_samples(std::vector<PacketRecord> records,
                                             const ReprConfig& cfg);

// FlowSample files: one JSON object per line with keys byte_array (base64),
// first_ts, interval_seq, key, label, size_seq.
std::string to_jsonl_line(const FlowSample& sample);
FlowSample from_jsonl_line(const std::string& line, const ReprConfig& cfg);
void write_flow_samples(std::ostream& out, std::span<const FlowSample> samples);
void write_flow_samples(const std::filesystem::path& path, std::span<const FlowSample> samples);
std::vector<FlowSample> read_flow_samples(std::istream& in, const ReprConfig& cfg);
std::vector<FlowSample> read_flow_samples(const std::filesystem::path& path, const ReprConfig& cfg);

}  // namespace strider
