#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "strider/flow_repr.hpp"

namespace strider {

// Synthetic labelled traffic for desk-scale experiments. Every class owns a
// template (IP/TCP header fields, payload bytes per packet position, packet
// sizes, inter-arrival scales); flows are noisy draws from it. Packets are
// real IPv4 datagrams, so they go through the normal extraction pipeline.

struct SynthClass {
  int flows = 0;
  // When both are set, the class has no template of its own: each byte,
  // size and interval of each flow is drawn from one of these two classes.
  int blend_a = -1;
  int blend_b = -1;
};

struct SynthConfig {
  std::vector<SynthClass> classes{{700}, {700}, {700}};
  // Probability that a template feature is class-specific rather than
  // taken from a template shared by all classes.
  double separation = 1.0;
  double byte_noise = 0.1;   // per payload byte, replace by a random byte
  double size_jitter = 0.1;  // relative
  int min_packets = 5;
  int max_packets = 24;
  double short_flow_fraction = 0.0;  // flows with fewer than 5 packets
  double duration_s = 60.0;          // flow start times are uniform in it
  double interval_scale = 1.0;       // multiplies every inter-arrival time
  std::uint64_t seed = 0;
};

struct SynthCorpus {
  std::vector<PacketRecord> packets;  // time-ordered, not anonymized
  std::map<FiveTuple, int> labels;
};

SynthCorpus synth_corpus(const SynthConfig& cfg);

/// Sets labels from the corpus map; samples without a label are dropped.
std::vector<FlowSample> attach_labels(std::vector<FlowSample> samples,
                                      const std::map<FiveTuple, int>& labels);

/// synth_corpus followed by extraction and labelling.
std::vector<FlowSample> synth_flow_samples(const SynthConfig& cfg, const ReprConfig& repr);

}  // namespace strider
