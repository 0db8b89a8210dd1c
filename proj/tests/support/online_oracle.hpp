#pragma once

// Offline reference for samples emitted by the online engine: a sample
// flushed at T whose first packet arrived at first_ts covers exactly the
// packets of its key with first_ts <= arrival < T.

#include <map>
#include <vector>

#include "strider/flow_repr.hpp"
#include "strider/online.hpp"

namespace strider::testing {

class OfflineReference {
 public:
  OfflineReference(const std::vector<PacketRecord>& records, const ReprConfig& repr) : repr_(repr) {
    for (auto& r : filter_non_ip(records)) by_key_[r.tuple].push_back(anonymize(r));
  }

  FlowSample sample(const FiveTuple& key, std::int64_t first_ts, std::int64_t flushed_at) const {
    std::vector<PacketRecord> window;
    for (const auto& p : by_key_.at(key)) {
      if (p.arrival_us >= first_ts && p.arrival_us < flushed_at) window.push_back(p);
    }
    return make_flow_sample(key, window, repr_);
  }

  const std::map<FiveTuple, std::vector<PacketRecord>>& flows() const { return by_key_; }

 private:
  ReprConfig repr_;
  std::map<FiveTuple, std::vector<PacketRecord>> by_key_;
};

inline bool same_sample(const FlowSample& a, const FlowSample& b) {
  return a.key == b.key && a.byte_array == b.byte_array && a.strides.data == b.strides.data &&
         a.size_seq == b.size_seq && a.interval_seq == b.interval_seq && a.first_ts == b.first_ts;
}

}  // namespace strider::testing
