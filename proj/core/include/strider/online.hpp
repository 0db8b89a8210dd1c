#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "strider/flow_repr.hpp"
#include "strider/model.hpp"

namespace strider {

struct OnlineConfig {
  ReprConfig repr;
  double flush_period_s = 3.0;  // W_g
  double evict_after_s = 10.0;  // W_r

  std::int64_t flush_period_us() const;
  std::int64_t evict_after_us() const;
  void validate() const;
};

struct FlowTableEntry {
  FiveTuple key;
  std::vector<std::uint8_t> byte_buffer;  // cropped blocks of the first M_b packets
  std::vector<int> sizes;                 // wire lengths, first M_seq packets
  std::vector<std::int64_t> arrivals;     // arrival times, first M_seq packets
  int packet_count = 0;
  std::int64_t created_at = 0;
  std::int64_t wire_bytes = 0;  // over every ingested packet
  std::uint64_t order = 0;      // creation order, fixes flush order
};

/// A flushed flow plus the wire volume it carried.
struct FlushedFlow {
  FlowSample sample;
  std::int64_t wire_bytes = 0;
};

class FlowTable {
 public:
  explicit FlowTable(const ReprConfig& repr);

  /// `p` must already be IP-filtered and anonymized.
  void ingest(const PacketRecord& p, std::int64_t now_us);
  /// Removes entries holding at least M_b packets and returns their samples
  /// in creation order.
  std::vector<FlushedFlow> flush();
  /// Drops entries with now - created_at >= window. Returns how many.
  std::size_t evict(std::int64_t now_us, std::int64_t window_us);

  std::size_t size() const noexcept { return entries_.size(); }
  const FlowTableEntry* find(const FiveTuple& key) const;

 private:
  ReprConfig repr_;
  std::unordered_map<FiveTuple, FlowTableEntry, FiveTupleHash> entries_;
  std::uint64_t next_order_ = 0;
};

/// Builds the sample the offline pipeline would build from the same packets.
FlowSample entry_to_sample(const FlowTableEntry& entry, const ReprConfig& repr);

struct Batch {
  std::vector<FlushedFlow> flows;
  std::int64_t flushed_at = 0;  // engine clock of the latest contributing flush
  std::chrono::steady_clock::time_point published;
};

/// Single-producer single-consumer handoff. A publish while a batch is
/// still pending merges into it.
class BatchMailbox {
 public:
  /// Returns true when the batch was merged into a pending one.
  bool publish(std::vector<FlushedFlow> flows, std::int64_t now_us);
  /// Clears the status, then hands the batch over. EmptyMailbox if none.
  Batch take();
  /// Blocks until a batch is pending or close() was called; nullopt after
  /// close with nothing pending.
  std::optional<Batch> wait_take();
  void close();

  bool pending() const;
  std::size_t sample_size() const;
  std::size_t merges() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  Batch batch_;
  int status_ = 0;
  bool closed_ = false;
  std::size_t merges_ = 0;
};

struct ClassifiedFlow {
  FiveTuple key;
  int label = 0;
  double score = 0.0;  // max softmax probability
  std::int64_t classified_at = 0;
  std::int64_t batch_id = 0;
};

struct BatchStats {
  std::int64_t batch_id = 0;
  std::size_t flows = 0;
  std::int64_t bits = 0;
  double wall_seconds = 0.0;     // inference time
  double throughput_bps = 0.0;   // bits / wall_seconds
  double latency_seconds = 0.0;  // publish to results
};

struct ClassifiedBatch {
  std::vector<ClassifiedFlow> flows;
  std::vector<FlowSample> samples;
  std::vector<float> logits;  // [flows, C]
  BatchStats stats;
};

/// Takes the pending batch (EmptyMailbox if none) and classifies it as one
/// dynamic batch.
ClassifiedBatch consume_and_classify(BatchMailbox& mailbox, const Model<float>& model,
                                     std::int64_t batch_id);
ClassifiedBatch classify_batch(Batch batch, const Model<float>& model, std::int64_t batch_id);

nlohmann::json to_json(const ClassifiedFlow& flow);
ClassifiedFlow classified_flow_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BatchStats& stats);
nlohmann::json key_to_json(const FiveTuple& key);

/// In-memory store of classifications, optionally mirrored to a JSONL
/// stream. Appends come from one writer; reads may come from any thread.
class ResultStore {
 public:
  explicit ResultStore(std::ostream* jsonl = nullptr);

  void append(const ClassifiedFlow& flow);
  void add_stats(const BatchStats& stats);

  /// Latest record for `key`. NotFound if never classified.
  ClassifiedFlow latest(const FiveTuple& key) const;
  std::vector<ClassifiedFlow> page(std::size_t offset, std::size_t limit) const;
  std::vector<ClassifiedFlow> all() const;
  std::vector<BatchStats> stats() const;
  std::size_t size() const;
  nlohmann::json stats_summary() const;

 private:
  mutable std::mutex mu_;
  std::ostream* jsonl_;
  std::vector<ClassifiedFlow> records_;
  std::map<FiveTuple, std::size_t> latest_;
  std::vector<BatchStats> stats_;
};

/// Loads a JSONL result file into a store.
void load_results(std::istream& in, ResultStore& store);

void write_stats_csv(std::ostream& out, const std::vector<BatchStats>& stats);

/// Drives the flow table on the engine clock (packet timestamps). Ticks fall
/// every W_g after the first packet; each tick flushes, then evicts.
class Engine {
 public:
  using Publish = std::function<void(std::vector<FlushedFlow>, std::int64_t now_us)>;

  Engine(const OnlineConfig& cfg, Publish publish);

  /// Raw capture record; non-IP records are ignored, others anonymized.
  void on_packet(PacketRecord record);
  /// Keeps ticking until the table is empty.
  void finish();

  std::int64_t clock() const noexcept { return clock_; }
  const FlowTable& table() const noexcept { return table_; }
  std::size_t evicted() const noexcept { return evicted_; }
  std::size_t max_table_size() const noexcept { return max_table_; }

 private:
  void tick(std::int64_t at);

  OnlineConfig cfg_;
  Publish publish_;
  FlowTable table_;
  std::optional<std::int64_t> next_tick_;
  std::int64_t clock_ = 0;
  std::size_t evicted_ = 0;
  std::size_t max_table_ = 0;
};

struct ReplayOptions {
  double speed_factor = 1.0;
  // false: consumer runs right after each flush on the calling thread and
  // the run is fully deterministic. true: feeder, table owner and
  // classifier run on separate threads with real-time pacing.
  bool threaded = false;
};

struct ReplayReport {
  std::size_t packets = 0;
  std::size_t classified = 0;
  std::size_t evicted = 0;
  std::size_t batches = 0;
  std::size_t merges = 0;
  std::size_t max_table_size = 0;
  double simulated_seconds = 0.0;  // capture span / speed_factor
  std::vector<ClassifiedBatch> results;
};

ReplayReport replay(const std::vector<PacketRecord>& records, const Model<float>& model,
                    const OnlineConfig& cfg, const ReplayOptions& opts,
                    ResultStore* store = nullptr);

}  // namespace strider
