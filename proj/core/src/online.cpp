#include "strider/online.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <istream>
#include <ostream>
#include <thread>

#include "strider/error.hpp"
#include "strider/finetune.hpp"

namespace strider {

std::int64_t OnlineConfig::flush_period_us() const {
  return static_cast<std::int64_t>(std::llround(flush_period_s * 1e6));
}

std::int64_t OnlineConfig::evict_after_us() const {
  return static_cast<std::int64_t>(std::llround(evict_after_s * 1e6));
}

void OnlineConfig::validate() const {
  repr.validate();
  if (!(flush_period_s > 0.0)) throw Error(Errc::invalid_config, "flush period must be > 0");
  if (!(evict_after_s > 0.0)) throw Error(Errc::invalid_config, "eviction window must be > 0");
}

FlowTable::FlowTable(const ReprConfig& repr) : repr_(repr) { repr_.validate(); }

void FlowTable::ingest(const PacketRecord& p, std::int64_t now_us) {
  auto [it, created] = entries_.try_emplace(p.tuple);
  auto& e = it->second;
  if (created) {
    e.key = p.tuple;
    e.created_at = now_us;
    e.order = next_order_++;
  }
  if (e.packet_count < repr_.packets_for_bytes) {
    auto block = crop_pad_packet(p, repr_);
    e.byte_buffer.insert(e.byte_buffer.end(), block.begin(), block.end());
  }
  if (e.packet_count < repr_.packets_for_sequences) {
    e.sizes.push_back(clamp_size(p.wire_length, repr_.mtu));
    e.arrivals.push_back(p.arrival_us);
  }
  ++e.packet_count;
  e.wire_bytes += p.wire_length;
}

FlowSample entry_to_sample(const FlowTableEntry& entry, const ReprConfig& repr) {
  if (entry.packet_count == 0) throw Error(Errc::empty_flow, "flow table entry without packets");
  FlowSample s;
  s.key = entry.key;
  s.byte_array = entry.byte_buffer;
  s.byte_array.resize(static_cast<std::size_t>(repr.byte_len()), 0);
  s.strides = cut_strides(s.byte_array, repr.stride_len);
  const auto m = static_cast<std::size_t>(repr.packets_for_sequences);
  s.size_seq.assign(m, 0);
  s.interval_seq.assign(m, 0.0);
  for (std::size_t i = 0; i < entry.sizes.size(); ++i) {
    s.size_seq[i] = entry.sizes[i];
    double gap = i == 0 ? 0.0 : static_cast<double>(entry.arrivals[i] - entry.arrivals[i - 1]) / 1e6;
    s.interval_seq[i] = normalize_interval(gap);
  }
  s.first_ts = entry.created_at;
  return s;
}

std::vector<FlushedFlow> FlowTable::flush() {
  std::vector<const FlowTableEntry*> ready;
  for (const auto& [key, e] : entries_) {
    if (e.packet_count >= repr_.packets_for_bytes) ready.push_back(&e);
  }
  std::sort(ready.begin(), ready.end(),
            [](const FlowTableEntry* a, const FlowTableEntry* b) { return a->order < b->order; });
  std::vector<FlushedFlow> out;
  out.reserve(ready.size());
  for (const auto* e : ready) out.push_back({entry_to_sample(*e, repr_), e->wire_bytes});
  for (const auto& f : out) entries_.erase(f.sample.key);
  return out;
}

std::size_t FlowTable::evict(std::int64_t now_us, std::int64_t window_us) {
  return std::erase_if(entries_, [&](const auto& kv) { return now_us - kv.second.created_at >= window_us; });
}

const FlowTableEntry* FlowTable::find(const FiveTuple& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

bool BatchMailbox::publish(std::vector<FlushedFlow> flows, std::int64_t now_us) {
  if (flows.empty()) return false;
  bool merged;
  {
    std::lock_guard lock(mu_);
    merged = status_ == 1;
    if (merged) {
      ++merges_;
      for (auto& f : flows) batch_.flows.push_back(std::move(f));
    } else {
      batch_.flows = std::move(flows);
      batch_.published = std::chrono::steady_clock::now();
    }
    batch_.flushed_at = now_us;
    status_ = 1;
  }
  cv_.notify_one();
  return merged;
}

Batch BatchMailbox::take() {
  std::lock_guard lock(mu_);
  if (status_ == 0) throw Error(Errc::empty_mailbox, "no batch pending");
  status_ = 0;
  return std::exchange(batch_, Batch{});
}

std::optional<Batch> BatchMailbox::wait_take() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return status_ == 1 || closed_; });
  if (status_ == 0) return std::nullopt;
  status_ = 0;
  return std::exchange(batch_, Batch{});
}

void BatchMailbox::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool BatchMailbox::pending() const {
  std::lock_guard lock(mu_);
  return status_ == 1;
}

std::size_t BatchMailbox::sample_size() const {
  std::lock_guard lock(mu_);
  return status_ == 1 ? batch_.flows.size() : 0;
}

std::size_t BatchMailbox::merges() const {
  std::lock_guard lock(mu_);
  return merges_;
}

ClassifiedBatch classify_batch(Batch batch, const Model<float>& model, std::int64_t batch_id) {
  ClassifiedBatch out;
  const auto start = std::chrono::steady_clock::now();
  out.samples.reserve(batch.flows.size());
  std::int64_t bits = 0;
  for (auto& f : batch.flows) {
    bits += 8 * f.wire_bytes;
    out.samples.push_back(std::move(f.sample));
  }
  out.logits = predict_logits(model, out.samples, static_cast<int>(std::max<std::size_t>(out.samples.size(), 1)));
  const auto c = static_cast<std::size_t>(model.parts().n_classes);
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    auto p = predict_one(std::span<const float>(out.logits).subspan(i * c, c));
    out.flows.push_back({out.samples[i].key, p.label, p.score, batch.flushed_at, batch_id});
  }
  const auto done = std::chrono::steady_clock::now();
  auto& st = out.stats;
  st.batch_id = batch_id;
  st.flows = out.flows.size();
  st.bits = bits;
  st.wall_seconds = std::chrono::duration<double>(done - start).count();
  st.throughput_bps = st.wall_seconds > 0 ? static_cast<double>(bits) / st.wall_seconds : 0.0;
  st.latency_seconds = std::chrono::duration<double>(done - batch.published).count();
  return out;
}

ClassifiedBatch consume_and_classify(BatchMailbox& mailbox, const Model<float>& model,
                                     std::int64_t batch_id) {
  return classify_batch(mailbox.take(), model, batch_id);
}

nlohmann::json key_to_json(const FiveTuple& key) {
  return {{"src", format_ip(key.src_ip)},
          {"dst", format_ip(key.dst_ip)},
          {"sport", key.src_port},
          {"dport", key.dst_port},
          {"proto", key.protocol}};
}

nlohmann::json to_json(const ClassifiedFlow& flow) {
  return {{"key", key_to_json(flow.key)},
          {"label", flow.label},
          {"score", flow.score},
          {"classified_at", flow.classified_at},
          {"batch_id", flow.batch_id}};
}

ClassifiedFlow classified_flow_from_json(const nlohmann::json& j) {
  try {
    ClassifiedFlow f;
    const auto& k = j.at("key");
    f.key.src_ip = parse_ip(k.at("src").get<std::string>());
    f.key.dst_ip = parse_ip(k.at("dst").get<std::string>());
    f.key.src_port = k.at("sport").get<std::uint16_t>();
    f.key.dst_port = k.at("dport").get<std::uint16_t>();
    f.key.protocol = k.at("proto").get<std::uint8_t>();
    f.label = j.at("label").get<int>();
    f.score = j.at("score").get<double>();
    f.classified_at = j.at("classified_at").get<std::int64_t>();
    f.batch_id = j.at("batch_id").get<std::int64_t>();
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse_error, std::string("bad result record: ") + e.what());
  }
}

nlohmann::json to_json(const BatchStats& s) {
  return {{"batch_id", s.batch_id},
          {"flows", s.flows},
          {"bits", s.bits},
          {"wall_seconds", s.wall_seconds},
          {"throughput_bps", s.throughput_bps},
          {"latency_seconds", s.latency_seconds}};
}

ResultStore::ResultStore(std::ostream* jsonl) : jsonl_(jsonl) {}

void ResultStore::append(const ClassifiedFlow& flow) {
  std::lock_guard lock(mu_);
  latest_[flow.key] = records_.size();
  records_.push_back(flow);
  if (jsonl_) *jsonl_ << to_json(flow).dump() << '\n';
}

void ResultStore::add_stats(const BatchStats& stats) {
  std::lock_guard lock(mu_);
  stats_.push_back(stats);
}

ClassifiedFlow ResultStore::latest(const FiveTuple& key) const {
  std::lock_guard lock(mu_);
  auto it = latest_.find(key);
  if (it == latest_.end()) throw Error(Errc::not_found, "flow was never classified");
  return records_[it->second];
}

std::vector<ClassifiedFlow> ResultStore::page(std::size_t offset, std::size_t limit) const {
  std::lock_guard lock(mu_);
  if (offset >= records_.size()) return {};
  const auto end = offset + std::min(limit, records_.size() - offset);
  return {records_.begin() + static_cast<std::ptrdiff_t>(offset),
          records_.begin() + static_cast<std::ptrdiff_t>(end)};
}

std::vector<ClassifiedFlow> ResultStore::all() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::vector<BatchStats> ResultStore::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

std::size_t ResultStore::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

nlohmann::json ResultStore::stats_summary() const {
  std::lock_guard lock(mu_);
  nlohmann::json j;
  j["batches"] = stats_.size();
  j["flows"] = records_.size();
  auto summarize = [&](auto field) {
    std::vector<double> v;
    for (const auto& s : stats_) v.push_back(s.*field);
    std::sort(v.begin(), v.end());
    nlohmann::json out = nlohmann::json::object();
    if (v.empty()) return out;
    double sum = 0.0;
    for (double x : v) sum += x;
    out["mean"] = sum / static_cast<double>(v.size());
    out["min"] = v.front();
    out["median"] = v[v.size() / 2];
    out["max"] = v.back();
    return out;
  };
  j["throughput_bps"] = summarize(&BatchStats::throughput_bps);
  j["latency_seconds"] = summarize(&BatchStats::latency_seconds);
  return j;
}

void load_results(std::istream& in, ResultStore& store) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::parse_error, std::string("bad result line: ") + e.what());
    }
    store.append(classified_flow_from_json(j));
  }
}

void write_stats_csv(std::ostream& out, const std::vector<BatchStats>& stats) {
  out << "batch_id,flows,bits,wall_seconds,throughput_bps,latency_seconds\n";
  for (const auto& s : stats) {
    out << s.batch_id << ',' << s.flows << ',' << s.bits << ',' << s.wall_seconds << ','
        << s.throughput_bps << ',' << s.latency_seconds << '\n';
  }
}

Engine::Engine(const OnlineConfig& cfg, Publish publish)
    : cfg_(cfg), publish_(std::move(publish)), table_(cfg.repr) {
  cfg_.validate();
}

void Engine::tick(std::int64_t at) {
  clock_ = std::max(clock_, at);
  auto flushed = table_.flush();
  if (!flushed.empty()) publish_(std::move(flushed), at);
  evicted_ += table_.evict(at, cfg_.evict_after_us());
}

void Engine::on_packet(PacketRecord record) {
  if (record.network == NetworkLayer::other) return;
  record = anonymize(std::move(record));
  const auto t = record.arrival_us;
  if (!next_tick_) next_tick_ = t + cfg_.flush_period_us();
  while (*next_tick_ <= t) {
    tick(*next_tick_);
    *next_tick_ += cfg_.flush_period_us();
  }
  clock_ = std::max(clock_, t);
  table_.ingest(record, clock_);
  max_table_ = std::max(max_table_, table_.size());
}

void Engine::finish() {
  while (next_tick_ && table_.size() > 0) {
    tick(*next_tick_);
    *next_tick_ += cfg_.flush_period_us();
  }
}

namespace {

template <typename T>
class Channel {
 public:
  void push(T v) {
    {
      std::lock_guard lock(mu_);
      q_.push_back(std::move(v));
    }
    cv_.notify_one();
  }
  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_one();
  }
  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    return v;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> q_;
  bool closed_ = false;
};

}  // namespace

ReplayReport replay(const std::vector<PacketRecord>& records, const Model<float>& model,
                    const OnlineConfig& cfg, const ReplayOptions& opts, ResultStore* store) {
  if (!(opts.speed_factor > 0.0)) throw Error(Errc::invalid_config, "speed factor must be > 0");
  if (model.parts().n_classes <= 0) throw Error(Errc::invalid_config, "model has no classification head");
  ReplayReport report;
  report.packets = records.size();
  if (!records.empty()) {
    auto [lo, hi] = std::minmax_element(records.begin(), records.end(),
                                        [](const auto& a, const auto& b) { return a.arrival_us < b.arrival_us; });
    report.simulated_seconds = static_cast<double>(hi->arrival_us - lo->arrival_us) / 1e6 / opts.speed_factor;
  }
  BatchMailbox mailbox;
  std::int64_t next_batch = 0;
  auto deliver = [&](ClassifiedBatch b) {
    if (store) {
      for (const auto& f : b.flows) store->append(f);
      store->add_stats(b.stats);
    }
    report.classified += b.flows.size();
    ++report.batches;
    report.results.push_back(std::move(b));
  };

  if (!opts.threaded) {
    Engine engine(cfg, [&](std::vector<FlushedFlow> flows, std::int64_t now) {
      mailbox.publish(std::move(flows), now);
      deliver(consume_and_classify(mailbox, model, next_batch++));
    });
    for (const auto& r : records) engine.on_packet(r);
    engine.finish();
    report.evicted = engine.evicted();
    report.max_table_size = engine.max_table_size();
    return report;
  }

  Channel<PacketRecord> packets;
  Engine engine(cfg, [&](std::vector<FlushedFlow> flows, std::int64_t now) {
    mailbox.publish(std::move(flows), now);
  });
  std::jthread classifier([&] {
    while (auto batch = mailbox.wait_take()) deliver(classify_batch(std::move(*batch), model, next_batch++));
  });
  std::jthread owner([&] {
    while (auto p = packets.pop()) engine.on_packet(std::move(*p));
    engine.finish();
    mailbox.close();
  });
  {
    // Feeder: paces packets on the wall clock.
    const auto start = std::chrono::steady_clock::now();
    const std::int64_t t0 = records.empty() ? 0 : records.front().arrival_us;
    for (const auto& r : records) {
      const double offset = static_cast<double>(r.arrival_us - t0) / 1e6 / opts.speed_factor;
      std::this_thread::sleep_until(start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                std::chrono::duration<double>(std::max(offset, 0.0))));
      packets.push(r);
    }
    packets.close();
  }
  owner.join();
  classifier.join();
  report.evicted = engine.evicted();
  report.max_table_size = engine.max_table_size();
  report.merges = mailbox.merges();
  return report;
}

}  // namespace strider
