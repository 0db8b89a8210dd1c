#include <set>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "strider/finetune.hpp"
#include "strider/online.hpp"
#include "support/errc.hpp"
#include "support/online_oracle.hpp"

using namespace strider;
using strider::testing::OfflineReference;
using strider::testing::same_sample;

namespace {

const std::filesystem::path kFixtures = STRIDER_FIXTURE_DIR;

PacketRecord packet(std::int64_t t, std::uint16_t sport, std::size_t payload = 10) {
  PacketRecord r;
  r.arrival_us = t;
  r.network = NetworkLayer::ipv4;
  r.header_bytes.assign(28, 0);
  r.header_bytes[0] = 0x45;
  r.header_bytes[9] = 17;
  r.header_bytes[20] = static_cast<std::uint8_t>(sport >> 8);
  r.header_bytes[21] = static_cast<std::uint8_t>(sport);
  r.payload_bytes.assign(payload, static_cast<std::uint8_t>(sport));
  r.wire_length = static_cast<std::uint32_t>(28 + payload);
  r.tuple.src_port = sport;
  r.tuple.protocol = 17;
  return r;
}

constexpr std::int64_t kSec = 1'000'000;

std::unique_ptr<Model<float>> small_classifier(const ReprConfig& repr, int classes = 3) {
  ModelConfig m;
  m.d_enc = 16, m.e_enc = 32, m.n_enc_blocks = 1, m.n_state = 4, m.n_heads = 2;
  m.multimodal = true;
  m.match(repr);
  return std::make_unique<Model<float>>(m, 7, ModelParts{.n_classes = classes});
}

FiveTuple key_of(std::uint16_t sport) { return packet(0, sport).tuple; }

}  // namespace

TEST_CASE("ingest fills bytes up to M_b and sequences up to M_seq") {
  ReprConfig repr;
  FlowTable table(repr);
  for (int i = 0; i < 22; ++i) {
    table.ingest(anonymize(packet(i * 1000, 9)), i * 1000);
    const auto* e = table.find(key_of(9));
    REQUIRE(e != nullptr);
    CHECK(e->packet_count == i + 1);
    CHECK(e->created_at == 0);
    CHECK(e->byte_buffer.size() == static_cast<std::size_t>(std::min(i + 1, 5) * 320));
    CHECK(e->sizes.size() == static_cast<std::size_t>(std::min(i + 1, 20)));
  }
  CHECK(table.size() == 1);
}

TEST_CASE("flush emits entries with at least M_b packets") {
  ReprConfig repr;
  FlowTable table(repr);
  for (int i = 0; i < 5; ++i) table.ingest(anonymize(packet(i, 1)), i);
  for (int i = 0; i < 4; ++i) table.ingest(anonymize(packet(i, 2)), i);
  for (int i = 0; i < 6; ++i) table.ingest(anonymize(packet(10 + i, 3)), 10 + i);
  auto out = table.flush();
  REQUIRE(out.size() == 2);
  CHECK(out[0].sample.key == key_of(1));
  CHECK(out[1].sample.key == key_of(3));
  CHECK(out[0].wire_bytes == 5 * 38);
  CHECK(table.size() == 1);
  CHECK(table.find(key_of(2)) != nullptr);
  CHECK(table.flush().empty());
}

TEST_CASE("eviction uses age since creation") {
  ReprConfig repr;
  FlowTable table(repr);
  table.ingest(anonymize(packet(0, 1)), 0);
  table.ingest(anonymize(packet(1, 1)), 1);
  CHECK(table.evict(9'900'000, 10 * kSec) == 0);
  CHECK(table.size() == 1);
  CHECK(table.evict(10 * kSec, 10 * kSec) == 1);
  CHECK(table.size() == 0);
  CHECK(table.evict(20 * kSec, 10 * kSec) == 0);
}

TEST_CASE("mailbox merges unconsumed batches") {
  BatchMailbox box;
  CHECK_FALSE(box.pending());
  CHECK_ERRC(box.take(), Errc::empty_mailbox);
  std::vector<FlushedFlow> a(2), b(3);
  CHECK_FALSE(box.publish(a, 100));
  CHECK(box.pending());
  CHECK(box.publish(b, 200));
  CHECK(box.sample_size() == 5);
  CHECK(box.merges() == 1);
  auto batch = box.take();
  CHECK(batch.flows.size() == 5);
  CHECK(batch.flushed_at == 200);
  CHECK_FALSE(box.pending());
  CHECK(box.sample_size() == 0);
  CHECK_ERRC(box.take(), Errc::empty_mailbox);
}

TEST_CASE("mailbox hands over across threads") {
  BatchMailbox box;
  std::size_t received = 0;
  std::jthread consumer([&] {
    while (auto b = box.wait_take()) received += b->flows.size();
  });
  for (int i = 0; i < 200; ++i) box.publish(std::vector<FlushedFlow>(3), i);
  box.close();
  consumer.join();
  CHECK(received == 600);
}

TEST_CASE("online samples and logits equal the offline pipeline") {
  ReprConfig repr;
  auto model = small_classifier(repr);
  OnlineConfig cfg{repr};
  for (const char* name : {"golden.pcap", "online.pcap"}) {
    auto records = read_capture_file(kFixtures / name);
    OfflineReference ref(records, repr);
    auto report = replay(records, *model, cfg, ReplayOptions{});
    REQUIRE(report.classified > 0);
    for (const auto& batch : report.results) {
      std::vector<FlowSample> offline;
      for (const auto& s : batch.samples) {
        offline.push_back(ref.sample(s.key, s.first_ts, batch.flows.front().classified_at));
        CHECK(same_sample(s, offline.back()));
      }
      CHECK(predict_logits(*model, offline) == batch.logits);
    }
  }
}

TEST_CASE("short flows are evicted, long ones classified exactly once") {
  ReprConfig repr;
  auto model = small_classifier(repr);
  auto records = read_capture_file(kFixtures / "online.pcap");
  OfflineReference ref(records, repr);
  std::set<FiveTuple> long_flows, short_flows;
  for (const auto& [key, pk] : ref.flows()) (pk.size() >= 5 ? long_flows : short_flows).insert(key);
  REQUIRE(long_flows.size() == 30);
  REQUIRE(short_flows.size() == 12);

  std::ostringstream jsonl;
  ResultStore store(&jsonl);
  auto report = replay(records, *model, OnlineConfig{repr}, ReplayOptions{}, &store);
  std::multiset<FiveTuple> seen;
  for (const auto& f : store.all()) seen.insert(f.key);
  CHECK(seen.size() == 30);
  for (const auto& k : long_flows) CHECK(seen.count(k) == 1);
  CHECK(report.evicted == 12);
  CHECK(report.classified == 30);
  CHECK(report.max_table_size <= 30);
}

TEST_CASE("engine ticks flush then evict on the packet clock") {
  ReprConfig repr;
  std::vector<std::pair<std::size_t, std::int64_t>> published;
  Engine engine(OnlineConfig{repr}, [&](std::vector<FlushedFlow> f, std::int64_t now) {
    published.emplace_back(f.size(), now);
  });
  for (int i = 0; i < 5; ++i) engine.on_packet(packet(i * 100'000, 1));
  engine.on_packet(packet(600'000, 2));
  engine.on_packet(packet(3 * kSec + 1, 3));
  REQUIRE(published.size() == 1);
  CHECK(published[0] == std::pair<std::size_t, std::int64_t>{1, 3 * kSec});
  engine.on_packet(packet(12 * kSec + 1, 4));
  CHECK(engine.table().find(key_of(2)) == nullptr);
  CHECK(engine.evicted() == 1);
  engine.finish();
  CHECK(engine.table().size() == 0);
  CHECK(engine.evicted() == 3);

  PacketRecord arp;
  arp.network = NetworkLayer::other;
  arp.header_bytes.assign(28, 1);
  Engine quiet(OnlineConfig{repr}, [](auto, auto) {});
  quiet.on_packet(arp);
  CHECK(quiet.table().size() == 0);
}

TEST_CASE("replay speed and threading leave classifications unchanged") {
  ReprConfig repr;
  auto model = small_classifier(repr);
  auto records = read_capture_file(kFixtures / "online.pcap");
  OnlineConfig cfg{repr};
  auto base = replay(records, *model, cfg, ReplayOptions{});
  auto fast = replay(records, *model, cfg, ReplayOptions{.speed_factor = 2.0});
  CHECK(fast.simulated_seconds == doctest::Approx(base.simulated_seconds / 2));
  REQUIRE(fast.results.size() == base.results.size());
  for (std::size_t i = 0; i < base.results.size(); ++i) CHECK(fast.results[i].logits == base.results[i].logits);

  auto threaded = replay(records, *model, cfg, ReplayOptions{.speed_factor = 1000.0, .threaded = true});
  std::map<FiveTuple, std::vector<float>> a, b;
  auto collect = [](const ReplayReport& r, auto& out) {
    for (const auto& batch : r.results) {
      std::size_t c = batch.logits.size() / batch.samples.size();
      for (std::size_t i = 0; i < batch.samples.size(); ++i) {
        out[batch.samples[i].key].assign(batch.logits.begin() + i * c, batch.logits.begin() + (i + 1) * c);
      }
    }
  };
  collect(base, a);
  collect(threaded, b);
  CHECK(a == b);
  CHECK(threaded.classified == base.classified);
  CHECK(threaded.evicted == base.evicted);
}

TEST_CASE("result store queries") {
  std::ostringstream jsonl;
  ResultStore store(&jsonl);
  CHECK(store.all().empty());
  CHECK_ERRC(store.latest(key_of(1)), Errc::not_found);
  store.append({key_of(1), 0, 0.9, 10, 0});
  store.append({key_of(2), 1, 0.6, 10, 0});
  store.append({key_of(1), 2, 0.7, 20, 1});
  CHECK(store.latest(key_of(1)).label == 2);
  CHECK(store.size() == 3);
  CHECK(store.page(1, 5).size() == 2);
  CHECK(store.page(5, 5).empty());
  store.add_stats({0, 2, 800, 0.5, 1600.0, 0.01});
  CHECK(store.stats_summary().is_object());

  std::istringstream in(jsonl.str());
  ResultStore loaded;
  load_results(in, loaded);
  REQUIRE(loaded.size() == 3);
  CHECK(loaded.all()[2].key == key_of(1));
  CHECK(loaded.all()[2].score == 0.7);
  CHECK(loaded.latest(key_of(2)).classified_at == 10);
}

TEST_CASE("online config validation") {
  OnlineConfig cfg;
  cfg.flush_period_s = 0;
  CHECK_ERRC(cfg.validate(), Errc::invalid_config);
  ReprConfig repr;
  auto model = small_classifier(repr);
  CHECK_ERRC(replay({}, *model, OnlineConfig{}, ReplayOptions{.speed_factor = 0.0}), Errc::invalid_config);
}
