#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "http_api.hpp"
#include "strider/online.hpp"
#include "support/errc.hpp"

using namespace strider;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run run(const fs::path& dir, const std::string& args) {
  std::string cmd = "cd '" + dir.string() + "' && '" STRIDER_CLI "' " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
  int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("strider_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const char* kConfig = R"({
  "repr": {"header_len": 40, "payload_len": 24},
  "model": {"d_enc": 16, "e_enc": 32, "d_dec": 16, "e_dec": 32, "n_enc_blocks": 1,
            "n_dec_blocks": 1, "n_state": 4, "n_heads": 2, "multimodal": true},
  "pretrain": {"steps": 12, "batch": 16},
  "finetune": {"epochs": 2, "batch": 16}
})";

// Every command of the tool, chained, inside `dir`.
void pipeline(const fs::path& dir, int seed) {
  std::ofstream(dir / "config.json") << kConfig;
  const std::string s = " --seed " + std::to_string(seed);
  const std::vector<std::string> steps{
      "synth --config config.json --out train.jsonl --pcap train.pcap --flows 20,20,20 --seed 3",
      "synth --config config.json --out other.jsonl --flows 15 --seed 4",
      "pretrain --config config.json --data train.jsonl --out pre.ckpt" + s,
      "finetune --init pre.ckpt --data train.jsonl --out ft.ckpt --loss lda" + s,
      "classify --data train.jsonl --model ft.ckpt --out pred.jsonl",
      "ood --id train.jsonl --ood other.jsonl --model ft.ckpt --out roc.csv --metrics ood.json",
      "eval --data train.jsonl --model ft.ckpt --out eval.json --ami ami.csv",
      "serve --pcap train.pcap --model ft.ckpt --results results.jsonl",
      "query --results results.jsonl --all --limit 5",
      "plot --roc roc.csv --out roc.svg",
      "plot --ami ami.csv --out ami.svg",
      "plot --loss pre.ckpt.loss.csv --out loss.svg",
  };
  for (const auto& step : steps) {
    auto r = run(dir, step);
    INFO(step, "\n", r.output);
    REQUIRE(r.code == 0);
  }
}

std::map<std::string, std::string> contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return out;
}

}  // namespace

TEST_CASE("usage errors exit with 2 and a JSON line") {
  auto dir = fresh_dir("usage");
  auto r = run(dir, "");
  CHECK(r.code == 2);
  CHECK(r.output.find("\"error\":\"Usage\"") != std::string::npos);
  CHECK(run(dir, "frobnicate").code == 2);
  CHECK(run(dir, "extract --pcap missing.pcap --out x.jsonl").code == 2);
  CHECK(run(dir, "finetune --data").code == 2);
  CHECK(run(dir, "--help").code == 0);
  fs::remove_all(dir);
}

TEST_CASE("domain errors exit with 1 and their error name") {
  auto dir = fresh_dir("errors");
  std::ofstream(dir / "junk.pcap") << "definitely not a capture file";
  auto r = run(dir, "extract --pcap junk.pcap --out x.jsonl");
  CHECK(r.code == 1);
  CHECK(r.output.find("\"error\":\"MalformedGlobalHeader\"") != std::string::npos);

  std::ofstream(dir / "bad.json") << R"({"model": {"depth": 3}})";
  std::ofstream(dir / "empty.jsonl") << "";
  r = run(dir, "pretrain --config bad.json --data empty.jsonl --out p.ckpt");
  CHECK(r.code == 1);
  CHECK(r.output.find("InvalidConfig") != std::string::npos);

  std::ofstream(dir / "res.jsonl") << "";
  r = run(dir, "query --results res.jsonl --src 1.2.3.4 --dst 5.6.7.8 --sport 1 --dport 2 --proto 6");
  CHECK(r.code == 1);
  CHECK(r.output.find("NotFound") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("same seed, same bytes: every artifact of the pipeline") {
  auto a = fresh_dir("det_a"), b = fresh_dir("det_b"), c = fresh_dir("det_c");
  pipeline(a, 17);
  pipeline(b, 17);
  auto ca = contents(a), cb = contents(b);
  CHECK(ca.size() >= 20);
  for (const auto& [name, bytes] : ca) {
    INFO(name);
    REQUIRE(cb.count(name) == 1);
    CHECK(bytes == cb.at(name));
  }

  pipeline(c, 18);
  auto cc = contents(c);
  CHECK(cc.at("train.jsonl") == ca.at("train.jsonl"));
  CHECK(cc.at("pre.ckpt") != ca.at("pre.ckpt"));

  auto metrics = nlohmann::json::parse(ca.at("ft.ckpt.metrics.json"));
  CHECK(metrics.at("seed") == 17);
  CHECK(metrics.at("config").at("paths").at("init") == "pre.ckpt");
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST_CASE("HTTP query API") {
  ResultStore store;
  FiveTuple key;
  key.src_ip = parse_ip("10.0.0.1");
  key.dst_ip = parse_ip("10.0.0.2");
  key.src_port = 1234;
  key.dst_port = 443;
  key.protocol = 6;
  store.append({key, 1, 0.875, 3'000'000, 0});
  store.add_stats({0, 1, 4096, 0.002, 2048000.0, 0.003});
  tools::QueryServer server(store, "127.0.0.1", 0);
  REQUIRE(server.port() > 0);
  const std::string base = "http://127.0.0.1:" + std::to_string(server.port());

  auto one = nlohmann::json::parse(
      tools::http_get(base, "/flows?src=10.0.0.1&dst=10.0.0.2&sport=1234&dport=443&proto=6"));
  CHECK(one.at("label") == 1);
  CHECK(one.at("score") == 0.875);
  auto all = nlohmann::json::parse(tools::http_get(base, "/flows/all?offset=0&limit=10"));
  CHECK(all.at("flows").size() == 1);
  auto stats = nlohmann::json::parse(tools::http_get(base, "/stats"));
  CHECK(stats.is_object());
  CHECK_ERRC(tools::http_get(base, "/flows?src=10.0.0.9&dst=10.0.0.2&sport=1&dport=443&proto=6"),
             Errc::not_found);
  server.stop();
}
