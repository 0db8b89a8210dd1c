#pragma once

#include <optional>
#include <string>
#include <vector>

namespace strider::tools {

// Options shared by the training commands. Unset optionals leave the value
// from the config file (or the default) alone.
struct Overrides {
  std::optional<std::string> config;
  std::optional<unsigned long long> seed;
  std::optional<std::string> kind;
  std::optional<bool> multimodal;
  std::optional<int> steps;
  std::optional<int> epochs;
  std::optional<int> batch;
  std::optional<double> lr;
};

struct ExtractOpts {
  std::string pcap, out;
  std::optional<int> label;
  std::optional<std::string> config;
};

struct SynthOpts {
  std::string out;
  std::optional<std::string> pcap;
  std::vector<int> flows{700, 700, 700};
  std::vector<int> blend;  // a, b, flows
  double separation = 1.0;
  double noise = 0.1;
  double short_fraction = 0.0;
  int min_packets = 5;
  int max_packets = 24;
  double duration = 60.0;
  double interval_scale = 1.0;
  unsigned long long seed = 0;
  std::optional<std::string> config;
};

struct PretrainOpts {
  std::string data, out;
  Overrides o;
};

struct FinetuneOpts {
  std::string data, out;
  std::optional<std::string> init;
  std::optional<std::string> loss;
  std::optional<double> beta, margin_c, few_shot, target_val;
  std::optional<std::string> split_mode;
  std::optional<int> classes;
  Overrides o;
};

struct ClassifyOpts {
  std::string data, model, out;
};

struct OodOpts {
  std::string id, ood, model, out;
  std::optional<double> tau, threshold;
  std::optional<std::string> metrics;
};

struct EvalOpts {
  std::string data;
  std::optional<std::string> model, out, ami, config;
};

struct ServeOpts {
  std::string pcap, model, results;
  std::optional<double> wg, wr, speed;
  std::optional<std::string> stats;
  bool threaded = false;
  std::optional<int> http_port;
  std::string host = "127.0.0.1";
  double linger = 0.0;
};

struct QueryOpts {
  std::optional<std::string> results, url;
  std::optional<std::string> src, dst;
  std::optional<int> sport, dport, proto;
  bool all = false;
  bool stats = false;
  std::size_t offset = 0, limit = 100;
};

struct PlotOpts {
  std::optional<std::string> cdf, roc, ami, loss;
  std::string out;
};

int run_extract(const ExtractOpts& o);
int run_synth(const SynthOpts& o);
int run_pretrain(const PretrainOpts& o);
int run_finetune(const FinetuneOpts& o);
int run_classify(const ClassifyOpts& o);
int run_ood(const OodOpts& o);
int run_eval(const EvalOpts& o);
int run_serve(const ServeOpts& o);
int run_query(const QueryOpts& o);
int run_plot(const PlotOpts& o);

}  // namespace strider::tools
