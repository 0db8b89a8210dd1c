#include "commands.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <thread>

#include "http_api.hpp"
#include "svg.hpp"
#include "strider/checkpoint.hpp"
#include "strider/error.hpp"
#include "strider/finetune.hpp"
#include "strider/metrics.hpp"
#include "strider/online.hpp"
#include "strider/pretrain.hpp"
#include "strider/run_config.hpp"
#include "strider/synth.hpp"

namespace strider::tools {

namespace {

using json = nlohmann::json;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, path + ": " + e.what());
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw Error(Errc::io_error, "failed writing " + path.string());
}

void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string sidecar(const std::string& path) { return path + ".json"; }

void apply_overrides(RunConfig& cfg, const Overrides& o) {
  if (o.config) apply_json(cfg, read_json_file(*o.config));
  if (o.seed) cfg.seed = *o.seed;
  if (o.kind) cfg.model.kind = parse_block_kind(*o.kind);
  if (o.multimodal) cfg.model.multimodal = *o.multimodal;
  if (o.steps) cfg.pretrain.steps = *o.steps;
  if (o.epochs) cfg.finetune.train.epochs = *o.epochs;
  if (o.batch) {
    cfg.pretrain.batch = *o.batch;
    cfg.finetune.train.batch = *o.batch;
  }
  if (o.lr) {
    cfg.pretrain.lr = *o.lr;
    cfg.finetune.train.lr = *o.lr;
  }
}

int count_classes(std::span<const FlowSample> samples) {
  int n = 0;
  for (const auto& s : samples) {
    if (!s.label) throw Error(Errc::label_out_of_range, "unlabelled sample in training data");
    n = std::max(n, *s.label + 1);
  }
  return n;
}

json metrics_json(const ClassificationMetrics& m) {
  return {{"accuracy", m.accuracy},
          {"macro_precision", m.macro_precision},
          {"macro_recall", m.macro_recall},
          {"weighted_f1", m.weighted_f1},
          {"recall", m.recall},
          {"confusion", m.confusion}};
}

ClassificationMetrics score(const Model<float>& model, std::span<const FlowSample> samples, int n_classes) {
  auto preds = predict(model, samples);
  std::vector<int> y_true, y_pred;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].label) throw Error(Errc::label_out_of_range, "evaluation sample without label");
    y_true.push_back(*samples[i].label);
    y_pred.push_back(preds[i].label);
  }
  return classification_metrics(y_true, y_pred, n_classes);
}

std::vector<double> ood_scores(const Model<float>& model, std::span<const FlowSample> samples, double tau) {
  const auto c = static_cast<std::size_t>(model.parts().n_classes);
  auto logits = predict_logits(model, samples);
  std::vector<double> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::vector<double> z(logits.begin() + static_cast<std::ptrdiff_t>(i * c),
                          logits.begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
    out.push_back(ood_score(z, tau));
  }
  return out;
}

}  // namespace

int run_extract(const ExtractOpts& o) {
  RunConfig cfg;
  if (o.config) apply_json(cfg, read_json_file(*o.config));
  cfg.resolve();
  auto samples = extract_flow_samples(read_capture_file(o.pcap), cfg.repr);
  if (o.label) {
    for (auto& s : samples) s.label = *o.label;
  }
  write_flow_samples(std::filesystem::path(o.out), samples);
  std::cout << json{{"flows", samples.size()}}.dump() << '\n';
  return 0;
}

int run_synth(const SynthOpts& o) {
  RunConfig cfg;
  if (o.config) apply_json(cfg, read_json_file(*o.config));
  cfg.resolve();
  SynthConfig sc;
  sc.classes.clear();
  for (int n : o.flows) sc.classes.push_back({n});
  if (!o.blend.empty()) {
    if (o.blend.size() != 3) throw Error(Errc::invalid_config, "--blend takes a,b,flows");
    sc.classes.push_back({o.blend[2], o.blend[0], o.blend[1]});
  }
  sc.separation = o.separation;
  sc.byte_noise = o.noise;
  sc.short_flow_fraction = o.short_fraction;
  sc.min_packets = o.min_packets;
  sc.max_packets = o.max_packets;
  sc.duration_s = o.duration;
  sc.interval_scale = o.interval_scale;
  sc.seed = o.seed;
  auto corpus = synth_corpus(sc);
  if (o.pcap) write_capture_file(*o.pcap, corpus.packets);
  auto samples = attach_labels(extract_flow_samples(corpus.packets, cfg.repr), corpus.labels);
  write_flow_samples(std::filesystem::path(o.out), samples);
  std::cout << json{{"flows", samples.size()}, {"packets", corpus.packets.size()}}.dump() << '\n';
  return 0;
}

int run_pretrain(const PretrainOpts& o) {
  RunConfig cfg;
  apply_overrides(cfg, o.o);
  cfg.paths["data"] = o.data;
  cfg.resolve();
  auto data = read_flow_samples(std::filesystem::path(o.data), cfg.repr);
  Model<float> model(cfg.model, cfg.seed, {true, 0});
  auto log = pretrain_loop(model, data, cfg.pretrain);
  {
    auto out = open_out(o.out + ".loss.csv");
    write_loss_csv(out, log);
  }
  json summary = {{"steps", log.size()}};
  if (!log.empty()) {
    summary["first_loss"] = log.front().total;
    summary["final_loss"] = log.back().total;
  }
  save_model(o.out, model, cfg, "pretrain", {{"summary", summary}});
  std::cout << summary.dump() << '\n';
  return 0;
}

int run_finetune(const FinetuneOpts& o) {
  RunConfig cfg;
  if (o.init) {
    auto meta = read_manifest(*o.init);
    if (!meta.contains("config")) throw Error(Errc::parse_error, "init checkpoint has no config");
    apply_json(cfg, {{"repr", meta["config"].at("repr")}, {"model", meta["config"].at("model")}});
    cfg.paths["init"] = *o.init;
  }
  apply_overrides(cfg, o.o);
  if (o.loss) cfg.finetune.loss = parse_loss_kind(*o.loss);
  if (o.beta) cfg.finetune.beta = *o.beta;
  if (o.margin_c) cfg.finetune.margin_c = *o.margin_c;
  if (o.few_shot) cfg.few_shot_fraction = *o.few_shot;
  if (o.target_val) cfg.finetune.train.target_val_accuracy = *o.target_val;
  if (o.split_mode) apply_json(cfg, {{"split", {{"mode", *o.split_mode}}}});
  cfg.paths["data"] = o.data;
  cfg.resolve();

  auto data = read_flow_samples(std::filesystem::path(o.data), cfg.repr);
  const int n_classes = o.classes ? *o.classes : count_classes(data);
  auto parts = split(data, cfg.split);
  auto train = cfg.few_shot_fraction < 1.0
                   ? few_shot_subsample(parts.train, cfg.few_shot_fraction, cfg.seed)
                   : std::move(parts.train);
  Model<float> model(cfg.model, cfg.seed, {false, n_classes});
  if (o.init) load_checkpoint(*o.init, model.params());
  auto result = finetune_loop(model, train, parts.val, cfg.finetune);
  auto test = score(model, parts.test, n_classes);

  json epochs = json::array();
  for (const auto& e : result.log) {
    epochs.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}, {"val_accuracy", e.val_accuracy}});
  }
  json metrics = provenance(cfg, "finetune");
  metrics["n_classes"] = n_classes;
  metrics["split_sizes"] = {{"train", train.size()}, {"val", parts.val.size()}, {"test", parts.test.size()}};
  metrics["histogram"] = result.histogram;
  metrics["margin_c"] = result.margin_c;
  metrics["best_epoch"] = result.best_epoch;
  metrics["best_val_accuracy"] = result.best_val_accuracy;
  metrics["epochs"] = epochs;
  metrics["test"] = metrics_json(test);
  save_model(o.out, model, cfg, "finetune", {{"best_epoch", result.best_epoch}});
  write_json(o.out + ".metrics.json", metrics);
  std::cout << json{{"best_epoch", result.best_epoch},
                    {"best_val_accuracy", result.best_val_accuracy},
                    {"test_accuracy", test.accuracy},
                    {"test_weighted_f1", test.weighted_f1}}
                   .dump()
            << '\n';
  return 0;
}

int run_classify(const ClassifyOpts& o) {
  auto loaded = load_model(o.model);
  auto& cfg = loaded.config;
  cfg.paths["data"] = o.data;
  cfg.paths["model"] = o.model;
  auto data = read_flow_samples(std::filesystem::path(o.data), cfg.repr);
  const auto c = static_cast<std::size_t>(loaded.model->parts().n_classes);
  auto logits = predict_logits(*loaded.model, data);
  auto out = open_out(o.out);
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::span<const float> z(logits.data() + i * c, c);
    auto p = predict_one(z);
    json line = {{"key", key_to_json(data[i].key)},
                 {"label", p.label},
                 {"score", p.score},
                 {"logits", std::vector<float>(z.begin(), z.end())},
                 {"true_label", data[i].label ? json(*data[i].label) : json(nullptr)}};
    out << line.dump() << '\n';
  }
  write_json(sidecar(o.out), provenance(cfg, "classify"));
  std::cout << json{{"flows", data.size()}}.dump() << '\n';
  return 0;
}

int run_ood(const OodOpts& o) {
  auto loaded = load_model(o.model);
  auto& cfg = loaded.config;
  if (o.tau) cfg.ood.tau = *o.tau;
  if (o.threshold) cfg.ood.threshold = *o.threshold;
  cfg.paths["model"] = o.model;
  cfg.paths["id"] = o.id;
  cfg.paths["ood"] = o.ood;
  cfg.resolve();
  auto id = read_flow_samples(std::filesystem::path(o.id), cfg.repr);
  auto ood = read_flow_samples(std::filesystem::path(o.ood), cfg.repr);
  auto s_id = ood_scores(*loaded.model, id, cfg.ood.tau);
  auto s_ood = ood_scores(*loaded.model, ood, cfg.ood.tau);
  auto roc = roc_curve(s_id, s_ood);
  {
    auto out = open_out(o.out);
    write_roc_csv(out, roc);
  }
  auto flagged = [&](const std::vector<double>& s) {
    std::size_t n = 0;
    for (double v : s) n += static_cast<std::size_t>(ood_decide(v, cfg.ood.threshold));
    return static_cast<double>(n) / static_cast<double>(std::max<std::size_t>(s.size(), 1));
  };
  json m = provenance(cfg, "ood");
  m["auroc"] = auroc(s_id, s_ood);
  m["fpr95"] = fpr_at_95_tpr(s_id, s_ood);
  m["n_id"] = id.size();
  m["n_ood"] = ood.size();
  m["id_flagged_rate"] = flagged(s_id);
  m["ood_flagged_rate"] = flagged(s_ood);
  if (o.metrics) write_json(*o.metrics, m);
  std::cout << json{{"auroc", m["auroc"]}, {"fpr95", m["fpr95"]}}.dump() << '\n';
  return 0;
}

int run_eval(const EvalOpts& o) {
  if (!o.ami && !(o.model && o.out)) {
    throw Error(Errc::invalid_config, "eval needs --model with --out, or --ami");
  }
  json summary;
  if (o.model && o.out) {
    auto loaded = load_model(*o.model);
    auto& cfg = loaded.config;
    cfg.paths["model"] = *o.model;
    cfg.paths["data"] = o.data;
    auto data = read_flow_samples(std::filesystem::path(o.data), cfg.repr);
    auto m = score(*loaded.model, data, loaded.model->parts().n_classes);
    json j = provenance(cfg, "eval");
    j["metrics"] = metrics_json(m);
    write_json(*o.out, j);
    summary["accuracy"] = m.accuracy;
    summary["weighted_f1"] = m.weighted_f1;
  }
  if (o.ami) {
    RunConfig cfg;
    if (o.config) apply_json(cfg, read_json_file(*o.config));
    else if (o.model) cfg = load_model(*o.model).config;
    cfg.resolve();
    auto data = read_flow_samples(std::filesystem::path(o.data), cfg.repr);
    auto grid = ami_stride_scores(data, cfg.repr);
    auto out = open_out(*o.ami);
    write_ami_csv(out, grid);
    summary["ami_positions"] = grid.packets * (grid.header_positions + grid.payload_positions);
  }
  std::cout << summary.dump() << '\n';
  return 0;
}

int run_serve(const ServeOpts& o) {
  auto loaded = load_model(o.model);
  auto& cfg = loaded.config;
  if (o.wg) cfg.flush_period_s = *o.wg;
  if (o.wr) cfg.evict_after_s = *o.wr;
  if (o.speed) cfg.speed_factor = *o.speed;
  cfg.paths["model"] = o.model;
  cfg.paths["pcap"] = o.pcap;
  cfg.resolve();
  auto records = read_capture_file(o.pcap);
  auto out = open_out(o.results);
  ResultStore store(&out);
  std::unique_ptr<QueryServer> server;
  if (o.http_port) {
    server = std::make_unique<QueryServer>(store, o.host, *o.http_port);
    std::cerr << json{{"listening", o.host + ":" + std::to_string(server->port())}}.dump() << std::endl;
  }
  ReplayOptions ro;
  ro.speed_factor = cfg.speed_factor;
  ro.threaded = o.threaded;
  auto report = replay(records, *loaded.model, cfg.online(), ro, &store);
  out.flush();
  write_json(sidecar(o.results), provenance(cfg, "serve"));
  if (o.stats) {
    auto s = open_out(*o.stats);
    write_stats_csv(s, store.stats());
  }
  std::cout << json{{"packets", report.packets},
                    {"classified", report.classified},
                    {"evicted", report.evicted},
                    {"batches", report.batches},
                    {"merges", report.merges},
                    {"max_table_size", report.max_table_size},
                    {"simulated_seconds", report.simulated_seconds}}
                   .dump()
            << std::endl;
  if (server && o.linger > 0) {
    std::this_thread::sleep_for(std::chrono::duration<double>(o.linger));
  }
  return 0;
}

int run_query(const QueryOpts& o) {
  if (o.results.has_value() == o.url.has_value()) {
    throw Error(Errc::invalid_config, "query needs exactly one of --results or --url");
  }
  const bool by_key = o.src || o.dst || o.sport || o.dport || o.proto;
  if (static_cast<int>(by_key) + static_cast<int>(o.all) + static_cast<int>(o.stats) != 1) {
    throw Error(Errc::invalid_config, "query needs a flow key, --all or --stats");
  }
  if (by_key && !(o.src && o.dst && o.sport && o.dport && o.proto)) {
    throw Error(Errc::invalid_config, "a flow key needs --src, --dst, --sport, --dport and --proto");
  }
  if (o.url) {
    std::string path;
    if (o.stats) {
      path = "/stats";
    } else if (o.all) {
      path = "/flows/all?offset=" + std::to_string(o.offset) + "&limit=" + std::to_string(o.limit);
    } else {
      path = "/flows?src=" + *o.src + "&dst=" + *o.dst + "&sport=" + std::to_string(*o.sport) +
             "&dport=" + std::to_string(*o.dport) + "&proto=" + std::to_string(*o.proto);
    }
    std::cout << http_get(*o.url, path) << '\n';
    return 0;
  }
  std::ifstream in(*o.results);
  if (!in) throw Error(Errc::io_error, "cannot open " + *o.results);
  ResultStore store;
  load_results(in, store);
  if (o.stats) {
    std::cout << store.stats_summary().dump() << '\n';
  } else if (o.all) {
    json items = json::array();
    for (const auto& f : store.page(o.offset, o.limit)) items.push_back(to_json(f));
    std::cout << json{{"offset", o.offset}, {"limit", o.limit}, {"total", store.size()}, {"flows", items}}.dump()
              << '\n';
  } else {
    FiveTuple key;
    key.src_ip = parse_ip(*o.src);
    key.dst_ip = parse_ip(*o.dst);
    if (*o.sport < 0 || *o.sport > 65535 || *o.dport < 0 || *o.dport > 65535 || *o.proto < 0 || *o.proto > 255) {
      throw Error(Errc::invalid_config, "port or protocol out of range");
    }
    key.src_port = static_cast<std::uint16_t>(*o.sport);
    key.dst_port = static_cast<std::uint16_t>(*o.dport);
    key.protocol = static_cast<std::uint8_t>(*o.proto);
    std::cout << to_json(store.latest(key)).dump() << '\n';
  }
  return 0;
}

int run_plot(const PlotOpts& o) {
  const int chosen = static_cast<int>(o.cdf.has_value()) + static_cast<int>(o.roc.has_value()) +
                     static_cast<int>(o.ami.has_value()) + static_cast<int>(o.loss.has_value());
  if (chosen != 1) throw Error(Errc::invalid_config, "plot needs exactly one of --cdf, --roc, --ami, --loss");
  std::string svg;
  if (o.cdf) {
    auto csv = read_csv(*o.cdf);
    auto thr = csv.column("throughput_bps");
    for (auto& v : thr) v /= 1e6;
    auto lat = csv.column("latency_seconds");
    for (auto& v : lat) v *= 1e3;
    svg = render_lines({Panel{"Batch inference throughput", "throughput (Mb/s)", "CDF", {empirical_cdf("throughput", thr)}, true},
                        Panel{"Batch inference latency", "latency (ms)", "CDF", {empirical_cdf("latency", lat)}, true}});
  } else if (o.roc) {
    auto csv = read_csv(*o.roc);
    svg = render_lines({Panel{"ROC (OOD positive)", "false positive rate", "true positive rate",
                              {Series{"roc", csv.column("fpr"), csv.column("tpr")}}, true}});
  } else if (o.loss) {
    auto csv = read_csv(*o.loss);
    auto step = csv.column("step");
    Panel p{"Pre-training loss", "step", "loss", {}, false};
    for (const char* name : {"total", "stride", "size", "interval"}) p.series.push_back({name, step, csv.column(name)});
    svg = render_lines({p});
  } else {
    auto csv = read_csv(*o.ami);
    auto packet = csv.column("packet");
    auto part = csv.text_column("part");
    auto value = csv.column("ami");
    std::vector<std::string> names;
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const std::string name = "packet " + std::to_string(static_cast<int>(packet[i]) + 1) + " " + part[i];
      if (names.empty() || names.back() != name) {
        names.push_back(name);
        rows.emplace_back();
      }
      rows.back().push_back(value[i]);
    }
    svg = render_heatmap("AMI per 2-byte stride", names, rows);
  }
  write_text(o.out, svg);
  return 0;
}

}  // namespace strider::tools
