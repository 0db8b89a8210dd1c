#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "strider/error.hpp"

namespace {

void error_line(const std::string& code, const std::string& message) {
  std::cerr << nlohmann::json{{"error", code}, {"message", message}}.dump() << std::endl;
}

void add_overrides(CLI::App* cmd, strider::tools::Overrides& o) {
  cmd->add_option("--config", o.config, "RunConfig JSON file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--kind", o.kind, "Block kind: mamba or trans");
  cmd->add_option("--multimodal", o.multimodal, "Use size and interval tokens (true/false)");
  cmd->add_option("--steps", o.steps, "Pre-training steps");
  cmd->add_option("--epochs", o.epochs, "Fine-tuning epochs");
  cmd->add_option("--batch", o.batch, "Batch size");
  cmd->add_option("--lr", o.lr, "Peak learning rate");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace strider::tools;
  CLI::App app{"strider: flow representation learning and classification for encrypted traffic"};
  app.require_subcommand(1);

  ExtractOpts ex;
  auto* extract = app.add_subcommand("extract", "Turn a pcap into a FlowSample file");
  extract->add_option("--pcap", ex.pcap, "Input capture")->required()->check(CLI::ExistingFile);
  extract->add_option("--out", ex.out, "Output JSONL")->required();
  extract->add_option("--label", ex.label, "Label attached to every flow");
  extract->add_option("--config", ex.config, "RunConfig JSON file")->check(CLI::ExistingFile);

  SynthOpts sy;
  auto* synth = app.add_subcommand("synth", "Generate a labelled synthetic corpus");
  synth->add_option("--out", sy.out, "Output FlowSample JSONL")->required();
  synth->add_option("--pcap", sy.pcap, "Also write the packets as a pcap");
  synth->add_option("--flows", sy.flows, "Flows per class")->delimiter(',');
  synth->add_option("--blend", sy.blend, "Extra class mixing classes a and b: a,b,flows")->delimiter(',');
  synth->add_option("--separation", sy.separation, "Share of class-specific template features");
  synth->add_option("--noise", sy.noise, "Per-byte noise probability");
  synth->add_option("--short-fraction", sy.short_fraction, "Share of flows with fewer than 5 packets");
  synth->add_option("--min-packets", sy.min_packets);
  synth->add_option("--max-packets", sy.max_packets);
  synth->add_option("--duration", sy.duration, "Seconds over which flows start");
  synth->add_option("--interval-scale", sy.interval_scale, "Multiplier on inter-arrival times");
  synth->add_option("--seed", sy.seed);
  synth->add_option("--config", sy.config, "RunConfig JSON file (representation)")->check(CLI::ExistingFile);

  PretrainOpts pt;
  auto* pretrain = app.add_subcommand("pretrain", "Masked reconstruction pre-training");
  pretrain->add_option("--data", pt.data, "FlowSample JSONL")->required()->check(CLI::ExistingFile);
  pretrain->add_option("--out", pt.out, "Checkpoint path")->required();
  add_overrides(pretrain, pt.o);

  FinetuneOpts ft;
  auto* finetune = app.add_subcommand("finetune", "Supervised fine-tuning");
  finetune->add_option("--data", ft.data, "Labelled FlowSample JSONL")->required()->check(CLI::ExistingFile);
  finetune->add_option("--out", ft.out, "Checkpoint path")->required();
  finetune->add_option("--init", ft.init, "Pre-trained checkpoint")->check(CLI::ExistingFile);
  finetune->add_option("--loss", ft.loss, "ce or lda");
  finetune->add_option("--beta", ft.beta, "Class-balance beta");
  finetune->add_option("--margin-c", ft.margin_c, "Margin scale C");
  finetune->add_option("--few-shot", ft.few_shot, "Fraction of the training split kept per class");
  finetune->add_option("--target-val", ft.target_val, "Stop once validation accuracy reaches this");
  finetune->add_option("--split-mode", ft.split_mode, "random or time");
  finetune->add_option("--classes", ft.classes, "Number of classes (default: from labels)");
  add_overrides(finetune, ft.o);

  ClassifyOpts cl;
  auto* classify = app.add_subcommand("classify", "Offline classification of a FlowSample file");
  classify->add_option("--data", cl.data)->required()->check(CLI::ExistingFile);
  classify->add_option("--model", cl.model)->required()->check(CLI::ExistingFile);
  classify->add_option("--out", cl.out, "Predictions JSONL")->required();

  OodOpts oo;
  auto* ood = app.add_subcommand("ood", "Entropy-based out-of-distribution evaluation");
  ood->add_option("--id", oo.id, "In-distribution FlowSample JSONL")->required()->check(CLI::ExistingFile);
  ood->add_option("--ood", oo.ood, "Out-of-distribution FlowSample JSONL")->required()->check(CLI::ExistingFile);
  ood->add_option("--model", oo.model)->required()->check(CLI::ExistingFile);
  ood->add_option("--tau", oo.tau, "Softmax temperature");
  ood->add_option("--threshold", oo.threshold, "Decision threshold s");
  ood->add_option("--out", oo.out, "ROC points CSV")->required();
  ood->add_option("--metrics", oo.metrics, "Metrics JSON");

  EvalOpts ev;
  auto* eval = app.add_subcommand("eval", "Classification metrics and AMI stride analysis");
  eval->add_option("--data", ev.data)->required()->check(CLI::ExistingFile);
  eval->add_option("--model", ev.model)->check(CLI::ExistingFile);
  eval->add_option("--out", ev.out, "Metrics JSON");
  eval->add_option("--ami", ev.ami, "AMI grid CSV");
  eval->add_option("--config", ev.config)->check(CLI::ExistingFile);

  ServeOpts sv;
  auto* serve = app.add_subcommand("serve", "Replay a pcap through the online engine");
  serve->add_option("--pcap", sv.pcap)->required()->check(CLI::ExistingFile);
  serve->add_option("--model", sv.model)->required()->check(CLI::ExistingFile);
  serve->add_option("--wg", sv.wg, "Flush period in seconds");
  serve->add_option("--wr", sv.wr, "Eviction window in seconds");
  serve->add_option("--speed", sv.speed, "Replay speed factor");
  serve->add_option("--results", sv.results, "Result JSONL")->required();
  serve->add_option("--stats", sv.stats, "Per-batch throughput/latency CSV");
  serve->add_flag("--threaded", sv.threaded, "Feeder, table and classifier on separate threads, paced in real time");
  serve->add_option("--http-port", sv.http_port, "Serve the query API on this port (0 = any)");
  serve->add_option("--host", sv.host, "HTTP bind address");
  serve->add_option("--linger", sv.linger, "Keep the HTTP API up this many seconds after the replay");

  QueryOpts qu;
  auto* query = app.add_subcommand("query", "Look up classification results");
  query->add_option("--results", qu.results, "Result JSONL")->check(CLI::ExistingFile);
  query->add_option("--url", qu.url, "Base URL of a running serve, e.g. http://127.0.0.1:8080");
  query->add_option("--src", qu.src);
  query->add_option("--dst", qu.dst);
  query->add_option("--sport", qu.sport);
  query->add_option("--dport", qu.dport);
  query->add_option("--proto", qu.proto);
  query->add_flag("--all", qu.all, "List all results");
  query->add_flag("--stats", qu.stats, "Batch statistics summary");
  query->add_option("--offset", qu.offset);
  query->add_option("--limit", qu.limit);

  PlotOpts pl;
  auto* plot = app.add_subcommand("plot", "Render CSV outputs as SVG");
  plot->add_option("--cdf", pl.cdf, "Batch stats CSV from serve")->check(CLI::ExistingFile);
  plot->add_option("--roc", pl.roc, "ROC CSV from ood")->check(CLI::ExistingFile);
  plot->add_option("--ami", pl.ami, "AMI grid CSV from eval")->check(CLI::ExistingFile);
  plot->add_option("--loss", pl.loss, "Loss CSV from pretrain")->check(CLI::ExistingFile);
  plot->add_option("--out", pl.out, "SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    error_line("Usage", e.what());
    return 2;
  }

  try {
    if (*extract) return run_extract(ex);
    if (*synth) return run_synth(sy);
    if (*pretrain) return run_pretrain(pt);
    if (*finetune) return run_finetune(ft);
    if (*classify) return run_classify(cl);
    if (*ood) return run_ood(oo);
    if (*eval) return run_eval(ev);
    if (*serve) return run_serve(sv);
    if (*query) return run_query(qu);
    if (*plot) return run_plot(pl);
  } catch (const strider::Error& e) {
    error_line(std::string(strider::errc_name(e.code())), e.what());
    return 1;
  } catch (const std::exception& e) {
    error_line("Internal", e.what());
    return 1;
  }
  return 2;
}
