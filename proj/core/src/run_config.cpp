#include "strider/run_config.hpp"

#include <fstream>
#include <functional>
#include <set>

#include "strider/checkpoint.hpp"
#include "strider/error.hpp"

namespace strider {

namespace {

using json = nlohmann::json;
using Field = std::function<void(const json&)>;

template <typename T>
Field set(T& target) {
  return [&target](const json& v) { target = v.get<T>(); };
}

void read_section(const json& j, const std::string& where, const std::map<std::string, Field>& fields) {
  if (!j.is_object()) throw Error(Errc::invalid_config, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) throw Error(Errc::invalid_config, "unknown config key " + where + "." + key);
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw Error(Errc::invalid_config, "bad value for " + where + "." + key + ": " + e.what());
    }
  }
}

const std::set<std::string>& path_keys() {
  static const std::set<std::string> keys{"config", "data", "init", "out", "model", "pcap",
                                          "results", "id", "ood"};
  return keys;
}

}  // namespace

void RunConfig::resolve() {
  repr.validate();
  model.match(repr);
  model.validate();
  pretrain.seed = seed;
  finetune.train.seed = seed;
  split.seed = seed;
  online().validate();
  if (!(ood.tau > 0.0)) throw Error(Errc::invalid_config, "ood.tau must be > 0");
  if (!(few_shot_fraction > 0.0 && few_shot_fraction <= 1.0)) {
    throw Error(Errc::invalid_config, "split.few_shot_fraction must lie in (0, 1]");
  }
  if (!(speed_factor > 0.0)) throw Error(Errc::invalid_config, "online.speed_factor must be > 0");
  if (!(finetune.beta >= 0.0 && finetune.beta < 1.0)) {
    throw Error(Errc::invalid_config, "finetune.beta must lie in [0, 1)");
  }
  if (finetune.margin_c && !(*finetune.margin_c >= 0.0)) {
    throw Error(Errc::invalid_config, "finetune.margin_c must be >= 0");
  }
}

OnlineConfig RunConfig::online() const {
  OnlineConfig o;
  o.repr = repr;
  o.flush_period_s = flush_period_s;
  o.evict_after_s = evict_after_s;
  return o;
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["repr"] = {{"packets_for_bytes", c.repr.packets_for_bytes},
               {"header_len", c.repr.header_len},
               {"payload_len", c.repr.payload_len},
               {"stride_len", c.repr.stride_len},
               {"packets_for_sequences", c.repr.packets_for_sequences},
               {"mtu", c.repr.mtu}};
  const auto& m = c.model;
  j["model"] = {{"kind", std::string(to_string(m.kind))},
                {"multimodal", m.multimodal},
                {"d_enc", m.d_enc},
                {"e_enc", m.e_enc},
                {"n_enc_blocks", m.n_enc_blocks},
                {"d_dec", m.d_dec},
                {"e_dec", m.e_dec},
                {"n_dec_blocks", m.n_dec_blocks},
                {"n_state", m.n_state},
                {"n_heads", m.n_heads},
                {"conv_width", m.conv_width},
                {"attn_tile", m.attn_tile},
                {"mask_ratio_stride", m.mask_ratio_stride},
                {"mask_ratio_seq", m.mask_ratio_seq}};
  j["pretrain"] = {{"steps", c.pretrain.steps},
                   {"batch", c.pretrain.batch},
                   {"lr", c.pretrain.lr},
                   {"warmup_fraction", c.pretrain.warmup_fraction},
                   {"weight_decay", c.pretrain.weight_decay}};
  const auto& f = c.finetune;
  j["finetune"] = {{"epochs", f.train.epochs},
                   {"batch", f.train.batch},
                   {"lr", f.train.lr},
                   {"warmup_fraction", f.train.warmup_fraction},
                   {"weight_decay", f.train.weight_decay},
                   {"target_val_accuracy", f.train.target_val_accuracy},
                   {"loss", std::string(to_string(f.loss))},
                   {"beta", f.beta},
                   {"margin_c", f.margin_c ? json(*f.margin_c) : json(nullptr)}};
  j["ood"] = {{"tau", c.ood.tau}, {"threshold", c.ood.threshold}};
  j["split"] = {{"train", c.split.train},
                {"val", c.split.val},
                {"test", c.split.test},
                {"per_class_cap", c.split.per_class_cap},
                {"mode", c.split.mode == SplitMode::random ? "random" : "time"},
                {"few_shot_fraction", c.few_shot_fraction}};
  j["online"] = {{"flush_period_s", c.flush_period_s},
                 {"evict_after_s", c.evict_after_s},
                 {"speed_factor", c.speed_factor}};
  j["paths"] = c.paths;
  return j;
}

void apply_json(RunConfig& c, const json& j) {
  auto& m = c.model;
  auto& f = c.finetune;
  read_section(j, "config", {
      {"seed", set(c.seed)},
      {"repr", [&](const json& v) {
         read_section(v, "repr", {{"packets_for_bytes", set(c.repr.packets_for_bytes)},
                                  {"header_len", set(c.repr.header_len)},
                                  {"payload_len", set(c.repr.payload_len)},
                                  {"stride_len", set(c.repr.stride_len)},
                                  {"packets_for_sequences", set(c.repr.packets_for_sequences)},
                                  {"mtu", set(c.repr.mtu)}});
       }},
      {"model", [&](const json& v) {
         read_section(v, "model", {{"kind", [&](const json& x) { m.kind = parse_block_kind(x.get<std::string>()); }},
                                   {"multimodal", set(m.multimodal)},
                                   {"d_enc", set(m.d_enc)},
                                   {"e_enc", set(m.e_enc)},
                                   {"n_enc_blocks", set(m.n_enc_blocks)},
                                   {"d_dec", set(m.d_dec)},
                                   {"e_dec", set(m.e_dec)},
                                   {"n_dec_blocks", set(m.n_dec_blocks)},
                                   {"n_state", set(m.n_state)},
                                   {"n_heads", set(m.n_heads)},
                                   {"conv_width", set(m.conv_width)},
                                   {"attn_tile", set(m.attn_tile)},
                                   {"mask_ratio_stride", set(m.mask_ratio_stride)},
                                   {"mask_ratio_seq", set(m.mask_ratio_seq)}});
       }},
      {"pretrain", [&](const json& v) {
         read_section(v, "pretrain", {{"steps", set(c.pretrain.steps)},
                                      {"batch", set(c.pretrain.batch)},
                                      {"lr", set(c.pretrain.lr)},
                                      {"warmup_fraction", set(c.pretrain.warmup_fraction)},
                                      {"weight_decay", set(c.pretrain.weight_decay)}});
       }},
      {"finetune", [&](const json& v) {
         read_section(v, "finetune", {{"epochs", set(f.train.epochs)},
                                      {"batch", set(f.train.batch)},
                                      {"lr", set(f.train.lr)},
                                      {"warmup_fraction", set(f.train.warmup_fraction)},
                                      {"weight_decay", set(f.train.weight_decay)},
                                      {"target_val_accuracy", set(f.train.target_val_accuracy)},
                                      {"loss", [&](const json& x) { f.loss = parse_loss_kind(x.get<std::string>()); }},
                                      {"beta", set(f.beta)},
                                      {"margin_c", [&](const json& x) {
                                         if (x.is_null()) f.margin_c.reset();
                                         else f.margin_c = x.get<double>();
                                       }}});
       }},
      {"ood", [&](const json& v) {
         read_section(v, "ood", {{"tau", set(c.ood.tau)}, {"threshold", set(c.ood.threshold)}});
       }},
      {"split", [&](const json& v) {
         read_section(v, "split", {{"train", set(c.split.train)},
                                   {"val", set(c.split.val)},
                                   {"test", set(c.split.test)},
                                   {"per_class_cap", set(c.split.per_class_cap)},
                                   {"mode", [&](const json& x) {
                                      auto s = x.get<std::string>();
                                      if (s == "random") c.split.mode = SplitMode::random;
                                      else if (s == "time") c.split.mode = SplitMode::time_ordered;
                                      else throw Error(Errc::invalid_config, "split.mode must be random or time");
                                    }},
                                   {"few_shot_fraction", set(c.few_shot_fraction)}});
       }},
      {"online", [&](const json& v) {
         read_section(v, "online", {{"flush_period_s", set(c.flush_period_s)},
                                    {"evict_after_s", set(c.evict_after_s)},
                                    {"speed_factor", set(c.speed_factor)}});
       }},
      {"paths", [&](const json& v) {
         if (!v.is_object()) throw Error(Errc::invalid_config, "paths must be an object");
         for (const auto& [key, value] : v.items()) {
           if (!path_keys().contains(key)) throw Error(Errc::invalid_config, "unknown config key paths." + key);
           c.paths[key] = value.get<std::string>();
         }
       }},
  });
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, "config " + path.string() + ": " + e.what());
  }
  RunConfig c;
  apply_json(c, j);
  return c;
}

json provenance(const RunConfig& cfg, std::string_view command) {
  return {{"command", std::string(command)}, {"seed", cfg.seed}, {"config", to_json(cfg)}};
}

void save_model(const std::filesystem::path& path, const Model<float>& model, const RunConfig& cfg,
                std::string_view command, const json& extra) {
  json meta = provenance(cfg, command);
  meta["parts"] = {{"decoder", model.parts().decoder}, {"n_classes", model.parts().n_classes}};
  for (const auto& [k, v] : extra.items()) meta[k] = v;
  save_checkpoint(path, model.params(), meta);
}

LoadedModel load_model(const std::filesystem::path& path) {
  auto meta = read_manifest(path);
  LoadedModel out;
  ModelParts parts;
  try {
    apply_json(out.config, meta.at("config"));
    parts.decoder = meta.at("parts").at("decoder").get<bool>();
    parts.n_classes = meta.at("parts").at("n_classes").get<int>();
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, "checkpoint manifest lacks config or parts: " + std::string(e.what()));
  }
  out.config.resolve();
  out.model = std::make_unique<Model<float>>(out.config.model, out.config.seed, parts);
  auto report = load_checkpoint(path, out.model->params());
  if (!report.missing.empty()) {
    throw Error(Errc::shape_mismatch, "checkpoint lacks tensor " + report.missing.front());
  }
  return out;
}

}  // namespace strider
