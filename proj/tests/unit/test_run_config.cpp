#include <fstream>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "strider/run_config.hpp"
#include "support/errc.hpp"

using namespace strider;
using nlohmann::json;

TEST_CASE("JSON round trip keeps every field") {
  RunConfig cfg;
  cfg.seed = 99;
  cfg.repr.header_len = 40;
  cfg.model.kind = BlockKind::trans;
  cfg.model.multimodal = true;
  cfg.pretrain.steps = 7;
  cfg.finetune.loss = LossKind::lda;
  cfg.finetune.margin_c = 0.3;
  cfg.ood.tau = 2.0;
  cfg.split.mode = SplitMode::time_ordered;
  cfg.few_shot_fraction = 0.1;
  cfg.speed_factor = 4.0;
  cfg.paths["data"] = "x.jsonl";
  RunConfig back;
  apply_json(back, to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
  CHECK(back.model.kind == BlockKind::trans);
  CHECK(back.finetune.margin_c == 0.3);
  CHECK(back.split.mode == SplitMode::time_ordered);
}

TEST_CASE("partial sections overlay, unknown keys are rejected") {
  RunConfig cfg;
  apply_json(cfg, json::parse(R"({"model": {"d_enc": 32}})"));
  CHECK(cfg.model.d_enc == 32);
  CHECK(cfg.model.n_heads == ModelConfig{}.n_heads);
  CHECK_ERRC(apply_json(cfg, json::parse(R"({"modle": {}})")), Errc::invalid_config);
  CHECK_ERRC(apply_json(cfg, json::parse(R"({"model": {"d_enc": "big"}})")), Errc::invalid_config);
  CHECK_ERRC(apply_json(cfg, json::parse(R"({"paths": {"elsewhere": "a"}})")), Errc::invalid_config);
  CHECK_ERRC(apply_json(cfg, json::parse(R"({"finetune": {"loss": "focal"}})")), Errc::invalid_config);
}

TEST_CASE("resolve propagates the seed and representation") {
  RunConfig cfg;
  cfg.seed = 5;
  cfg.repr.header_len = 40;
  cfg.repr.payload_len = 24;
  cfg.resolve();
  CHECK(cfg.model.n_stride == 80);
  CHECK(cfg.pretrain.seed == 5);
  CHECK(cfg.finetune.train.seed == 5);
  CHECK(cfg.split.seed == 5);
  CHECK(cfg.online().flush_period_s == 3.0);
  cfg.model.d_enc = 30;
  cfg.model.n_heads = 4;
  CHECK_ERRC(cfg.resolve(), Errc::invalid_config);
}

TEST_CASE("saved models reload with their configuration") {
  RunConfig cfg;
  cfg.repr.header_len = 40;
  cfg.repr.payload_len = 24;
  cfg.model.d_enc = 16, cfg.model.e_enc = 32, cfg.model.n_enc_blocks = 1;
  cfg.model.n_state = 4, cfg.model.n_heads = 2;
  cfg.resolve();
  Model<float> model(cfg.model, 3, ModelParts{.n_classes = 4});
  auto path = std::filesystem::temp_directory_path() / "strider_run_config_test.ckpt";
  save_model(path, model, cfg, "test", json{{"note", 1}});
  auto loaded = load_model(path);
  CHECK(loaded.config.model == cfg.model);
  CHECK(loaded.model->parts().n_classes == 4);
  for (auto* p : model.params().all()) {
    CHECK(loaded.model->params().find(p->name)->value.data == p->value.data);
  }
  auto prov = provenance(cfg, "test");
  CHECK(prov.at("command") == "test");
  CHECK(prov.at("config") == to_json(cfg));
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".json");
  CHECK_ERRC(load_run_config("/nonexistent/strider.json"), Errc::io_error);
}
