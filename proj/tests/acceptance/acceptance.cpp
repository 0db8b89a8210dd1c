// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "strider/finetune.hpp"
#include "strider/metrics.hpp"
#include "strider/online.hpp"
#include "strider/ops.hpp"
#include "strider/pretrain.hpp"
#include "strider/ssm.hpp"
#include "strider/synth.hpp"
#include "support/grad_cases.hpp"
#include "support/online_oracle.hpp"
#include "support/oracles.hpp"

using namespace strider;
using testing::random_tensor;
using testing::relative_error;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = STRIDER_FIXTURE_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- 1: scan ------------------------------------------------------------

Outcome scan_equivalence() {
  auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  double worst32 = 0, worst64 = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> bd(1, 4), ld(1, 256), ed(1, 16), nd(1, 8), cd(1, 64), td(1, 4);
    const std::int64_t B = bd(rng), L = ld(rng), E = ed(rng), N = nd(rng);
    auto delta = random_tensor({B, L, E}, rng, 0.001, 1.0);
    auto a = random_tensor({E, N}, rng, -4, -0.01);
    auto bm = random_tensor({B, L, N}, rng);
    auto c = random_tensor({B, L, N}, rng);
    auto x = random_tensor({B, L, E}, rng);
    const int chunk = cd(rng), threads = td(rng);

    auto d = ssm::discretize(delta, a, bm);
    auto ref = ssm::scan_sequential(d.a_bar, d.b_bar, c, x);
    worst64 = std::max(worst64, relative_error(ssm::scan_parallel(d.a_bar, d.b_bar, c, x, chunk, threads), ref));

    auto df = ssm::discretize(delta.cast<float>(), a.cast<float>(), bm.cast<float>());
    auto cf = c.cast<float>(), xf = x.cast<float>();
    auto reff = ssm::scan_sequential(df.a_bar, df.b_bar, cf, xf);
    worst32 = std::max(worst32, relative_error(ssm::scan_parallel(df.a_bar, df.b_bar, cf, xf, chunk, threads), reff));
  }
  const double t = seconds_since(t0);
  return {worst32 <= 1e-5 && worst64 <= 1e-10 && t < 30,
          fmt("200 instances, max rel err f32 %.2e f64 %.2e, %.1f s", worst32, worst64, t)};
}

// ---- 2: attention --------------------------------------------------------

Outcome attention_equivalence() {
  auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(202);
  double worst64 = 0, worst32 = 0, top_logit = 0;
  for (int L : {1, 7, 64, 129, 500, 1024}) {
    for (double target : {1.0, 10.0, 100.0}) {
      const int heads = 2, D = 16;
      auto q = random_tensor({1, L, D}, rng);
      auto k = random_tensor({1, L, D}, rng);
      auto v = random_tensor({1, L, D}, rng);
      // Scale q so the largest |logit| equals the target magnitude.
      double m = 0;
      const int hd = D / heads;
      for (int h = 0; h < heads; ++h)
        for (int i = 0; i < L; ++i)
          for (int j = 0; j < L; ++j) {
            double s = 0;
            for (int e = 0; e < hd; ++e) s += q.data[i * D + h * hd + e] * k.data[j * D + h * hd + e];
            m = std::max(m, std::abs(s) / std::sqrt(static_cast<double>(hd)));
          }
      for (auto& x : q.data) x *= target / m;
      top_logit = std::max(top_logit, target);
      auto ref = testing::naive_attention(q, k, v, heads);
      for (int tile : {16, 64}) {
        Graph<double> g(false);
        auto y = ops::attention(g.constant(q), g.constant(k), g.constant(v), heads, tile);
        worst64 = std::max(worst64, relative_error(y.value(), ref));
        Graph<float> gf(false);
        auto yf = ops::attention(gf.constant(q.cast<float>()), gf.constant(k.cast<float>()),
                                 gf.constant(v.cast<float>()), heads, tile);
        worst32 = std::max(worst32, relative_error(yf.value(), ref));
      }
    }
  }
  const double t = seconds_since(t0);
  return {worst64 <= 1e-5 && worst32 <= 1e-5 && t < 30,
          fmt("L up to 1024, |logit| up to %.0f, max rel err f64 %.2e f32 %.2e, %.1f s", top_logit,
              worst64, worst32, t)};
}

// ---- 3: gradients --------------------------------------------------------

Outcome gradient_suite() {
  auto t0 = std::chrono::steady_clock::now();
  double prim = 0, block = 0;
  std::string worst;
  for (const auto& c : testing::primitive_grad_cases()) {
    if (c.result.max_rel_error > prim) prim = c.result.max_rel_error, worst = c.name;
  }
  for (auto kind : {BlockKind::mamba, BlockKind::trans}) {
    for (std::uint64_t seed : {1, 2}) block = std::max(block, testing::check_block(kind, seed).max_rel_error);
  }
  const double t = seconds_since(t0);
  return {prim <= 1e-4 && block <= 1e-3 && t < 300,
          fmt("primitives max %.2e (%s), blocks max %.2e, %.1f s", prim, worst.c_str(), block, t)};
}

// ---- 4: loss identities --------------------------------------------------

Outcome loss_identities() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> zd(-5, 5);
  std::uniform_int_distribution<std::int64_t> nd(1, 500);
  bool ok = true;
  int cases = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int C = 2 + rep % 5;
    std::vector<double> z(C);
    for (auto& v : z) v = zd(rng);
    std::vector<std::int64_t> hist(C);
    for (auto& n : hist) n = nd(rng);
    const int y = rep % C;
    const double mc = default_margin_c(hist);
    ok &= lda_loss(z, y, hist, 0.0, 0.0) == ce_loss(z, y);
    ok &= lda_loss(z, y, hist, 0.999, mc) == cb_weight(hist[y], 0.999) * ldam_loss(z, y, hist, mc);
    cases += 2;
  }
  std::vector<double> zero{0.0, 0.0};
  const bool ln2 = ce_loss(zero, 0) == std::log(2.0);
  const bool cb = cb_weight(2, 0.5) == 2.0 / 3.0;
  // Margin of a class with 16 samples at C = 1: compare ldam with the
  // logit shifted by hand.
  std::vector<std::int64_t> h{16, 16};
  auto shifted = zero;
  shifted[0] -= 0.5;
  const bool margin = ldam_loss(zero, 0, h, 1.0) == ce_loss(shifted, 0) &&
                      loss_terms(LossKind::lda, h, 0.999, 1.0).margins[0] == 0.5;
  return {ok && ln2 && cb && margin,
          fmt("%d random identity checks %s, ce([0,0],0)=ln2 %s, cb(2,0.5)=2/3 %s, margin(n=16,C=1)=0.5 %s",
              cases, ok ? "exact" : "differ", ln2 ? "yes" : "no", cb ? "yes" : "no",
              margin ? "yes" : "no")};
}

// ---- 5: golden capture ---------------------------------------------------

Outcome golden_capture() {
  auto samples = extract_flow_samples(read_capture_file(kFixtures / "golden.pcap"), ReprConfig{});
  std::ostringstream out;
  write_flow_samples(out, samples);
  std::ifstream in(kFixtures / "golden_flows.jsonl", std::ios::binary);
  std::stringstream want;
  want << in.rdbuf();
  const bool same = out.str() == want.str();
  return {same, fmt("%zu flows, %zu bytes, %s", samples.size(), out.str().size(),
                    same ? "byte-identical" : "differs from fixture")};
}

// ---- 6: masking ----------------------------------------------------------

Outcome masking() {
  const int visible = visible_count(400, 0.9);
  bool inverse = true, class_token = true;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (double ratio : {0.0, 0.25, 0.5, 0.75, 0.9, 0.99, 0.999}) {
      auto plan = make_mask_plan(400, ratio, seed);
      std::vector<double> v(400);
      std::iota(v.begin(), v.end(), static_cast<double>(seed));
      inverse &= unshuffle<double>(shuffle<double>(v, plan), plan) == v;
    }
  }
  for (bool mm : {false, true}) {
    for (double ratio = 0.0; ratio < 1.0; ratio += 0.037) {
      ModelConfig cfg;
      cfg.multimodal = mm;
      cfg.mask_ratio_stride = ratio;
      const std::int64_t L = cfg.seq_len();
      Tensor<double> tok(Shape{1, L, 1});
      std::iota(tok.data.begin(), tok.data.end(), 0.0);
      std::vector<MaskPlan> plans{make_mask_plan(cfg.n_stride, ratio, 7)};
      Graph<double> g(false);
      auto out = mask_strides(g.constant(tok), std::span<const MaskPlan>(plans), cfg);
      class_token &= out.value().data.back() == static_cast<double>(L - 1);
    }
  }
  return {visible == 41 && inverse && class_token,
          fmt("visible(400, 0.9)=%d, unshuffle(shuffle) identity %s, class token kept %s", visible,
              inverse ? "yes" : "no", class_token ? "yes" : "no")};
}

// ---- 7-9: desk-scale learning --------------------------------------------

ReprConfig desk_repr() {
  ReprConfig r;
  r.header_len = 40;
  r.payload_len = 24;
  return r;
}

ModelConfig desk_model(BlockKind kind, bool multimodal) {
  ModelConfig m;
  m.kind = kind;
  m.multimodal = multimodal;
  m.d_enc = 64, m.e_enc = 128, m.d_dec = 64, m.e_dec = 128;
  m.n_enc_blocks = 2, m.n_dec_blocks = 1, m.n_state = 8, m.n_heads = 4;
  m.match(desk_repr());
  return m;
}

// Smaller classifier for the repeated long-tail and OOD runs.
ModelConfig small_model() {
  ModelConfig m = desk_model(BlockKind::mamba, false);
  m.d_enc = 32, m.e_enc = 64, m.n_enc_blocks = 1;
  return m;
}

// Copies every parameter of `from` whose name and shape exist in `to`.
int copy_matching(const Model<float>& from, Model<float>& to) {
  int n = 0;
  for (auto* p : from.params().all()) {
    auto* q = to.params().find(p->name);
    if (q != nullptr && q->value.shape == p->value.shape) q->value = p->value, ++n;
  }
  return n;
}

double mean_of(const std::vector<PretrainLogRow>& rows, std::size_t from, std::size_t n) {
  double s = 0;
  for (std::size_t i = from; i < from + n; ++i) s += rows[i].stride;
  return s / static_cast<double>(n);
}

double test_accuracy(const Model<float>& model, std::span<const FlowSample> test) {
  auto preds = predict(model, test);
  return accuracy(preds, test);
}

Outcome desk_training() {
  auto t0 = std::chrono::steady_clock::now();
  SynthConfig sc;
  sc.classes = {{667}, {667}, {666}};
  sc.seed = 70;
  auto data = synth_flow_samples(sc, desk_repr());
  SplitSpec spec;
  spec.seed = 71;
  auto parts = split(data, spec);

  bool ok = data.size() == 2000;
  std::string detail = fmt("%zu flows", data.size());
  for (auto kind : {BlockKind::mamba, BlockKind::trans}) {
    const char* kname = kind == BlockKind::mamba ? "mamba" : "trans";
    auto mcfg = desk_model(kind, false);
    Model<float> pre(mcfg, 72, ModelParts{.decoder = true});
    TrainConfig tc;
    tc.steps = 200;
    tc.batch = 32;
    tc.lr = 2e-3;
    tc.seed = 73;
    auto rows = pretrain_loop(pre, parts.train, tc);
    const double first = mean_of(rows, 0, 10), last = mean_of(rows, rows.size() - 10, 10);
    const double drop = 1.0 - last / first;
    ok &= drop >= 0.5;
    detail += fmt("; %s recon -%.0f%%", kname, 100 * drop);

    for (bool mm : {false, true}) {
      Model<float> clf(desk_model(kind, mm), 74, ModelParts{.n_classes = 3});
      copy_matching(pre, clf);
      FinetuneConfig fc;
      fc.train.epochs = 20;
      fc.train.batch = 64;
      fc.train.lr = 2e-3;
      fc.train.seed = 75;
      fc.train.target_val_accuracy = 0.99;
      auto r = finetune_loop(clf, parts.train, parts.val, fc);
      const double acc = test_accuracy(clf, parts.test);
      ok &= acc >= 0.95 && static_cast<int>(r.log.size()) <= 20;
      detail += fmt(", %s-%s acc %.3f (%zu ep)", kname, mm ? "multi" : "uni", acc, r.log.size());
    }
  }
  const double t = seconds_since(t0);
  ok &= t < 600;
  return {ok, detail + fmt("; %.0f s", t)};
}

struct Labelled {
  std::vector<FlowSample> train, val, test;
};

// Takes per class the first n_train, then n_val, then n_test samples.
Labelled take(const std::vector<FlowSample>& data, const std::vector<int>& n_train,
              const std::vector<int>& n_val, const std::vector<int>& n_test) {
  Labelled out;
  std::vector<int> seen(n_train.size());
  for (const auto& s : data) {
    const int c = *s.label;
    const int i = seen[c]++;
    if (i < n_train[c]) out.train.push_back(s);
    else if (i < n_train[c] + n_val[c]) out.val.push_back(s);
    else if (i < n_train[c] + n_val[c] + n_test[c]) out.test.push_back(s);
  }
  return out;
}

// Long-tail and OOD corpora.
constexpr double kTailSeparation = 0.35;
constexpr double kTailNoise = 0.5;
constexpr int kTailEpochs = 10;
constexpr double kOodSeparation = 0.7;
constexpr double kOodNoise = 0.1;
constexpr int kOodEpochs = 6;

FinetuneConfig small_finetune(LossKind loss, std::uint64_t seed, int epochs) {
  FinetuneConfig fc;
  fc.loss = loss;
  fc.beta = 0.999;
  fc.train.epochs = epochs;
  fc.train.batch = 32;
  fc.train.lr = 3e-3;
  fc.train.seed = seed;
  return fc;
}

Outcome long_tail() {
  auto t0 = std::chrono::steady_clock::now();
  const std::vector<int> n_train{1000, 100, 10}, n_val{100, 10, 1}, n_test{100, 100, 100};
  std::vector<double> ce_recall, lda_recall;
  std::string runs;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthConfig sc;
    sc.classes = {{1200}, {210}, {111}};
    sc.separation = kTailSeparation;
    sc.byte_noise = kTailNoise;
    sc.seed = 800 + seed;
    auto parts = take(synth_flow_samples(sc, desk_repr()), n_train, n_val, n_test);
    double rec[2];
    for (auto loss : {LossKind::ce, LossKind::lda}) {
      Model<float> model(small_model(), 810 + seed, ModelParts{.n_classes = 3});
      finetune_loop(model, parts.train, parts.val, small_finetune(loss, 820 + seed, kTailEpochs));
      std::vector<int> yt, yp;
      for (const auto& s : parts.test) yt.push_back(*s.label);
      for (const auto& p : predict(model, parts.test)) yp.push_back(p.label);
      rec[loss == LossKind::lda] = classification_metrics(yt, yp, 3).recall[2];
    }
    ce_recall.push_back(rec[0]);
    lda_recall.push_back(rec[1]);
    runs += fmt(" %.2f/%.2f", rec[0], rec[1]);
  }
  const double ce = median(ce_recall), lda = median(lda_recall), t = seconds_since(t0);
  return {lda >= ce + 0.05,
          fmt("minority recall median ce %.3f lda %.3f (ce/lda per seed:%s), %.0f s", ce, lda,
              runs.c_str(), t)};
}

double pairwise_auroc(const std::vector<double>& id, const std::vector<double>& ood) {
  double wins = 0;
  for (double o : ood)
    for (double i : id) wins += o < i ? 1.0 : o == i ? 0.5 : 0.0;
  return wins / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

std::vector<double> scores_of(const Model<float>& model, std::span<const FlowSample> samples) {
  auto logits = predict_logits(model, samples);
  const std::size_t c = logits.size() / samples.size();
  std::vector<double> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::vector<double> z(logits.begin() + i * c, logits.begin() + (i + 1) * c);
    out.push_back(ood_score(z, 1.0));
  }
  return out;
}

Outcome ood_detection() {
  auto t0 = std::chrono::steady_clock::now();
  std::vector<double> aurocs, fprs;
  std::string runs;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthConfig sc;
    sc.classes = {{300}, {300}, {200}};
    sc.separation = kOodSeparation;
    sc.byte_noise = kOodNoise;
    sc.seed = 900 + seed;
    auto parts = take(synth_flow_samples(sc, desk_repr()), {200, 200, 0}, {30, 30, 0}, {70, 70, 200});
    std::vector<FlowSample> id_test, ood_test;
    for (auto& s : parts.test) (*s.label == 2 ? ood_test : id_test).push_back(s);
    Model<float> model(small_model(), 910 + seed, ModelParts{.n_classes = 2});
    finetune_loop(model, parts.train, parts.val, small_finetune(LossKind::ce, 920 + seed, kOodEpochs));
    auto sid = scores_of(model, id_test), sood = scores_of(model, ood_test);
    aurocs.push_back(auroc(sid, sood));
    fprs.push_back(fpr_at_95_tpr(sid, sood));
    runs += fmt(" %.3f/%.3f", aurocs.back(), fprs.back());
  }

  // Exact agreement with the pairwise count on small instances.
  std::mt19937_64 rng(930);
  int exact = 0;
  for (int rep = 0; rep < 100; ++rep) {
    std::uniform_int_distribution<int> n(1, 12), v(-4, 4);
    std::vector<double> id(static_cast<std::size_t>(n(rng))), ood(static_cast<std::size_t>(n(rng)));
    for (auto& x : id) x = v(rng) * 0.5;
    for (auto& x : ood) x = v(rng) * 0.5 - 0.5;
    exact += auroc(id, ood) == pairwise_auroc(id, ood);
  }
  const double a = median(aurocs), f = median(fprs), t = seconds_since(t0);
  return {a >= 0.9 && f <= 0.5 && exact == 100,
          fmt("median AUROC %.3f FPR95 %.3f (per seed:%s), pairwise oracle exact %d/100, %.0f s", a, f,
              runs.c_str(), exact, t)};
}

// ---- 10: online / offline ------------------------------------------------

Outcome online_parity() {
  ReprConfig repr;
  ModelConfig m;
  m.d_enc = 16, m.e_enc = 32, m.n_enc_blocks = 1, m.n_state = 4, m.n_heads = 2;
  m.multimodal = true;
  m.match(repr);
  Model<float> model(m, 7, ModelParts{.n_classes = 3});

  std::size_t compared = 0, mismatched = 0;
  for (const char* name : {"golden.pcap", "online.pcap"}) {
    auto records = read_capture_file(kFixtures / name);
    testing::OfflineReference ref(records, repr);
    auto report = replay(records, model, OnlineConfig{repr}, ReplayOptions{});
    for (const auto& batch : report.results) {
      std::vector<FlowSample> offline;
      for (const auto& s : batch.samples) {
        offline.push_back(ref.sample(s.key, s.first_ts, batch.flows.front().classified_at));
        mismatched += !testing::same_sample(s, offline.back());
        ++compared;
      }
      mismatched += predict_logits(model, offline) != batch.logits;
    }
  }

  auto records = read_capture_file(kFixtures / "online.pcap");
  testing::OfflineReference ref(records, repr);
  ResultStore store;
  auto report = replay(records, model, OnlineConfig{repr}, ReplayOptions{}, &store);
  std::map<FiveTuple, int> seen;
  for (const auto& f : store.all()) ++seen[f.key];
  std::size_t long_ok = 0, short_seen = 0, n_long = 0, n_short = 0;
  for (const auto& [key, pk] : ref.flows()) {
    if (pk.size() >= 5) ++n_long, long_ok += seen.count(key) && seen[key] == 1;
    else ++n_short, short_seen += seen.count(key);
  }
  const bool ok = compared > 0 && mismatched == 0 && long_ok == n_long && short_seen == 0 &&
                  report.evicted == n_short;
  return {ok, fmt("%zu online samples vs offline, %zu mismatches; %zu/%zu long flows classified once, "
                  "%zu short flows classified, %zu evicted of %zu",
                  compared, mismatched, long_ok, n_long, short_seen, report.evicted, n_short)};
}

// ---- 11: metrics ---------------------------------------------------------

Outcome metric_fixtures() {
  std::vector<int> yt{0, 0, 1, 1}, yp{0, 1, 1, 1};
  auto m = classification_metrics(yt, yp);
  std::vector<std::int64_t> labels{0, 0, 1, 1, 2, 2, 2, 0, 1};
  std::vector<std::int64_t> determined{4, 4, 8, 8, 6, 6, 6, 4, 8};
  std::vector<std::int64_t> constant(labels.size(), 3);
  const double det = adjusted_mutual_info(determined, labels);
  const double con = adjusted_mutual_info(constant, labels);
  const bool ok = m.accuracy == 0.75 && std::abs(m.weighted_f1 - 0.7333) <= 5e-5 &&
                  std::abs(det - 1.0) <= 1e-12 && con == 0.0;
  return {ok, fmt("accuracy %.4f, weighted F1 %.4f, AMI determined %.15f, constant %.1f", m.accuracy,
                  m.weighted_f1, det, con)};
}

// ---- 12: CLI determinism -------------------------------------------------

int run_cli(const fs::path& dir, const std::string& args) {
  std::string cmd = "cd '" + dir.string() + "' && '" STRIDER_CLI "' " + args + " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), dir).string()] = ss.str();
  }
  return out;
}

Outcome cli_determinism() {
  auto t0 = std::chrono::steady_clock::now();
  const char* config = R"({
  "repr": {"header_len": 40, "payload_len": 24},
  "model": {"d_enc": 16, "e_enc": 32, "d_dec": 16, "e_dec": 32, "n_enc_blocks": 1,
            "n_dec_blocks": 1, "n_state": 4, "n_heads": 2, "multimodal": true},
  "pretrain": {"steps": 20, "batch": 16},
  "finetune": {"epochs": 3, "batch": 16}
})";
  const std::vector<std::string> steps{
      "synth --config config.json --out train.jsonl --pcap train.pcap --flows 30,30,30 --seed 5",
      "synth --config config.json --out other.jsonl --flows 20 --seed 6",
      "pretrain --config config.json --data train.jsonl --out pre.ckpt --seed 11",
      "finetune --init pre.ckpt --data train.jsonl --out ft.ckpt --loss lda --seed 11",
      "classify --data train.jsonl --model ft.ckpt --out pred.jsonl",
      "ood --id train.jsonl --ood other.jsonl --model ft.ckpt --out roc.csv --metrics ood.json",
      "eval --data train.jsonl --model ft.ckpt --out eval.json",
      "serve --pcap train.pcap --model ft.ckpt --results results.jsonl",
  };
  std::vector<std::map<std::string, std::string>> runs;
  int failures = 0;
  for (int r = 0; r < 2; ++r) {
    auto dir = fs::temp_directory_path() / fmt("strider_accept_%d_%d", static_cast<int>(::getpid()), r);
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "config.json") << config;
    for (const auto& s : steps) failures += run_cli(dir, s) != 0;
    runs.push_back(contents(dir));
    fs::remove_all(dir);
  }
  std::size_t differing = 0;
  for (const auto& [name, bytes] : runs[0]) differing += !runs[1].count(name) || runs[1].at(name) != bytes;
  const bool has_all = runs[0].count("ft.ckpt") && runs[0].count("ft.ckpt.metrics.json") &&
                       runs[0].count("results.jsonl");
  const double t = seconds_since(t0);
  return {failures == 0 && differing == 0 && has_all && runs[0].size() == runs[1].size(),
          fmt("%zu artifacts per run (checkpoints, metrics, result log), %zu differ, %d failed steps, %.0f s",
              runs[0].size(), differing, failures, t)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"scan equivalence", scan_equivalence},
      {"attention equivalence", attention_equivalence},
      {"gradient suite", gradient_suite},
      {"loss identities", loss_identities},
      {"golden capture", golden_capture},
      {"masking", masking},
      {"desk-scale pre-training and fine-tuning", desk_training},
      {"long-tail minority recall", long_tail},
      {"OOD detection", ood_detection},
      {"online/offline parity", online_parity},
      {"metric fixtures", metric_fixtures},
      {"CLI determinism", cli_determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << n << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
