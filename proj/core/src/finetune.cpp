#include "strider/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "strider/error.hpp"
#include "strider/ops.hpp"
#include "strider/optim.hpp"
#include "strider/rng.hpp"

namespace strider {

std::string_view to_string(LossKind kind) noexcept {
  return kind == LossKind::ce ? "ce" : "lda";
}

LossKind parse_loss_kind(std::string_view text) {
  if (text == "ce") return LossKind::ce;
  if (text == "lda") return LossKind::lda;
  throw Error(Errc::invalid_config, "unknown loss kind '" + std::string(text) + "'");
}

std::vector<std::int64_t> class_histogram(std::span<const FlowSample> samples, int n_classes) {
  std::vector<std::int64_t> hist(static_cast<std::size_t>(std::max(n_classes, 0)), 0);
  for (const auto& s : samples) {
    if (!s.label || *s.label < 0 || *s.label >= n_classes) {
      throw Error(Errc::label_out_of_range, "sample label outside [0, " + std::to_string(n_classes) + ")");
    }
    ++hist[static_cast<std::size_t>(*s.label)];
  }
  return hist;
}

namespace {

void check_label(std::span<const double> z, int y) {
  if (y < 0 || static_cast<std::size_t>(y) >= z.size()) {
    throw Error(Errc::label_out_of_range, "label " + std::to_string(y) + " with " +
                                               std::to_string(z.size()) + " logits");
  }
}

double margin_for(std::span<const std::int64_t> hist, int y, double margin_c) {
  if (static_cast<std::size_t>(y) >= hist.size()) {
    throw Error(Errc::label_out_of_range, "label " + std::to_string(y) + " outside histogram");
  }
  const auto n = hist[static_cast<std::size_t>(y)];
  if (n <= 0) return 0.0;
  return margin_c / std::pow(static_cast<double>(n), 0.25);
}

}  // namespace

double ce_loss(std::span<const double> z, int y) {
  check_label(z, y);
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  return m + std::log(sum) - z[static_cast<std::size_t>(y)];
}

double cb_weight(std::int64_t n_y, double beta) {
  if (n_y <= 0) return 1.0;
  return (1.0 - beta) / (1.0 - std::pow(beta, static_cast<double>(n_y)));
}

double ldam_loss(std::span<const double> z, int y, std::span<const std::int64_t> hist,
                 double margin_c) {
  check_label(z, y);
  std::vector<double> shifted(z.begin(), z.end());
  shifted[static_cast<std::size_t>(y)] -= margin_for(hist, y, margin_c);
  return ce_loss(shifted, y);
}

double lda_loss(std::span<const double> z, int y, std::span<const std::int64_t> hist,
                double beta, double margin_c) {
  const double l = ldam_loss(z, y, hist, margin_c);
  return cb_weight(hist[static_cast<std::size_t>(y)], beta) * l;
}

double default_margin_c(std::span<const std::int64_t> hist) {
  std::int64_t rarest = 0;
  for (auto n : hist) {
    if (n > 0 && (rarest == 0 || n < rarest)) rarest = n;
  }
  if (rarest == 0) return 0.0;
  return 0.5 * std::pow(static_cast<double>(rarest), 0.25);
}

LossTerms loss_terms(LossKind kind, std::span<const std::int64_t> hist, double beta,
                     double margin_c) {
  LossTerms t;
  t.margins.assign(hist.size(), 0.0);
  t.weights.assign(hist.size(), 1.0);
  if (kind == LossKind::ce) return t;
  if (!(beta >= 0.0 && beta < 1.0)) throw Error(Errc::invalid_config, "beta must lie in [0, 1)");
  if (!(margin_c >= 0.0)) throw Error(Errc::invalid_config, "margin scale must be >= 0");
  for (std::size_t j = 0; j < hist.size(); ++j) {
    t.margins[j] = margin_for(hist, static_cast<int>(j), margin_c);
    t.weights[j] = cb_weight(hist[j], beta);
  }
  return t;
}

double ood_score(std::span<const double> z, double tau) {
  if (z.empty()) throw Error(Errc::shape_mismatch, "ood_score of empty logits");
  if (!(tau > 0.0)) throw Error(Errc::invalid_config, "temperature must be > 0");
  double m = -INFINITY;
  for (double v : z) m = std::max(m, v / tau);
  double sum = 0.0;
  for (double v : z) sum += std::exp(v / tau - m);
  const double log_sum = std::log(sum);
  double score = 0.0;
  for (double v : z) {
    const double logp = v / tau - m - log_sum;
    score += std::exp(logp) * logp;
  }
  return score;
}

int ood_decide(double score, double s) noexcept { return score >= s ? 0 : 1; }

std::vector<float> predict_logits(const Model<float>& model, std::span<const FlowSample> samples,
                                  int batch) {
  const int c = model.parts().n_classes;
  if (c <= 0) throw Error(Errc::invalid_config, "model has no classification head");
  batch = std::max(batch, 1);
  std::vector<float> out;
  out.reserve(samples.size() * static_cast<std::size_t>(c));
  for (std::size_t at = 0; at < samples.size(); at += static_cast<std::size_t>(batch)) {
    const auto n = std::min(samples.size() - at, static_cast<std::size_t>(batch));
    auto input = make_input<float>(samples.subspan(at, n), model.config());
    Graph<float> g(false);
    auto z = model.logits(g, input);
    const auto& d = z.value().data;
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

Prediction predict_one(std::span<const float> logits) {
  if (logits.empty()) throw Error(Errc::shape_mismatch, "empty logits");
  Prediction p;
  p.label = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  const double m = logits[static_cast<std::size_t>(p.label)];
  double sum = 0.0;
  for (float v : logits) sum += std::exp(static_cast<double>(v) - m);
  p.score = 1.0 / sum;
  return p;
}

std::vector<Prediction> predict(const Model<float>& model, std::span<const FlowSample> samples,
                                int batch) {
  const auto c = static_cast<std::size_t>(model.parts().n_classes);
  auto logits = predict_logits(model, samples, batch);
  std::vector<Prediction> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.push_back(predict_one(std::span<const float>(logits).subspan(i * c, c)));
  }
  return out;
}

double accuracy(std::span<const Prediction> preds, std::span<const FlowSample> samples) {
  if (preds.size() != samples.size()) throw Error(Errc::shape_mismatch, "prediction count");
  if (samples.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (samples[i].label && *samples[i].label == preds[i].label) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(samples.size());
}

FinetuneResult finetune_loop(Model<float>& model, std::span<const FlowSample> train,
                             std::span<const FlowSample> val, const FinetuneConfig& cfg,
                             const std::function<void(const EpochRow&)>& on_epoch) {
  const int n_classes = model.parts().n_classes;
  if (n_classes <= 0) throw Error(Errc::invalid_config, "fine-tuning needs a classification head");
  if (train.empty()) throw Error(Errc::empty_split, "training split is empty");
  if (val.empty()) throw Error(Errc::empty_split, "validation split is empty");
  const auto& tc = cfg.train;
  if (tc.batch <= 0 || tc.epochs < 0) throw Error(Errc::invalid_config, "bad batch/epochs");
  class_histogram(val, n_classes);

  FinetuneResult result;
  result.histogram = class_histogram(train, n_classes);
  result.margin_c = cfg.margin_c ? *cfg.margin_c : default_margin_c(result.histogram);
  const auto terms = loss_terms(cfg.loss, result.histogram, cfg.beta, result.margin_c);

  auto batch_rng = make_rng(tc.seed, "batch");
  AdamW<float> opt(AdamWConfig{0.9, 0.999, 1e-8, tc.weight_decay});
  auto params = model.params().all();
  const std::size_t bsize = std::min<std::size_t>(static_cast<std::size_t>(tc.batch), train.size());
  const auto steps_per_epoch = static_cast<std::int64_t>((train.size() + bsize - 1) / bsize);
  const std::int64_t total = steps_per_epoch * tc.epochs;
  const auto warmup = static_cast<std::int64_t>(std::lround(tc.warmup_fraction * static_cast<double>(total)));

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Tensor<float>> best;
  result.best_val_accuracy = -1.0;
  std::vector<const FlowSample*> batch;
  std::vector<int> labels;
  std::vector<float> margins, weights;
  std::int64_t step = 0;

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), batch_rng);
    EpochRow row;
    row.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t at = 0; at < order.size(); at += bsize) {
      const auto n = std::min(bsize, order.size() - at);
      batch.clear();
      labels.clear();
      margins.clear();
      weights.clear();
      for (std::size_t i = 0; i < n; ++i) {
        const FlowSample& s = train[order[at + i]];
        const auto y = static_cast<std::size_t>(*s.label);
        batch.push_back(&s);
        labels.push_back(*s.label);
        margins.push_back(static_cast<float>(terms.margins[y]));
        weights.push_back(static_cast<float>(terms.weights[y]));
      }
      auto input = make_input<float>(std::span<const FlowSample* const>(batch), model.config());
      row.lr = warmup_decay_lr(tc.lr, step, warmup, total);
      {
        Graph<float> g;
        auto loss = ops::margin_cross_entropy<float>(model.logits(g, input), labels, margins, weights);
        g.backward(loss);
        loss_sum += loss.value().item() * static_cast<double>(n);
      }
      opt.step(params, row.lr);
      ++step;
    }
    row.train_loss = loss_sum / static_cast<double>(train.size());
    auto preds = predict(model, val, tc.batch);
    row.val_accuracy = accuracy(preds, val);
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
    if (row.val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = row.val_accuracy;
      result.best_epoch = epoch;
      best.clear();
      for (auto* p : params) best.push_back(p->value);
    }
    if (row.val_accuracy >= tc.target_val_accuracy) break;
  }
  if (!best.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  }
  if (result.best_val_accuracy < 0.0) result.best_val_accuracy = 0.0;
  return result;
}

}  // namespace strider
