#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "strider/model.hpp"
#include "strider/train_config.hpp"

namespace strider {

enum class LossKind { ce, lda };

std::string_view to_string(LossKind kind) noexcept;
LossKind parse_loss_kind(std::string_view text);

/// Per-class sample counts of a labelled set. LabelOutOfRange on a label
/// outside [0, n_classes) or a missing label.
std::vector<std::int64_t> class_histogram(std::span<const FlowSample> samples, int n_classes);

// Scalar reference forms, 64-bit.
double ce_loss(std::span<const double> z, int y);
double cb_weight(std::int64_t n_y, double beta);
double ldam_loss(std::span<const double> z, int y, std::span<const std::int64_t> hist,
                 double margin_c);
double lda_loss(std::span<const double> z, int y, std::span<const std::int64_t> hist,
                double beta, double margin_c);

/// Margin scale that makes the largest margin (rarest class) equal 0.5.
double default_margin_c(std::span<const std::int64_t> hist);

struct LossTerms {
  std::vector<double> margins;  // per class
  std::vector<double> weights;  // per class
};

/// Per-class margins and weights feeding margin_cross_entropy. For ce they
/// are all 0 and 1; classes with n_j = 0 get margin 0 and weight 1.
LossTerms loss_terms(LossKind kind, std::span<const std::int64_t> hist, double beta,
                     double margin_c);

/// Σ p_i log p_i with p = softmax(z / tau).
double ood_score(std::span<const double> z, double tau);
/// 0 = in-distribution, 1 = out-of-distribution.
int ood_decide(double score, double s) noexcept;

struct FinetuneConfig {
  TrainConfig train{.epochs = 20, .batch = 64, .lr = 2e-3};
  LossKind loss = LossKind::ce;
  double beta = 0.999;
  std::optional<double> margin_c;  // default_margin_c when unset

  friend bool operator==(const FinetuneConfig&, const FinetuneConfig&) = default;
};

struct EpochRow {
  int epoch = 0;
  double lr = 0.0;  // at the last step of the epoch
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct FinetuneResult {
  std::vector<EpochRow> log;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::vector<std::int64_t> histogram;
  double margin_c = 0.0;
};

/// Trains every parameter of `model` (which must have a classification
/// head). After return the model holds the weights of the epoch with the
/// best validation accuracy (earliest on ties).
FinetuneResult finetune_loop(Model<float>& model, std::span<const FlowSample> train,
                             std::span<const FlowSample> val, const FinetuneConfig& cfg,
                             const std::function<void(const EpochRow&)>& on_epoch = {});

/// Logits for each sample, row-major [n, C], computed in fixed batches.
std::vector<float> predict_logits(const Model<float>& model, std::span<const FlowSample> samples,
                                  int batch = 64);

struct Prediction {
  int label = 0;
  double score = 0.0;  // max softmax probability
};

Prediction predict_one(std::span<const float> logits);
std::vector<Prediction> predict(const Model<float>& model, std::span<const FlowSample> samples,
                                int batch = 64);

double accuracy(std::span<const Prediction> preds, std::span<const FlowSample> samples);

}  // namespace strider
