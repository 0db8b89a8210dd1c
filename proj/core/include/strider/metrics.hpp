#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "strider/flow_repr.hpp"

namespace strider {

enum class SplitMode { random, time_ordered };

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  int per_class_cap = 2000;  // 0 = no cap
  SplitMode mode = SplitMode::random;
  std::uint64_t seed = 0;
};

struct Splits {
  std::vector<FlowSample> train;
  std::vector<FlowSample> val;
  std::vector<FlowSample> test;
};

/// Random mode is stratified: each class is capped, shuffled and cut
/// train/val/test. Time-ordered mode caps each class the same way, then
/// cuts the whole set sorted by first packet time. TooFewSamples when a
/// class has fewer than 3 samples.
Splits split(std::span<const FlowSample> samples, const SplitSpec& spec);

/// Keeps max(1, round(fraction * n_c)) samples of every class c, chosen at
/// random; relative order is preserved.
std::vector<FlowSample> few_shot_subsample(std::span<const FlowSample> train, double fraction,
                                           std::uint64_t seed);

struct ClassificationMetrics {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double weighted_f1 = 0.0;
  int n_classes = 0;
  std::vector<std::vector<std::int64_t>> confusion;  // [true][pred]
  std::vector<double> recall;                        // per class
};

/// Averages run over the classes in [0, n_classes); n_classes = 0 means
/// 1 + the largest label seen.
ClassificationMetrics classification_metrics(std::span<const int> y_true,
                                             std::span<const int> y_pred, int n_classes = 0);

// OOD metrics. Scores are negative entropies: lower means more likely
// out-of-distribution, and OOD is the positive class.
double auroc(std::span<const double> scores_id, std::span<const double> scores_ood);
double fpr_at_95_tpr(std::span<const double> scores_id, std::span<const double> scores_ood);

struct RocPoint {
  double threshold = 0.0;  // flag OOD when score <= threshold
  double fpr = 0.0;
  double tpr = 0.0;
};

std::vector<RocPoint> roc_curve(std::span<const double> scores_id,
                                std::span<const double> scores_ood);
void write_roc_csv(std::ostream& out, std::span<const RocPoint> points);

/// Adjusted mutual information with arithmetic-mean normalization and the
/// hypergeometric expected mutual information. 0 when either labelling is
/// constant.
double adjusted_mutual_info(std::span<const std::int64_t> a, std::span<const std::int64_t> b);

struct AmiGrid {
  int packets = 0;
  int header_positions = 0;   // 2-byte strides per packet header
  int payload_positions = 0;  // 2-byte strides per packet payload
  // [packet][position], header positions first, then payload positions.
  std::vector<std::vector<double>> scores;
};

/// AMI between each 2-byte stride of the byte array and the class label.
AmiGrid ami_stride_scores(std::span<const FlowSample> samples, const ReprConfig& repr);
void write_ami_csv(std::ostream& out, const AmiGrid& grid);

}  // namespace strider
