#include "strider/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

#include "strider/error.hpp"
#include "strider/rng.hpp"

namespace strider {

namespace {

int label_of(const FlowSample& s) {
  if (!s.label || *s.label < 0) throw Error(Errc::label_out_of_range, "sample without a valid label");
  return *s.label;
}

// Indices per class, each list in input order.
std::map<int, std::vector<std::size_t>> by_class(std::span<const FlowSample> samples) {
  std::map<int, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < samples.size(); ++i) out[label_of(samples[i])].push_back(i);
  return out;
}

}  // namespace

Splits split(std::span<const FlowSample> samples, const SplitSpec& spec) {
  if (spec.train < 0 || spec.val < 0 || spec.test < 0 ||
      std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) {
    throw Error(Errc::invalid_config, "split ratios must be non-negative and sum to 1");
  }
  if (spec.per_class_cap < 0) throw Error(Errc::invalid_config, "negative per-class cap");
  if (samples.empty()) throw Error(Errc::empty_dataset, "nothing to split");
  auto rng = make_rng(spec.seed, "split");
  auto classes = by_class(samples);
  for (auto& [label, idx] : classes) {
    if (idx.size() < 3) {
      throw Error(Errc::too_few_samples, "class " + std::to_string(label) + " has " +
                                             std::to_string(idx.size()) + " samples, need 3");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    if (spec.per_class_cap > 0 && idx.size() > static_cast<std::size_t>(spec.per_class_cap)) {
      idx.resize(static_cast<std::size_t>(spec.per_class_cap));
    }
  }
  // Sizes: val and test are rounded, train takes the rest.
  auto cut = [&](std::size_t n) {
    auto n_val = static_cast<std::size_t>(std::llround(spec.val * static_cast<double>(n)));
    auto n_test = static_cast<std::size_t>(std::llround(spec.test * static_cast<double>(n)));
    n_val = std::min(n_val, n);
    n_test = std::min(n_test, n - n_val);
    return std::pair{n - n_val - n_test, n_val};
  };

  Splits out;
  auto take = [&](std::vector<FlowSample>& dst, std::span<const std::size_t> idx) {
    for (auto i : idx) dst.push_back(samples[i]);
  };
  if (spec.mode == SplitMode::random) {
    for (auto& [label, idx] : classes) {
      auto [n_train, n_val] = cut(idx.size());
      std::span<const std::size_t> all(idx);
      take(out.train, all.subspan(0, n_train));
      take(out.val, all.subspan(n_train, n_val));
      take(out.test, all.subspan(n_train + n_val));
    }
    std::shuffle(out.train.begin(), out.train.end(), rng);
  } else {
    std::vector<std::size_t> kept;
    for (auto& [label, idx] : classes) kept.insert(kept.end(), idx.begin(), idx.end());
    std::sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
      if (samples[a].first_ts != samples[b].first_ts) return samples[a].first_ts < samples[b].first_ts;
      return a < b;
    });
    auto [n_train, n_val] = cut(kept.size());
    std::span<const std::size_t> all(kept);
    take(out.train, all.subspan(0, n_train));
    take(out.val, all.subspan(n_train, n_val));
    take(out.test, all.subspan(n_train + n_val));
  }
  return out;
}

std::vector<FlowSample> few_shot_subsample(std::span<const FlowSample> train, double fraction,
                                           std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(Errc::invalid_config, "few-shot fraction must lie in (0, 1]");
  }
  auto rng = make_rng(seed, "subsample");
  std::vector<char> keep(train.size(), 0);
  for (auto& [label, idx] : by_class(train)) {
    const auto k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size()))));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < std::min(k, idx.size()); ++i) keep[idx[i]] = 1;
  }
  std::vector<FlowSample> out;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (keep[i]) out.push_back(train[i]);
  }
  return out;
}

ClassificationMetrics classification_metrics(std::span<const int> y_true,
                                             std::span<const int> y_pred, int n_classes) {
  if (y_true.size() != y_pred.size()) {
    throw Error(Errc::shape_mismatch, "y_true and y_pred differ in length");
  }
  if (y_true.empty()) throw Error(Errc::empty_dataset, "no predictions to score");
  int seen = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || y_pred[i] < 0) throw Error(Errc::label_out_of_range, "negative label");
    seen = std::max({seen, y_true[i] + 1, y_pred[i] + 1});
  }
  if (n_classes == 0) n_classes = seen;
  if (seen > n_classes) throw Error(Errc::label_out_of_range, "label beyond n_classes");

  ClassificationMetrics m;
  m.n_classes = n_classes;
  const auto c = static_cast<std::size_t>(n_classes);
  m.confusion.assign(c, std::vector<std::int64_t>(c, 0));
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    ++m.confusion[static_cast<std::size_t>(y_true[i])][static_cast<std::size_t>(y_pred[i])];
    if (y_true[i] == y_pred[i]) ++correct;
  }
  const auto n = static_cast<double>(y_true.size());
  m.accuracy = static_cast<double>(correct) / n;
  m.recall.assign(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    std::int64_t support = 0, predicted = 0;
    for (std::size_t j = 0; j < c; ++j) {
      support += m.confusion[k][j];
      predicted += m.confusion[j][k];
    }
    const auto tp = static_cast<double>(m.confusion[k][k]);
    const double precision = predicted > 0 ? tp / static_cast<double>(predicted) : 0.0;
    const double recall = support > 0 ? tp / static_cast<double>(support) : 0.0;
    const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    m.recall[k] = recall;
    m.macro_precision += precision;
    m.macro_recall += recall;
    m.weighted_f1 += static_cast<double>(support) / n * f1;
  }
  m.macro_precision /= static_cast<double>(c);
  m.macro_recall /= static_cast<double>(c);
  return m;
}

namespace {

void check_scores(std::span<const double> id, std::span<const double> ood) {
  if (id.empty() || ood.empty()) {
    throw Error(Errc::empty_dataset, "OOD metrics need both ID and OOD scores");
  }
}

}  // namespace

double auroc(std::span<const double> scores_id, std::span<const double> scores_ood) {
  check_scores(scores_id, scores_ood);
  std::vector<double> id(scores_id.begin(), scores_id.end());
  std::sort(id.begin(), id.end());
  // Twice the Mann-Whitney count: 2 per (id, ood) pair with ood below id,
  // 1 per tie.
  std::int64_t twice = 0;
  for (double s : scores_ood) {
    auto lo = std::lower_bound(id.begin(), id.end(), s);
    auto hi = std::upper_bound(lo, id.end(), s);
    twice += 2 * (id.end() - hi) + (hi - lo);
  }
  return 0.5 * static_cast<double>(twice) /
         (static_cast<double>(scores_id.size()) * static_cast<double>(scores_ood.size()));
}

std::vector<RocPoint> roc_curve(std::span<const double> scores_id,
                                std::span<const double> scores_ood) {
  check_scores(scores_id, scores_ood);
  std::vector<double> id(scores_id.begin(), scores_id.end());
  std::vector<double> ood(scores_ood.begin(), scores_ood.end());
  std::sort(id.begin(), id.end());
  std::sort(ood.begin(), ood.end());
  std::vector<double> thresholds;
  thresholds.reserve(id.size() + ood.size());
  std::merge(id.begin(), id.end(), ood.begin(), ood.end(), std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  std::vector<RocPoint> out;
  out.push_back({-INFINITY, 0.0, 0.0});
  for (double t : thresholds) {
    const auto fp = std::upper_bound(id.begin(), id.end(), t) - id.begin();
    const auto tp = std::upper_bound(ood.begin(), ood.end(), t) - ood.begin();
    out.push_back({t, static_cast<double>(fp) / static_cast<double>(id.size()),
                   static_cast<double>(tp) / static_cast<double>(ood.size())});
  }
  return out;
}

double fpr_at_95_tpr(std::span<const double> scores_id, std::span<const double> scores_ood) {
  double best = 1.0;
  for (const auto& p : roc_curve(scores_id, scores_ood)) {
    if (p.tpr >= 0.95) best = std::min(best, p.fpr);
  }
  return best;
}

void write_roc_csv(std::ostream& out, std::span<const RocPoint> points) {
  out << "threshold,fpr,tpr\n";
  for (const auto& p : points) out << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
}

namespace {

std::vector<std::int64_t> dense_codes(std::span<const std::int64_t> v, std::size_t& n_codes) {
  std::map<std::int64_t, std::int64_t> ids;
  std::vector<std::int64_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = ids.try_emplace(v[i], static_cast<std::int64_t>(ids.size())).first->second;
  }
  n_codes = ids.size();
  return out;
}

double entropy(std::span<const std::int64_t> counts, double n) {
  double h = 0.0;
  for (auto c : counts) {
    if (c > 0) {
      const double p = static_cast<double>(c) / n;
      h -= p * std::log(p);
    }
  }
  return h;
}

double expected_mutual_info(std::span<const std::int64_t> a, std::span<const std::int64_t> b,
                            std::int64_t n) {
  const double nd = static_cast<double>(n);
  const double lg_n = std::lgamma(nd + 1);
  double emi = 0.0;
  for (auto ai : a) {
    for (auto bj : b) {
      const std::int64_t lo = std::max<std::int64_t>(1, ai + bj - n);
      const std::int64_t hi = std::min(ai, bj);
      const double fixed = std::lgamma(static_cast<double>(ai) + 1) +
                           std::lgamma(static_cast<double>(bj) + 1) +
                           std::lgamma(static_cast<double>(n - ai) + 1) +
                           std::lgamma(static_cast<double>(n - bj) + 1) - lg_n;
      for (std::int64_t nij = lo; nij <= hi; ++nij) {
        const double x = static_cast<double>(nij);
        const double term = x / nd * std::log(nd * x / (static_cast<double>(ai) * static_cast<double>(bj)));
        const double log_p = fixed - std::lgamma(x + 1) - std::lgamma(static_cast<double>(ai - nij) + 1) -
                             std::lgamma(static_cast<double>(bj - nij) + 1) -
                             std::lgamma(static_cast<double>(n - ai - bj + nij) + 1);
        emi += term * std::exp(log_p);
      }
    }
  }
  return emi;
}

}  // namespace

double adjusted_mutual_info(std::span<const std::int64_t> a, std::span<const std::int64_t> b) {
  if (a.size() != b.size()) throw Error(Errc::shape_mismatch, "AMI inputs differ in length");
  if (a.empty()) throw Error(Errc::empty_dataset, "AMI of no samples");
  std::size_t ra = 0, rb = 0;
  auto ca = dense_codes(a, ra);
  auto cb = dense_codes(b, rb);
  if (ra < 2 || rb < 2) return 0.0;
  const auto n = static_cast<std::int64_t>(a.size());
  const double nd = static_cast<double>(n);
  std::vector<std::int64_t> sa(ra, 0), sb(rb, 0);
  std::map<std::pair<std::int64_t, std::int64_t>, std::int64_t> joint;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++sa[static_cast<std::size_t>(ca[i])];
    ++sb[static_cast<std::size_t>(cb[i])];
    ++joint[{ca[i], cb[i]}];
  }
  double mi = 0.0;
  for (const auto& [cell, nij] : joint) {
    const double x = static_cast<double>(nij);
    mi += x / nd * std::log(nd * x / (static_cast<double>(sa[static_cast<std::size_t>(cell.first)]) *
                                     static_cast<double>(sb[static_cast<std::size_t>(cell.second)])));
  }
  const double emi = expected_mutual_info(sa, sb, n);
  const double mean_h = 0.5 * (entropy(sa, nd) + entropy(sb, nd));
  double denom = mean_h - emi;
  // Same guard as the common reference implementation.
  const double eps = std::numeric_limits<double>::epsilon();
  if (denom < 0) denom = std::min(denom, -eps);
  else denom = std::max(denom, eps);
  return (mi - emi) / denom;
}

AmiGrid ami_stride_scores(std::span<const FlowSample> samples, const ReprConfig& repr) {
  repr.validate();
  if (repr.header_len % 2 != 0 || repr.payload_len % 2 != 0) {
    throw Error(Errc::indivisible_length, "header and payload lengths must be even for 2-byte strides");
  }
  if (samples.empty()) throw Error(Errc::empty_dataset, "AMI grid of no samples");
  std::vector<std::int64_t> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) {
    labels.push_back(label_of(s));
    if (s.byte_array.size() != static_cast<std::size_t>(repr.byte_len())) {
      throw Error(Errc::shape_mismatch, "byte array length does not match the representation");
    }
  }
  AmiGrid grid;
  grid.packets = repr.packets_for_bytes;
  grid.header_positions = repr.header_len / 2;
  grid.payload_positions = repr.payload_len / 2;
  const int per_packet = grid.header_positions + grid.payload_positions;
  std::vector<std::int64_t> values(samples.size());
  for (int p = 0; p < grid.packets; ++p) {
    std::vector<double> row;
    for (int q = 0; q < per_packet; ++q) {
      const auto at = static_cast<std::size_t>(p * repr.block_len() + 2 * q);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& bytes = samples[i].byte_array;
        values[i] = bytes[at] << 8 | bytes[at + 1];
      }
      row.push_back(adjusted_mutual_info(values, labels));
    }
    grid.scores.push_back(std::move(row));
  }
  return grid;
}

void write_ami_csv(std::ostream& out, const AmiGrid& grid) {
  out << "packet,part,position,ami\n";
  for (int p = 0; p < grid.packets; ++p) {
    for (int q = 0; q < grid.header_positions + grid.payload_positions; ++q) {
      const bool header = q < grid.header_positions;
      out << p << ',' << (header ? "header" : "payload") << ','
          << (header ? q : q - grid.header_positions) << ','
          << grid.scores[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)] << '\n';
    }
  }
}

}  // namespace strider
