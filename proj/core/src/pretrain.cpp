#include "strider/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "strider/ops.hpp"
#include "strider/optim.hpp"
#include "strider/rng.hpp"

namespace strider {

namespace {

void check_ratio(double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw Error(Errc::ratio_out_of_range,
                "mask ratio " + std::to_string(ratio) + " is outside [0, 1)");
  }
}

std::vector<int> iota_vector(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

void check_plans(std::span<const MaskPlan> plans, std::int64_t batch, const ModelConfig& cfg) {
  if (static_cast<std::int64_t>(plans.size()) != batch) {
    throw Error(Errc::plan_mismatch, "expected one mask plan per sample");
  }
  for (const auto& p : plans) {
    if (static_cast<int>(p.permutation.size()) != cfg.n_stride ||
        p.n_visible != plans.front().n_visible || p.n_visible < 1 ||
        p.n_visible > cfg.n_stride + 1) {
      throw Error(Errc::plan_mismatch, "mask plan does not match the stride count");
    }
  }
}

}  // namespace

int visible_count(int n_stride, double ratio) {
  check_ratio(ratio);
  return static_cast<int>(std::lround((1.0 - ratio) * n_stride)) + 1;
}

MaskPlan make_mask_plan(int n_stride, double ratio, std::uint64_t seed) {
  MaskPlan plan;
  plan.n_visible = visible_count(n_stride, ratio);
  plan.seed = seed;
  plan.permutation = iota_vector(n_stride);
  Rng rng(seed);
  std::shuffle(plan.permutation.begin(), plan.permutation.end(), rng);
  return plan;
}

template <typename T>
Var<T> mask_strides(const Var<T>& tokens, std::span<const MaskPlan> plans, const ModelConfig& cfg) {
  const std::int64_t B = tokens.dim(0), L = tokens.dim(1);
  if (L != cfg.seq_len()) {
    throw Error(Errc::shape_mismatch, "mask_strides: tokens " + shape_str(tokens.shape()));
  }
  check_plans(plans, B, cfg);
  const int n_seq = cfg.multimodal ? 2 * cfg.m_seq : 0;
  const std::int64_t lv = plans.front().n_visible + n_seq;
  std::vector<std::int64_t> rows;
  rows.reserve(static_cast<std::size_t>(B * lv));
  for (std::int64_t b = 0; b < B; ++b) {
    for (int p : plans[b].kept()) rows.push_back(b * L + p);
    for (int s = 0; s < n_seq; ++s) rows.push_back(b * L + cfg.n_stride + s);
    rows.push_back(b * L + L - 1);
  }
  return ops::gather_rows(tokens, std::span<const std::int64_t>(rows), Shape{B, lv});
}

template <typename T>
Var<T> decode_assemble(const Var<T>& projected, std::span<const MaskPlan> plans,
                       const Var<T>& mask_token, const Var<T>& positions, const ModelConfig& cfg) {
  if (projected.rank() != 3) {
    throw Error(Errc::plan_mismatch, "decode_assemble: projected " + shape_str(projected.shape()));
  }
  const std::int64_t B = projected.dim(0), lv = projected.dim(1), d = projected.dim(2);
  check_plans(plans, B, cfg);
  const int n_seq = cfg.multimodal ? 2 * cfg.m_seq : 0;
  const int kept = plans.front().n_kept();
  if (lv != kept + n_seq + 1) {
    throw Error(Errc::plan_mismatch, "decode_assemble: " + std::to_string(lv) +
                                         " encoder rows for a plan with " +
                                         std::to_string(kept) + " kept strides");
  }
  const std::int64_t L = cfg.seq_len();
  auto flat = ops::reshape(projected, Shape{B * lv, d});
  auto table = ops::concat<T>({flat, mask_token}, 0);
  const std::int64_t mask_row = B * lv;
  std::vector<std::int64_t> rows(static_cast<std::size_t>(B * L));
  std::vector<int> rank(static_cast<std::size_t>(cfg.n_stride));
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& perm = plans[b].permutation;
    for (int r = 0; r < cfg.n_stride; ++r) rank[perm[r]] = r;
    std::int64_t* out = rows.data() + b * L;
    for (int p = 0; p < cfg.n_stride; ++p) out[p] = rank[p] < kept ? b * lv + rank[p] : mask_row;
    for (int s = 0; s < n_seq; ++s) out[cfg.n_stride + s] = b * lv + kept + s;
    out[L - 1] = b * lv + lv - 1;
  }
  auto full = ops::gather_rows(table, std::span<const std::int64_t>(rows), Shape{B, L});
  return ops::add(full, positions);
}

ZeroMasked zero_mask_sequence(std::span<const double> values, double ratio, std::uint64_t seed) {
  check_ratio(ratio);
  const int n = static_cast<int>(values.size());
  const int count = static_cast<int>(std::lround(ratio * n));
  auto order = iota_vector(n);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  ZeroMasked out;
  out.values.assign(values.begin(), values.end());
  out.zeroed.assign(order.begin(), order.begin() + count);
  std::sort(out.zeroed.begin(), out.zeroed.end());
  for (int i : out.zeroed) out.values[i] = 0.0;
  return out;
}

template <typename T>
Var<T> stride_recon_loss(const Var<T>& predictions, std::span<const MaskPlan> plans,
                         const Tensor<T>& targets) {
  if (predictions.shape() != targets.shape || predictions.rank() != 3) {
    throw Error(Errc::shape_mismatch, "stride_recon_loss: predictions " +
                                          shape_str(predictions.shape()) + " vs targets " +
                                          shape_str(targets.shape));
  }
  const std::int64_t B = predictions.dim(0), n = predictions.dim(1), w = predictions.dim(2);
  if (static_cast<std::int64_t>(plans.size()) != B) {
    throw Error(Errc::plan_mismatch, "expected one mask plan per sample");
  }
  std::vector<std::int64_t> rows;
  for (std::int64_t b = 0; b < B; ++b) {
    for (int p : plans[b].masked()) rows.push_back(b * n + p);
  }
  auto& g = predictions.graph();
  if (rows.empty()) return g.constant(Tensor<T>::scalar(T(0)));
  const auto k = static_cast<std::int64_t>(rows.size());
  Tensor<T> target(Shape{k, w});
  for (std::int64_t i = 0; i < k; ++i) {
    std::copy_n(targets.ptr() + rows[i] * w, w, target.ptr() + i * w);
  }
  auto picked = ops::gather_rows(predictions, std::span<const std::int64_t>(rows), Shape{k});
  return ops::mse(picked, target);
}

template <typename T>
Var<T> size_recon_loss(const Var<T>& logits, std::span<const int> sizes) {
  auto& g = logits.graph();
  if (sizes.empty()) return g.constant(Tensor<T>::scalar(T(0)));
  const std::int64_t classes = logits.value().cols();
  for (int s : sizes) {
    if (s < 0 || s >= classes) {
      throw Error(Errc::class_out_of_range, "size class " + std::to_string(s) + " outside [0, " +
                                                std::to_string(classes) + ")");
    }
  }
  return ops::cross_entropy(logits, sizes);
}

template <typename T>
Var<T> interval_recon_loss(const Var<T>& predictions, std::span<const double> intervals) {
  auto& g = predictions.graph();
  if (intervals.empty()) return g.constant(Tensor<T>::scalar(T(0)));
  Tensor<T> target(predictions.shape());
  if (target.numel() != static_cast<std::int64_t>(intervals.size())) {
    throw Error(Errc::shape_mismatch, "interval_recon_loss: one prediction per position expected");
  }
  for (std::size_t i = 0; i < intervals.size(); ++i) target.data[i] = static_cast<T>(intervals[i]);
  return ops::mse(predictions, target);
}

PretrainMasks draw_masks(std::int64_t batch, const ModelConfig& cfg, std::uint64_t seed) {
  PretrainMasks m;
  Rng rng(seed);
  std::vector<double> dummy(static_cast<std::size_t>(cfg.m_seq), 1.0);
  for (std::int64_t b = 0; b < batch; ++b) {
    m.plans.push_back(make_mask_plan(cfg.n_stride, cfg.mask_ratio_stride, rng()));
    const auto size_seed = rng();
    const auto interval_seed = rng();
    if (cfg.multimodal) {
      m.size_zeroed.push_back(zero_mask_sequence(dummy, cfg.mask_ratio_seq, size_seed).zeroed);
      m.interval_zeroed.push_back(
          zero_mask_sequence(dummy, cfg.mask_ratio_seq, interval_seed).zeroed);
    }
  }
  return m;
}

template <typename T>
PretrainLosses<T> pretrain_forward(Graph<T>& g, const Model<T>& model, const ModelInput<T>& input,
                                   const PretrainMasks& masks) {
  using namespace ops;
  const auto& cfg = model.config();
  const std::int64_t B = input.batch, L = cfg.seq_len();
  const std::span<const MaskPlan> plans(masks.plans);

  ModelInput<T> corrupted = input;
  std::vector<std::int64_t> size_rows, interval_rows;
  std::vector<int> size_targets;
  std::vector<double> interval_targets;
  if (cfg.multimodal) {
    if (static_cast<std::int64_t>(masks.size_zeroed.size()) != B ||
        static_cast<std::int64_t>(masks.interval_zeroed.size()) != B) {
      throw Error(Errc::plan_mismatch, "expected one zeroing set per sample and modality");
    }
    for (std::int64_t b = 0; b < B; ++b) {
      for (int i : masks.size_zeroed[b]) {
        const auto k = b * cfg.m_seq + i;
        size_targets.push_back(static_cast<int>(std::lround(input.sizes.data[k])));
        corrupted.sizes.data[k] = T(0);
        size_rows.push_back(b * L + cfg.n_stride + i);
      }
      for (int i : masks.interval_zeroed[b]) {
        const auto k = b * cfg.m_seq + i;
        interval_targets.push_back(static_cast<double>(input.intervals.data[k]));
        corrupted.intervals.data[k] = T(0);
        interval_rows.push_back(b * L + cfg.n_stride + cfg.m_seq + i);
      }
    }
  }

  auto tokens = model.embed(g, corrupted);
  auto encoded = model.encode(g, mask_strides(tokens, plans, cfg));
  auto dec_in = decode_assemble(model.decoder_embed(g, encoded), plans, model.mask_token(g),
                                model.decoder_positions(g), cfg);
  auto decoded = model.decode(g, dec_in);

  PretrainLosses<T> out;
  auto stride_pred = model.stride_head(g, slice(decoded, 1, 0, cfg.n_stride));
  out.stride = stride_recon_loss(stride_pred, plans, input.strides);
  out.total = out.stride;
  if (cfg.multimodal) {
    auto pick = [&](const std::vector<std::int64_t>& rows) {
      return gather_rows(decoded, std::span<const std::int64_t>(rows),
                         Shape{static_cast<std::int64_t>(rows.size())});
    };
    out.size = size_rows.empty() ? g.constant(Tensor<T>::scalar(T(0)))
                                 : size_recon_loss(model.size_head(g, pick(size_rows)),
                                                   std::span<const int>(size_targets));
    out.interval = interval_rows.empty()
                       ? g.constant(Tensor<T>::scalar(T(0)))
                       : interval_recon_loss(model.interval_head(g, pick(interval_rows)),
                                             std::span<const double>(interval_targets));
    out.total = add(add(out.stride, out.size), out.interval);
  }
  return out;
}

void write_loss_csv(std::ostream& out, std::span<const PretrainLogRow> rows) {
  out << "step,lr,total,stride,size,interval\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.lr << ',' << r.total << ',' << r.stride << ',' << r.size << ','
        << r.interval << '\n';
  }
}

std::vector<PretrainLogRow> pretrain_loop(Model<float>& model, std::span<const FlowSample> data,
                                          const TrainConfig& cfg,
                                          const std::function<void(const PretrainLogRow&)>& on_step) {
  if (data.empty()) throw Error(Errc::empty_dataset, "pre-training needs at least one sample");
  if (!model.parts().decoder) {
    throw Error(Errc::invalid_config, "pre-training needs a model with a decoder");
  }
  if (cfg.batch <= 0 || cfg.steps < 0) throw Error(Errc::invalid_config, "bad batch/steps");
  const auto& mcfg = model.config();
  auto batch_rng = make_rng(cfg.seed, "batch");
  auto mask_rng = make_rng(cfg.seed, "mask");
  AdamW<float> opt(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
  auto params = model.params().all();
  const auto warmup = static_cast<std::int64_t>(std::lround(cfg.warmup_fraction * cfg.steps));

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  const std::size_t bsize = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), data.size());

  std::vector<PretrainLogRow> log;
  log.reserve(static_cast<std::size_t>(cfg.steps));
  std::vector<const FlowSample*> batch(bsize);
  for (int step = 0; step < cfg.steps; ++step) {
    if (cursor + bsize > order.size()) {
      std::shuffle(order.begin(), order.end(), batch_rng);
      cursor = 0;
    }
    for (std::size_t i = 0; i < bsize; ++i) batch[i] = &data[order[cursor + i]];
    cursor += bsize;

    auto input = make_input<float>(std::span<const FlowSample* const>(batch), mcfg);
    auto masks = draw_masks(static_cast<std::int64_t>(bsize), mcfg, mask_rng());
    const double lr = warmup_decay_lr(cfg.lr, step, warmup, cfg.steps);
    PretrainLogRow row;
    {
      Graph<float> g;
      auto losses = pretrain_forward(g, model, input, masks);
      g.backward(losses.total);
      row.step = step;
      row.lr = lr;
      row.total = losses.total.value().item();
      row.stride = losses.stride.value().item();
      if (losses.size.valid()) row.size = losses.size.value().item();
      if (losses.interval.valid()) row.interval = losses.interval.value().item();
    }
    opt.step(params, lr);
    log.push_back(row);
    if (on_step) on_step(row);
  }
  return log;
}

#define STRIDER_INSTANTIATE_PRETRAIN(T)                                                          \
  template Var<T> mask_strides(const Var<T>&, std::span<const MaskPlan>, const ModelConfig&);   \
  template Var<T> decode_assemble(const Var<T>&, std::span<const MaskPlan>, const Var<T>&,      \
                                  const Var<T>&, const ModelConfig&);                           \
  template Var<T> stride_recon_loss(const Var<T>&, std::span<const MaskPlan>, const Tensor<T>&); \
  template Var<T> size_recon_loss(const Var<T>&, std::span<const int>);                         \
  template Var<T> interval_recon_loss(const Var<T>&, std::span<const double>);                  \
  template PretrainLosses<T> pretrain_forward(Graph<T>&, const Model<T>&, const ModelInput<T>&, \
                                              const PretrainMasks&);

STRIDER_INSTANTIATE_PRETRAIN(float)
STRIDER_INSTANTIATE_PRETRAIN(double)

}  // namespace strider
