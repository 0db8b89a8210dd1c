#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "strider/model.hpp"
#include "strider/train_config.hpp"

namespace strider {

/// Random split of the stride tokens into visible and masked ones. The class
/// token is not part of the permutation and is always visible.
struct MaskPlan {
  std::vector<int> permutation;  // shuffled stride positions
  int n_visible = 0;             // kept strides + the class token
  std::uint64_t seed = 0;

  int n_kept() const noexcept { return n_visible - 1; }
  std::span<const int> kept() const {
    return std::span<const int>(permutation).first(static_cast<std::size_t>(n_kept()));
  }
  std::span<const int> masked() const {
    return std::span<const int>(permutation).subspan(static_cast<std::size_t>(n_kept()));
  }
};

/// round((1 - ratio) * n_stride) + 1. Throws RatioOutOfRange.
int visible_count(int n_stride, double ratio);
MaskPlan make_mask_plan(int n_stride, double ratio, std::uint64_t seed);

/// Applies / inverts the plan's permutation on a per-stride vector.
template <typename V>
std::vector<V> shuffle(std::span<const V> values, const MaskPlan& plan) {
  std::vector<V> out(values.size());
  for (std::size_t i = 0; i < plan.permutation.size(); ++i) out[i] = values[plan.permutation[i]];
  return out;
}
template <typename V>
std::vector<V> unshuffle(std::span<const V> shuffled, const MaskPlan& plan) {
  std::vector<V> out(shuffled.size());
  for (std::size_t i = 0; i < plan.permutation.size(); ++i) out[plan.permutation[i]] = shuffled[i];
  return out;
}

/// Encoder input during pre-training: per sample, the kept stride tokens in
/// shuffled order, then the sequence tokens (multimodal), then the class
/// token. tokens is [B, seq_len, D]; the result [B, n_visible (+2 m_seq), D].
template <typename T>
Var<T> mask_strides(const Var<T>& tokens, std::span<const MaskPlan> plans, const ModelConfig& cfg);

/// Decoder input of full length: projected encoder rows restored to their
/// original positions, a shared mask token at masked positions, plus
/// decoder positions. Throws PlanMismatch.
template <typename T>
Var<T> decode_assemble(const Var<T>& projected, std::span<const MaskPlan> plans,
                       const Var<T>& mask_token, const Var<T>& positions, const ModelConfig& cfg);

struct ZeroMasked {
  std::vector<double> values;
  std::vector<int> zeroed;  // ascending positions set to zero
};

/// Sets round(ratio * n) positions to zero. Throws RatioOutOfRange.
ZeroMasked zero_mask_sequence(std::span<const double> values, double ratio, std::uint64_t seed);

/// MSE between stride predictions and raw normalized bytes over masked
/// positions only. predictions and targets are [B, n_stride, stride_len].
template <typename T>
Var<T> stride_recon_loss(const Var<T>& predictions, std::span<const MaskPlan> plans,
                         const Tensor<T>& targets);

/// Cross-entropy of size logits [K, mtu+1] at zeroed positions against the
/// clamped sizes. Zero when K = 0. Throws ClassOutOfRange.
template <typename T>
Var<T> size_recon_loss(const Var<T>& logits, std::span<const int> sizes);

/// MSE of interval predictions [K, 1] at zeroed positions. Zero when K = 0.
template <typename T>
Var<T> interval_recon_loss(const Var<T>& predictions, std::span<const double> intervals);

template <typename T>
struct PretrainLosses {
  Var<T> total;
  Var<T> stride;
  Var<T> size;      // invalid for unimodal models
  Var<T> interval;  // invalid for unimodal models
};

/// One batch worth of masking decisions.
struct PretrainMasks {
  std::vector<MaskPlan> plans;
  std::vector<std::vector<int>> size_zeroed;
  std::vector<std::vector<int>> interval_zeroed;
};

PretrainMasks draw_masks(std::int64_t batch, const ModelConfig& cfg, std::uint64_t seed);

/// Full reconstruction forward pass. `input` holds the uncorrupted sample
/// values; zeroing of sequence positions happens here.
template <typename T>
PretrainLosses<T> pretrain_forward(Graph<T>& g, const Model<T>& model, const ModelInput<T>& input,
                                   const PretrainMasks& masks);

struct PretrainLogRow {
  int step = 0;
  double lr = 0.0;
  double total = 0.0;
  double stride = 0.0;
  double size = 0.0;
  double interval = 0.0;
};

void write_loss_csv(std::ostream& out, std::span<const PretrainLogRow> rows);

/// Trains `model` (which must have a decoder) for cfg.steps steps. Batches
/// are drawn by epoch-wise shuffling; one log row per step.
std::vector<PretrainLogRow> pretrain_loop(Model<float>& model, std::span<const FlowSample> data,
                                          const TrainConfig& cfg,
                                          const std::function<void(const PretrainLogRow&)>& on_step = {});

}  // namespace strider
