#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "strider/autodiff.hpp"
#include "strider/flow_repr.hpp"
#include "strider/rng.hpp"

namespace strider {

enum class BlockKind { mamba, trans };

std::string_view to_string(BlockKind kind) noexcept;
BlockKind parse_block_kind(std::string_view text);

struct ModelConfig {
  int d_enc = 256;
  int d_dec = 128;
  int e_enc = 512;  // SSM inner width, twice d_enc
  int e_dec = 256;
  int n_state = 16;
  int n_enc_blocks = 4;
  int n_dec_blocks = 2;
  BlockKind kind = BlockKind::mamba;
  bool multimodal = false;
  int n_heads = 8;
  int conv_width = 4;
  int stride_len = 4;
  int n_stride = 400;
  int m_seq = 20;
  int mtu = 1500;
  double mask_ratio_stride = 0.9;
  double mask_ratio_seq = 0.15;
  int attn_tile = 64;

  // Tokens seen by the encoder without masking, class token included.
  int seq_len() const noexcept { return n_stride + (multimodal ? 2 * m_seq : 0) + 1; }
  int size_classes() const noexcept { return mtu + 1; }
  static int dt_rank(int width) noexcept { return (width + 15) / 16; }

  void validate() const;
  /// Copies stride_len, n_stride, m_seq and mtu from a representation config.
  void match(const ReprConfig& repr);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// sin/cos features of a scalar: entry 2j is sin(x / 10000^(2j/D)) and entry
/// 2j+1 the matching cos.
std::vector<double> sinusoidal_encode(double x, int width);

/// Batched model input. strides are bytes / 255; sizes are clamped packet
/// sizes and intervals normalized inter-arrival values, both per position.
template <typename T>
struct ModelInput {
  std::int64_t batch = 0;
  Tensor<T> strides;    // [B, n_stride, stride_len]
  Tensor<T> sizes;      // [B, m_seq]
  Tensor<T> intervals;  // [B, m_seq]
};

template <typename T>
ModelInput<T> make_input(std::span<const FlowSample* const> samples, const ModelConfig& cfg);
template <typename T>
ModelInput<T> make_input(std::span<const FlowSample> samples, const ModelConfig& cfg);

/// Selective state-space block: RMS norm, x/z input projections, causal
/// depthwise conv + SiLU, input-dependent B, C and step size, scan, SiLU(z)
/// gate, output projection, residual.
template <typename T>
struct SsmBlock {
  Parameter<T>* norm = nullptr;
  Parameter<T>* in_x = nullptr;
  Parameter<T>* in_z = nullptr;
  Parameter<T>* conv_w = nullptr;
  Parameter<T>* conv_b = nullptr;
  Parameter<T>* proj_b = nullptr;
  Parameter<T>* proj_c = nullptr;
  Parameter<T>* dt_down = nullptr;
  Parameter<T>* dt_up = nullptr;
  Parameter<T>* dt_bias = nullptr;
  Parameter<T>* a_log = nullptr;
  Parameter<T>* out = nullptr;

  static SsmBlock create(ParameterSet<T>& params, const std::string& prefix, int width,
                         int inner, int n_state, int conv_width, Rng& rng);
  Var<T> forward(Graph<T>& g, const Var<T>& x) const;
};

/// Attention block with the residual taken from the normalized input:
/// X1 = LN(X), X3 = X1 + Attn(X1), X4 = LN(X3), out = X4 + FFN(X4), where
/// FFN(u) = (GELU(u W_gate) * u W_val) W_out.
template <typename T>
struct AttentionBlock {
  Parameter<T>* ln1_g = nullptr;
  Parameter<T>* ln1_b = nullptr;
  Parameter<T>* wq = nullptr;
  Parameter<T>* bq = nullptr;
  Parameter<T>* wk = nullptr;
  Parameter<T>* bk = nullptr;
  Parameter<T>* wv = nullptr;
  Parameter<T>* bv = nullptr;
  Parameter<T>* wo = nullptr;
  Parameter<T>* bo = nullptr;
  Parameter<T>* ln2_g = nullptr;
  Parameter<T>* ln2_b = nullptr;
  Parameter<T>* w_gate = nullptr;
  Parameter<T>* b_gate = nullptr;
  Parameter<T>* w_val = nullptr;
  Parameter<T>* b_val = nullptr;
  Parameter<T>* w_out = nullptr;
  Parameter<T>* b_out = nullptr;
  int n_heads = 1;
  int tile = 64;

  static AttentionBlock create(ParameterSet<T>& params, const std::string& prefix, int width,
                               int n_heads, int tile, Rng& rng);
  Var<T> forward(Graph<T>& g, const Var<T>& x) const;
};

template <typename T>
struct Block {
  BlockKind kind = BlockKind::mamba;
  SsmBlock<T> ssm;
  AttentionBlock<T> attn;

  Var<T> forward(Graph<T>& g, const Var<T>& x) const {
    return kind == BlockKind::mamba ? ssm.forward(g, x) : attn.forward(g, x);
  }
};

/// Which parts to instantiate. The encoder is always present.
struct ModelParts {
  bool decoder = false;  // reconstruction decoder and heads
  int n_classes = 0;     // classification head when > 0
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed, ModelParts parts);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }
  const ModelParts& parts() const noexcept { return parts_; }
  ParameterSet<T>& params() noexcept { return params_; }
  const ParameterSet<T>& params() const noexcept { return params_; }

  /// Embedded encoder tokens [B, seq_len, d_enc] with positions added:
  /// stride tokens, then (multimodal) size and interval tokens, then the
  /// class token last.
  Var<T> embed(Graph<T>& g, const ModelInput<T>& in) const;
  Var<T> encode(Graph<T>& g, const Var<T>& tokens) const;
  /// Classification head on the last token of encoded [B, L, d_enc].
  Var<T> head(Graph<T>& g, const Var<T>& encoded) const;
  /// embed -> encode -> head.
  Var<T> logits(Graph<T>& g, const ModelInput<T>& in) const;

  // Decoder pieces, used by pre-training.
  Var<T> decoder_embed(Graph<T>& g, const Var<T>& encoded) const;
  Var<T> mask_token(Graph<T>& g) const;
  Var<T> decoder_positions(Graph<T>& g) const;
  Var<T> decode(Graph<T>& g, const Var<T>& tokens) const;
  Var<T> stride_head(Graph<T>& g, const Var<T>& rows) const;
  Var<T> size_head(Graph<T>& g, const Var<T>& rows) const;
  Var<T> interval_head(Graph<T>& g, const Var<T>& rows) const;

  /// Parameter names belonging to the encoder (shared between the
  /// pre-training and fine-tuning models).
  bool is_encoder_param(std::string_view name) const;

 private:
  ModelConfig cfg_;
  ModelParts parts_;
  ParameterSet<T> params_;

  Parameter<T>* stride_w_ = nullptr;
  Parameter<T>* cls_ = nullptr;
  Parameter<T>* pos_ = nullptr;
  Parameter<T>* seg_stride_ = nullptr;
  Parameter<T>* seg_size_ = nullptr;
  Parameter<T>* seg_interval_ = nullptr;
  std::vector<Block<T>> encoder_;

  Parameter<T>* dec_w_ = nullptr;
  Parameter<T>* dec_b_ = nullptr;
  Parameter<T>* mask_ = nullptr;
  Parameter<T>* dec_pos_ = nullptr;
  std::vector<Block<T>> decoder_;
  Parameter<T>* dec_norm_g_ = nullptr;
  Parameter<T>* dec_norm_b_ = nullptr;
  Parameter<T>* stride_head_w_ = nullptr;
  Parameter<T>* stride_head_b_ = nullptr;
  Parameter<T>* size_head_w_ = nullptr;
  Parameter<T>* size_head_b_ = nullptr;
  Parameter<T>* interval_head_w_ = nullptr;
  Parameter<T>* interval_head_b_ = nullptr;

  Parameter<T>* head_norm_g_ = nullptr;
  Parameter<T>* head_norm_b_ = nullptr;
  Parameter<T>* head_fc1_w_ = nullptr;
  Parameter<T>* head_fc1_b_ = nullptr;
  Parameter<T>* head_fc2_w_ = nullptr;
  Parameter<T>* head_fc2_b_ = nullptr;
};

}  // namespace strider
