#include "strider/model.hpp"

#include <cmath>
#include <random>

#include "strider/ops.hpp"

namespace strider {

std::string_view to_string(BlockKind kind) noexcept {
  return kind == BlockKind::mamba ? "mamba" : "trans";
}

BlockKind parse_block_kind(std::string_view text) {
  if (text == "mamba") return BlockKind::mamba;
  if (text == "trans") return BlockKind::trans;
  throw Error(Errc::invalid_config, "block kind must be mamba or trans, got " + std::string(text));
}

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(Errc::invalid_config, "model: " + what); };
  if (d_enc <= 0 || d_dec <= 0 || n_state <= 0 || stride_len <= 0 || n_stride <= 0 ||
      m_seq <= 0 || mtu <= 0 || conv_width <= 0 || attn_tile <= 0) {
    bad("sizes must be positive");
  }
  if (n_enc_blocks < 0 || n_dec_blocks < 0) bad("block counts must be non-negative");
  if (e_enc != 2 * d_enc || e_dec != 2 * d_dec) bad("inner widths must be twice the model widths");
  if (d_enc % 2 != 0) bad("d_enc must be even for the sinusoidal encoding");
  if (kind == BlockKind::trans &&
      (n_heads <= 0 || d_enc % n_heads != 0 || d_dec % n_heads != 0)) {
    bad("widths must be divisible by n_heads");
  }
  if (!(mask_ratio_stride >= 0.0 && mask_ratio_stride < 1.0) ||
      !(mask_ratio_seq >= 0.0 && mask_ratio_seq < 1.0)) {
    bad("mask ratios must lie in [0, 1)");
  }
}

void ModelConfig::match(const ReprConfig& repr) {
  stride_len = repr.stride_len;
  n_stride = repr.n_strides();
  m_seq = repr.packets_for_sequences;
  mtu = repr.mtu;
}

std::vector<double> sinusoidal_encode(double x, int width) {
  std::vector<double> out(static_cast<std::size_t>(width));
  for (int i = 0; i < width; i += 2) {
    const double freq = std::pow(10000.0, static_cast<double>(i) / width);
    out[static_cast<std::size_t>(i)] = std::sin(x / freq);
    if (i + 1 < width) out[static_cast<std::size_t>(i + 1)] = std::cos(x / freq);
  }
  return out;
}

template <typename T>
ModelInput<T> make_input(std::span<const FlowSample* const> samples, const ModelConfig& cfg) {
  ModelInput<T> in;
  const auto B = static_cast<std::int64_t>(samples.size());
  in.batch = B;
  in.strides = Tensor<T>(Shape{B, cfg.n_stride, cfg.stride_len});
  in.sizes = Tensor<T>(Shape{B, cfg.m_seq});
  in.intervals = Tensor<T>(Shape{B, cfg.m_seq});
  const std::size_t bytes = static_cast<std::size_t>(cfg.n_stride) * cfg.stride_len;
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& s = *samples[static_cast<std::size_t>(b)];
    if (s.byte_array.size() != bytes || s.size_seq.size() != static_cast<std::size_t>(cfg.m_seq) ||
        s.interval_seq.size() != static_cast<std::size_t>(cfg.m_seq)) {
      throw Error(Errc::shape_mismatch, "flow sample does not match the model's representation");
    }
    T* dst = in.strides.ptr() + static_cast<std::size_t>(b) * bytes;
    for (std::size_t i = 0; i < bytes; ++i) dst[i] = static_cast<T>(s.byte_array[i]) / T(255);
    for (int t = 0; t < cfg.m_seq; ++t) {
      in.sizes.data[b * cfg.m_seq + t] = static_cast<T>(s.size_seq[t]);
      in.intervals.data[b * cfg.m_seq + t] = static_cast<T>(s.interval_seq[t]);
    }
  }
  return in;
}

template <typename T>
ModelInput<T> make_input(std::span<const FlowSample> samples, const ModelConfig& cfg) {
  std::vector<const FlowSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return make_input<T>(std::span<const FlowSample* const>(ptrs), cfg);
}

namespace {

template <typename T>
Tensor<T> uniform(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> normal(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

// Weight stored [in, out] with the usual 1/sqrt(fan_in) range.
template <typename T>
Parameter<T>* linear_weight(ParameterSet<T>& ps, const std::string& name, int in, int out,
                            Rng& rng) {
  return &ps.add(name, uniform<T>(Shape{in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
}

template <typename T>
Parameter<T>* zeros(ParameterSet<T>& ps, const std::string& name, Shape shape) {
  return &ps.add(name, Tensor<T>(std::move(shape)), false);
}

template <typename T>
Parameter<T>* ones(ParameterSet<T>& ps, const std::string& name, Shape shape) {
  return &ps.add(name, Tensor<T>(std::move(shape), T(1)), false);
}

template <typename T>
Var<T> P(Graph<T>& g, Parameter<T>* param) {
  return g.parameter(*param);
}

}  // namespace

template <typename T>
SsmBlock<T> SsmBlock<T>::create(ParameterSet<T>& ps, const std::string& prefix, int width,
                                int inner, int n_state, int conv_width, Rng& rng) {
  const int rank = ModelConfig::dt_rank(width);
  SsmBlock b;
  b.norm = ones(ps, prefix + ".norm", {width});
  b.in_x = linear_weight(ps, prefix + ".in_x", width, inner, rng);
  b.in_z = linear_weight(ps, prefix + ".in_z", width, inner, rng);
  b.conv_w = &ps.add(prefix + ".conv_w",
                     uniform<T>(Shape{inner, conv_width}, 1.0 / std::sqrt(double(conv_width)), rng));
  b.conv_b = zeros(ps, prefix + ".conv_b", {inner});
  b.proj_b = linear_weight(ps, prefix + ".proj_b", inner, n_state, rng);
  b.proj_c = linear_weight(ps, prefix + ".proj_c", inner, n_state, rng);
  b.dt_down = linear_weight(ps, prefix + ".dt_down", inner, rank, rng);
  b.dt_up = linear_weight(ps, prefix + ".dt_up", rank, inner, rng);
  // Step sizes start log-uniform in [1e-3, 1e-1]; the bias holds their
  // softplus preimage.
  Tensor<T> dt_bias(Shape{inner});
  std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
  for (auto& v : dt_bias.data) {
    double dt = std::exp(log_dt(rng));
    v = static_cast<T>(dt + std::log(-std::expm1(-dt)));
  }
  b.dt_bias = &ps.add(prefix + ".dt_bias", std::move(dt_bias), false);
  Tensor<T> a_log(Shape{inner, n_state});
  for (int e = 0; e < inner; ++e) {
    for (int n = 0; n < n_state; ++n) a_log.data[e * n_state + n] = static_cast<T>(std::log(n + 1.0));
  }
  b.a_log = &ps.add(prefix + ".a_log", std::move(a_log), false);
  b.out = linear_weight(ps, prefix + ".out", inner, width, rng);
  return b;
}

template <typename T>
Var<T> SsmBlock<T>::forward(Graph<T>& g, const Var<T>& x) const {
  using namespace ops;
  auto xn = rms_norm(x, P(g, norm));
  auto xp = matmul(xn, P(g, in_x));
  auto z = matmul(xn, P(g, in_z));
  auto xc = silu(causal_conv1d(xp, P(g, conv_w), P(g, conv_b)));
  auto bm = matmul(xc, P(g, proj_b));
  auto cm = matmul(xc, P(g, proj_c));
  auto delta = softplus(linear(matmul(xc, P(g, dt_down)), P(g, dt_up), P(g, dt_bias)));
  auto a = scale(exp(P(g, a_log)), T(-1));
  auto y = selective_scan(xc, delta, a, bm, cm);
  return add(matmul(mul(y, silu(z)), P(g, out)), x);
}

template <typename T>
AttentionBlock<T> AttentionBlock<T>::create(ParameterSet<T>& ps, const std::string& prefix,
                                            int width, int n_heads, int tile, Rng& rng) {
  AttentionBlock b;
  b.n_heads = n_heads;
  b.tile = tile;
  b.ln1_g = ones(ps, prefix + ".ln1_g", {width});
  b.ln1_b = zeros(ps, prefix + ".ln1_b", {width});
  b.wq = linear_weight(ps, prefix + ".wq", width, width, rng);
  b.bq = zeros(ps, prefix + ".bq", {width});
  b.wk = linear_weight(ps, prefix + ".wk", width, width, rng);
  b.bk = zeros(ps, prefix + ".bk", {width});
  b.wv = linear_weight(ps, prefix + ".wv", width, width, rng);
  b.bv = zeros(ps, prefix + ".bv", {width});
  b.wo = linear_weight(ps, prefix + ".wo", width, width, rng);
  b.bo = zeros(ps, prefix + ".bo", {width});
  b.ln2_g = ones(ps, prefix + ".ln2_g", {width});
  b.ln2_b = zeros(ps, prefix + ".ln2_b", {width});
  b.w_gate = linear_weight(ps, prefix + ".w_gate", width, 4 * width, rng);
  b.b_gate = zeros(ps, prefix + ".b_gate", {4 * width});
  b.w_val = linear_weight(ps, prefix + ".w_val", width, 4 * width, rng);
  b.b_val = zeros(ps, prefix + ".b_val", {4 * width});
  b.w_out = linear_weight(ps, prefix + ".w_out", 4 * width, width, rng);
  b.b_out = zeros(ps, prefix + ".b_out", {width});
  return b;
}

template <typename T>
Var<T> AttentionBlock<T>::forward(Graph<T>& g, const Var<T>& x) const {
  using namespace ops;
  auto x1 = layer_norm(x, P(g, ln1_g), P(g, ln1_b));
  auto q = linear(x1, P(g, wq), P(g, bq));
  auto k = linear(x1, P(g, wk), P(g, bk));
  auto v = linear(x1, P(g, wv), P(g, bv));
  auto x2 = linear(attention(q, k, v, n_heads, tile), P(g, wo), P(g, bo));
  auto x3 = add(x1, x2);
  auto x4 = layer_norm(x3, P(g, ln2_g), P(g, ln2_b));
  auto gate = gelu(linear(x4, P(g, w_gate), P(g, b_gate)));
  auto val = linear(x4, P(g, w_val), P(g, b_val));
  auto x5 = linear(mul(gate, val), P(g, w_out), P(g, b_out));
  return add(x4, x5);
}

namespace {

template <typename T>
Block<T> make_block(ParameterSet<T>& ps, const std::string& prefix, const ModelConfig& cfg,
                    int width, int inner, Rng& rng) {
  Block<T> b;
  b.kind = cfg.kind;
  if (cfg.kind == BlockKind::mamba) {
    b.ssm = SsmBlock<T>::create(ps, prefix, width, inner, cfg.n_state, cfg.conv_width, rng);
  } else {
    b.attn = AttentionBlock<T>::create(ps, prefix, width, cfg.n_heads, cfg.attn_tile, rng);
  }
  return b;
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed, ModelParts parts)
    : cfg_(cfg), parts_(parts) {
  cfg_.validate();
  auto rng = make_rng(seed, "init");
  const int d = cfg_.d_enc, L = cfg_.seq_len();
  stride_w_ = linear_weight(params_, "enc.stride_w", cfg_.stride_len, d, rng);
  cls_ = &params_.add("enc.cls", normal<T>(Shape{1, d}, 0.02, rng), false);
  pos_ = &params_.add("enc.pos", normal<T>(Shape{L, d}, 0.02, rng), false);
  if (cfg_.multimodal) {
    seg_stride_ = &params_.add("enc.seg_stride", normal<T>(Shape{d}, 0.02, rng), false);
    seg_size_ = &params_.add("enc.seg_size", normal<T>(Shape{d}, 0.02, rng), false);
    seg_interval_ = &params_.add("enc.seg_interval", normal<T>(Shape{d}, 0.02, rng), false);
  }
  for (int i = 0; i < cfg_.n_enc_blocks; ++i) {
    encoder_.push_back(
        make_block(params_, "enc.block" + std::to_string(i), cfg_, d, cfg_.e_enc, rng));
  }

  if (parts_.decoder) {
    const int dd = cfg_.d_dec;
    dec_w_ = linear_weight(params_, "dec.embed_w", d, dd, rng);
    dec_b_ = zeros(params_, "dec.embed_b", {dd});
    mask_ = &params_.add("dec.mask_token", normal<T>(Shape{1, dd}, 0.02, rng), false);
    dec_pos_ = &params_.add("dec.pos", normal<T>(Shape{L, dd}, 0.02, rng), false);
    for (int i = 0; i < cfg_.n_dec_blocks; ++i) {
      decoder_.push_back(
          make_block(params_, "dec.block" + std::to_string(i), cfg_, dd, cfg_.e_dec, rng));
    }
    dec_norm_g_ = ones(params_, "dec.norm_g", {dd});
    dec_norm_b_ = zeros(params_, "dec.norm_b", {dd});
    stride_head_w_ = linear_weight(params_, "dec.stride_head_w", dd, cfg_.stride_len, rng);
    stride_head_b_ = zeros(params_, "dec.stride_head_b", {cfg_.stride_len});
    if (cfg_.multimodal) {
      size_head_w_ = linear_weight(params_, "dec.size_head_w", dd, cfg_.size_classes(), rng);
      size_head_b_ = zeros(params_, "dec.size_head_b", {cfg_.size_classes()});
      interval_head_w_ = linear_weight(params_, "dec.interval_head_w", dd, 1, rng);
      interval_head_b_ = zeros(params_, "dec.interval_head_b", {1});
    }
  }

  if (parts_.n_classes > 0) {
    const int c = parts_.n_classes;
    head_norm_g_ = ones(params_, "head.norm_g", {d});
    head_norm_b_ = zeros(params_, "head.norm_b", {d});
    head_fc1_w_ = linear_weight(params_, "head.fc1_w", d, d, rng);
    head_fc1_b_ = zeros(params_, "head.fc1_b", {d});
    head_fc2_w_ = linear_weight(params_, "head.fc2_w", d, c, rng);
    head_fc2_b_ = zeros(params_, "head.fc2_b", {c});
  }
}

template <typename T>
bool Model<T>::is_encoder_param(std::string_view name) const {
  return name.starts_with("enc.");
}

template <typename T>
Var<T> Model<T>::embed(Graph<T>& g, const ModelInput<T>& in) const {
  using namespace ops;
  const std::int64_t B = in.batch;
  const int d = cfg_.d_enc;
  if (in.strides.shape != Shape{B, cfg_.n_stride, cfg_.stride_len}) {
    throw Error(Errc::shape_mismatch, "embed: strides " + shape_str(in.strides.shape));
  }
  std::vector<Var<T>> parts;
  auto strides = matmul(g.constant(in.strides), P(g, stride_w_));
  if (!cfg_.multimodal) {
    parts.push_back(strides);
  } else {
    if (in.sizes.shape != Shape{B, cfg_.m_seq} || in.intervals.shape != Shape{B, cfg_.m_seq}) {
      throw Error(Errc::shape_mismatch, "embed: sequence inputs do not match m_seq");
    }
    auto encode_seq = [&](const Tensor<T>& values) {
      Tensor<T> t(Shape{B, cfg_.m_seq, d});
      for (std::int64_t i = 0; i < values.numel(); ++i) {
        auto se = sinusoidal_encode(static_cast<double>(values.data[i]), d);
        for (int j = 0; j < d; ++j) t.data[i * d + j] = static_cast<T>(se[j]);
      }
      return g.constant(std::move(t));
    };
    parts.push_back(add(strides, P(g, seg_stride_)));
    parts.push_back(add(encode_seq(in.sizes), P(g, seg_size_)));
    parts.push_back(add(encode_seq(in.intervals), P(g, seg_interval_)));
  }
  parts.push_back(tile(P(g, cls_), B));
  return add(concat(parts, 1), P(g, pos_));
}

template <typename T>
Var<T> Model<T>::encode(Graph<T>& g, const Var<T>& tokens) const {
  Var<T> x = tokens;
  for (const auto& b : encoder_) x = b.forward(g, x);
  return x;
}

template <typename T>
Var<T> Model<T>::head(Graph<T>& g, const Var<T>& encoded) const {
  using namespace ops;
  if (parts_.n_classes <= 0) throw Error(Errc::invalid_config, "model has no classification head");
  if (encoded.rank() != 3 || encoded.dim(2) != cfg_.d_enc) {
    throw Error(Errc::shape_mismatch, "head: encoded " + shape_str(encoded.shape()));
  }
  const std::int64_t B = encoded.dim(0), L = encoded.dim(1);
  std::vector<std::int64_t> last(static_cast<std::size_t>(B));
  for (std::int64_t b = 0; b < B; ++b) last[b] = b * L + L - 1;
  auto cls = gather_rows(encoded, std::span<const std::int64_t>(last), Shape{B});
  auto h = layer_norm(cls, P(g, head_norm_g_), P(g, head_norm_b_));
  h = gelu(linear(h, P(g, head_fc1_w_), P(g, head_fc1_b_)));
  return linear(h, P(g, head_fc2_w_), P(g, head_fc2_b_));
}

template <typename T>
Var<T> Model<T>::logits(Graph<T>& g, const ModelInput<T>& in) const {
  return head(g, encode(g, embed(g, in)));
}

template <typename T>
Var<T> Model<T>::decoder_embed(Graph<T>& g, const Var<T>& encoded) const {
  return ops::linear(encoded, P(g, dec_w_), P(g, dec_b_));
}

template <typename T>
Var<T> Model<T>::mask_token(Graph<T>& g) const {
  return P(g, mask_);
}

template <typename T>
Var<T> Model<T>::decoder_positions(Graph<T>& g) const {
  return P(g, dec_pos_);
}

template <typename T>
Var<T> Model<T>::decode(Graph<T>& g, const Var<T>& tokens) const {
  Var<T> x = tokens;
  for (const auto& b : decoder_) x = b.forward(g, x);
  return ops::layer_norm(x, P(g, dec_norm_g_), P(g, dec_norm_b_));
}

template <typename T>
Var<T> Model<T>::stride_head(Graph<T>& g, const Var<T>& rows) const {
  return ops::linear(rows, P(g, stride_head_w_), P(g, stride_head_b_));
}

template <typename T>
Var<T> Model<T>::size_head(Graph<T>& g, const Var<T>& rows) const {
  return ops::linear(rows, P(g, size_head_w_), P(g, size_head_b_));
}

template <typename T>
Var<T> Model<T>::interval_head(Graph<T>& g, const Var<T>& rows) const {
  return ops::linear(rows, P(g, interval_head_w_), P(g, interval_head_b_));
}

template struct SsmBlock<float>;
template struct SsmBlock<double>;
template struct AttentionBlock<float>;
template struct AttentionBlock<double>;
template class Model<float>;
template class Model<double>;
template ModelInput<float> make_input(std::span<const FlowSample* const>, const ModelConfig&);
template ModelInput<double> make_input(std::span<const FlowSample* const>, const ModelConfig&);
template ModelInput<float> make_input(std::span<const FlowSample>, const ModelConfig&);
template ModelInput<double> make_input(std::span<const FlowSample>, const ModelConfig&);

}  // namespace strider
