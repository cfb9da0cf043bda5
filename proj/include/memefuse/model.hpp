#pragma once

// Encoder-decoder language model whose encoder layers each attend, with a
// single head, over frozen and linearly projected image patch features:
//
//   H_I       = VE(image) P + b_P                       (n x d)
//   Q         = H_t W_Q + b_Q,  K = H_I W_K + b_K,  V = H_I W_V + b_V
//   A_t       = softmax(Q K^T / sqrt(d)) V
//   H_{t+1}   = Layer_t(H_t) + A_t W_O + b_O
//
// Hidden states are stored one token per row.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "memefuse/autodiff.hpp"
#include "memefuse/digest.hpp"
#include "memefuse/errors.hpp"
#include "memefuse/preprocess.hpp"
#include "memefuse/random.hpp"
#include "memefuse/tokenizer.hpp"

namespace memefuse {

enum class AblationMode { full, no_vision, caption_append, text_only };

std::string_view to_string(AblationMode mode);
/// Accepts the canonical names plus "no_fusion_text_plus_caption" for caption_append.
AblationMode ablation_mode_from_string(std::string_view text);
inline bool uses_vision(AblationMode m) { return m == AblationMode::full; }
inline bool uses_caption(AblationMode m) { return m == AblationMode::caption_append; }
/// no_vision and text_only build the same encoder input.
bool modes_compatible(AblationMode trained, AblationMode requested);

enum class SizePreset { tiny, small, base, large };

std::string_view to_string(SizePreset preset);
SizePreset size_preset_from_string(std::string_view text);

struct ModelConfig {
  SizePreset preset = SizePreset::tiny;
  int layers = 2;          // encoder layers L, each with its own fusion block
  int decoder_layers = 2;
  int d = 8;               // hidden size
  int heads = 2;           // self-attention heads; fusion always uses one
  int d_ff = 16;
  int m_max = 128;         // max encoder tokens
  int max_target = 64;     // max decoder tokens including eos
  int patches = 4;         // n; a square number whose side divides 224
  int d_v = 8;             // raw vision feature size
  int vocab = 32;
  double init_std = 1.0;          // embeddings
  double fusion_init_std = 0.02;  // W_Q, W_K, W_V, W_O
  bool zero_init_fusion_out = false;

  /// Shapes for the named preset. Small/base/large follow the 60M/220M/780M
  /// encoder-decoder family and a 7x7-patch, 768-wide vision backbone.
  static ModelConfig for_preset(SizePreset preset, int vocab);
  void validate() const;
  std::int64_t parameter_count() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Key mask for a token sequence: true where the token is not padding.
ad::BoolMask key_mask_for(std::span<const int> tokens);

template <typename Scalar>
class FusionSeq2Seq {
 public:
  using Mat = ad::Matrix<Scalar>;
  using Param = ad::Parameter<Scalar>;
  using Var = ad::Var<Scalar>;
  using Tape = ad::Tape<Scalar>;

  struct Attention {
    int w_q, w_k, w_v, w_o;
  };
  struct FeedForward {
    int w_gate, w_up, w_down;
  };
  struct EncoderLayer {
    int norm_attn, norm_ff;
    Attention self;
    FeedForward ff;
  };
  struct DecoderLayer {
    int norm_self, norm_cross, norm_ff;
    Attention self, cross;
    FeedForward ff;
  };
  /// Single-head cross-attention of text queries over image keys/values.
  struct FusionBlock {
    int w_q, w_k, w_v, w_o, b_q, b_k, b_v, b_o;
  };

  struct EncoderState {
    Var hidden;                 // m x d
    ad::BoolMask key_mask;      // 1 x m
  };
  struct CrossAttention {
    Var output;   // m x d, before W_O
    Var weights;  // m x n, rows sum to one
  };

  FusionSeq2Seq(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<Param>& parameters() { return params_; }
  const std::vector<Param>& parameters() const { return params_; }
  Param& parameter(std::string_view name);
  const Param& parameter(std::string_view name) const;
  const FusionBlock& fusion(int layer) const { return fusion_.at(static_cast<std::size_t>(layer)); }

  void zero_grad();
  /// SHA-256 of names and raw values of the parameters whose name starts with `prefix`.
  std::string digest(std::string_view prefix = {}) const;
  std::string trainable_digest() const;

  // -- vision -------------------------------------------------------------
  /// Mean RGB of each patch of a g x g grid (n = g^2 rows, 3 columns).
  static Mat patch_means(const PixelGrid& pixels, int patches);
  /// Frozen extractor: patch means through a fixed linear map (n x d_v).
  Mat extract_vision(const PixelGrid& pixels) const;
  /// Trainable projection of raw features into the hidden size (n x d).
  Var project_vision(Tape& tape, const Mat& raw);

  // -- encoder ------------------------------------------------------------
  EncoderState embed_text(Tape& tape, std::span<const int> tokens);
  CrossAttention cross_attend(Tape& tape, const Var& text_hidden, const Var& image_hidden, const FusionBlock& block);
  /// The plain encoder layer (self-attention and feed-forward with residuals).
  Var encoder_layer(Tape& tape, const EncoderState& state, const Var& hidden, int layer);
  /// encoder_layer(h) + W_O cross_attend(h, H_I) + b_O
  Var fuse_layer(Tape& tape, const EncoderState& state, const Var& hidden, const Var& image_hidden, int layer,
                 std::vector<Mat>* attention = nullptr);
  /// Full-mode encoding needs `raw_vision`; every other mode ignores it.
  EncoderState encode(Tape& tape, std::span<const int> tokens, const Mat* raw_vision, AblationMode mode,
                      std::vector<Mat>* attention = nullptr);

  // -- decoder ------------------------------------------------------------
  Var decoder_logits(Tape& tape, const EncoderState& memory, std::span<const int> decoder_inputs);
  /// Mean cross-entropy over the non-pad positions of `targets` under teacher forcing.
  Var teacher_forced_loss(Tape& tape, const EncoderState& memory, std::span<const int> targets);
  /// Greedy argmax decoding from an encoded memory; stops at eos or max_len.
  std::vector<int> generate_greedy(const Mat& memory, const ad::BoolMask& key_mask, int max_len) const;

  static std::vector<int> shift_right(std::span<const int> targets);

 private:
  int add_param(std::string name, Mat value, bool trainable = true);
  Var bind(Tape& tape, int index) { return tape.parameter(params_[static_cast<std::size_t>(index)]); }
  Var attention(Tape& tape, const Attention& a, const Var& query_in, const Var& kv_in, const ad::BoolMask& allowed);
  Var feed_forward(Tape& tape, const FeedForward& f, const Var& x);
  Mat normal(Rng& rng, int rows, int cols, double stddev);

  ModelConfig config_;
  std::vector<Param> params_;
  int token_embedding_ = -1, encoder_positions_ = -1, decoder_positions_ = -1;
  int extractor_weight_ = -1, extractor_bias_ = -1;
  int projection_weight_ = -1, projection_bias_ = -1;
  int memory_norm_ = -1, final_norm_ = -1, lm_head_ = -1, lm_bias_ = -1;
  std::vector<EncoderLayer> encoder_;
  std::vector<FusionBlock> fusion_;
  std::vector<DecoderLayer> decoder_;
};

// ---------------------------------------------------------------------------

template <typename Scalar>
FusionSeq2Seq<Scalar>::FusionSeq2Seq(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const int d = config_.d;
  const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
  auto ones = [&](int n) { return Mat::Ones(1, n); };

  token_embedding_ = add_param("lm.embed.tokens", normal(rng, config_.vocab, d, config_.init_std));
  encoder_positions_ = add_param("lm.encoder.positions", normal(rng, config_.m_max, d, config_.init_std));
  decoder_positions_ = add_param("lm.decoder.positions", normal(rng, config_.max_target, d, config_.init_std));

  // The extractor is frozen: a fixed random mixing of patch colors.
  extractor_weight_ = add_param("vision.extractor.weight", normal(rng, 3, config_.d_v, 1.0), false);
  extractor_bias_ = add_param("vision.extractor.bias", Mat::Zero(1, config_.d_v), false);
  projection_weight_ = add_param("vision.projection.weight",
                                 normal(rng, config_.d_v, d, 1.0 / std::sqrt(static_cast<double>(config_.d_v))));
  projection_bias_ = add_param("vision.projection.bias", Mat::Zero(1, d));

  auto make_attention = [&](const std::string& prefix) {
    Attention a{};
    a.w_q = add_param(prefix + ".w_q", normal(rng, d, d, w_std));
    a.w_k = add_param(prefix + ".w_k", normal(rng, d, d, w_std));
    a.w_v = add_param(prefix + ".w_v", normal(rng, d, d, w_std));
    a.w_o = add_param(prefix + ".w_o", normal(rng, d, d, w_std));
    return a;
  };
  auto make_ff = [&](const std::string& prefix) {
    FeedForward f{};
    f.w_gate = add_param(prefix + ".w_gate", normal(rng, d, config_.d_ff, w_std));
    f.w_up = add_param(prefix + ".w_up", normal(rng, d, config_.d_ff, w_std));
    f.w_down = add_param(prefix + ".w_down",
                         normal(rng, config_.d_ff, d, 1.0 / std::sqrt(static_cast<double>(config_.d_ff))));
    return f;
  };

  for (int i = 0; i < config_.layers; ++i) {
    const std::string p = "lm.encoder." + std::to_string(i);
    EncoderLayer layer{};
    layer.norm_attn = add_param(p + ".norm_attn", ones(d));
    layer.self = make_attention(p + ".self");
    layer.norm_ff = add_param(p + ".norm_ff", ones(d));
    layer.ff = make_ff(p + ".ff");
    encoder_.push_back(layer);

    const std::string f = "fusion." + std::to_string(i);
    const double fs = config_.fusion_init_std;
    FusionBlock block{};
    block.w_q = add_param(f + ".w_q", normal(rng, d, d, fs));
    block.w_k = add_param(f + ".w_k", normal(rng, d, d, fs));
    block.w_v = add_param(f + ".w_v", normal(rng, d, d, fs));
    block.w_o = add_param(f + ".w_o", config_.zero_init_fusion_out ? Mat::Zero(d, d) : normal(rng, d, d, fs));
    block.b_q = add_param(f + ".b_q", Mat::Zero(1, d));
    block.b_k = add_param(f + ".b_k", Mat::Zero(1, d));
    block.b_v = add_param(f + ".b_v", Mat::Zero(1, d));
    block.b_o = add_param(f + ".b_o", Mat::Zero(1, d));
    fusion_.push_back(block);
  }
  for (int i = 0; i < config_.decoder_layers; ++i) {
    const std::string p = "lm.decoder." + std::to_string(i);
    DecoderLayer layer{};
    layer.norm_self = add_param(p + ".norm_self", ones(d));
    layer.self = make_attention(p + ".self");
    layer.norm_cross = add_param(p + ".norm_cross", ones(d));
    layer.cross = make_attention(p + ".cross");
    layer.norm_ff = add_param(p + ".norm_ff", ones(d));
    layer.ff = make_ff(p + ".ff");
    decoder_.push_back(layer);
  }
  memory_norm_ = add_param("lm.decoder.memory_norm", ones(d));
  final_norm_ = add_param("lm.decoder.final_norm", ones(d));
  lm_head_ = add_param("lm.head.weight", normal(rng, d, config_.vocab, w_std));
  lm_bias_ = add_param("lm.head.bias", Mat::Zero(1, config_.vocab));
}

template <typename Scalar>
int FusionSeq2Seq<Scalar>::add_param(std::string name, Mat value, bool trainable) {
  Param p;
  p.name = std::move(name);
  p.value = std::move(value);
  p.trainable = trainable;
  p.zero_grad();
  params_.push_back(std::move(p));
  return static_cast<int>(params_.size()) - 1;
}

template <typename Scalar>
typename FusionSeq2Seq<Scalar>::Mat FusionSeq2Seq<Scalar>::normal(Rng& rng, int rows, int cols, double stddev) {
  Mat m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = static_cast<Scalar>(rng.normal(0.0, stddev));
  return m;
}

template <typename Scalar>
typename FusionSeq2Seq<Scalar>::Param& FusionSeq2Seq<Scalar>::parameter(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw ArgumentError("no parameter named '" + std::string(name) + "'");
}

template <typename Scalar>
const typename FusionSeq2Seq<Scalar>::Param& FusionSeq2Seq<Scalar>::parameter(std::string_view name) const {
  return const_cast<FusionSeq2Seq*>(this)->parameter(name);
}

template <typename Scalar>
void FusionSeq2Seq<Scalar>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename Scalar>
std::string FusionSeq2Seq<Scalar>::digest(std::string_view prefix) const {
  Sha256 h;
  for (const auto& p : params_) {
    if (!std::string_view(p.name).starts_with(prefix)) continue;
    h.update_field(p.name);
    h.update(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(p.value.data()),
                                           static_cast<std::size_t>(p.value.size()) * sizeof(Scalar)));
  }
  return h.hex_digest();
}

template <typename Scalar>
std::string FusionSeq2Seq<Scalar>::trainable_digest() const {
  Sha256 h;
  for (const auto& p : params_) {
    if (!p.trainable) continue;
    h.update_field(p.name);
    h.update(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(p.value.data()),
                                           static_cast<std::size_t>(p.value.size()) * sizeof(Scalar)));
  }
  return h.hex_digest();
}

template <typename Scalar>
typename FusionSeq2Seq<Scalar>::Mat FusionSeq2Seq<Scalar>::patch_means(const PixelGrid& pixels, int patches) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(patches))));
  if (side * side != patches || kImageSize % side != 0)
    throw ConfigError("patch count " + std::to_string(patches) + " does not tile a 224x224 image");
  const int span = kImageSize / side;
  Mat out = Mat::Zero(patches, 3);
  for (int py = 0; py < side; ++py)
    for (int px = 0; px < side; ++px) {
      const int row = py * side + px;
      for (int y = py * span; y < (py + 1) * span; ++y)
        for (int x = px * span; x < (px + 1) * span; ++x)
          for (int c = 0; c < 3; ++c) out(row, c) += static_cast<Scalar>(pixels.at(y, x, c));
    }
  out /= static_cast<Scalar>(span * span);
  return out;
}

template <typename Scalar>
typename FusionSeq2Seq<Scalar>::Mat FusionSeq2Seq<Scalar>::extract_vision(const PixelGrid& pixels) const {
  const Mat means = patch_means(pixels, config_.patches);
  Mat raw = means * params_[static_cast<std::size_t>(extractor_weight_)].value;
  raw.rowwise() += params_[static_cast<std::size_t>(extractor_bias_)].value.row(0);
  return raw;
}

template <typename Scalar>
typename FusionSeq2Seq<Scalar>::Var FusionSeq2Seq<Scalar>::project_vision(Tape& tape, const Mat& raw) {
  if (raw.cols() != config_.d_v)
    throw ShapeError("vision features have " + std::to_string(raw.cols()) + " columns, expected " +
                     std::to_string(config_.d_v));
  return ad::add_row(ad::matmul(tape.constant(raw), bind(tape, projection_weight_)), bind(tape, projection_bias_));
}

template <typename Scalar>
typename FusionSeq2Seq<Scalar>::EncoderState FusionSeq2Seq<Scalar>::embed_text(Tape& tape,
                                                                                std::span<const int> tokens) {
  if (tokens.empty()) throw EncodingError("cannot embed an empty token sequence");
  if (static_cast<int>(tokens.size()) > config_.m_max)
    throw EncodingError("sequence of " + std::to_string(tokens.size()) + " tokens exceeds m_max " +
                        std::to_string(config_.m_max));
  for (int id : tokens)
    if (id < 0 || id >= config_.vocab) throw EncodingError("token id " + std::to_string(id) + " outside vocabulary");
  Var tok = ad::gather_rows(bind(tape, token_embedding_), tokens);
  Var pos = ad::top_rows(bind(tape, encoder_positions_), static_cast<Eigen::Index>(tokens.size()));
  return {ad::add(tok, pos), key_mask_for(tokens)};
}

template <typename Scalar>
typename FusionSeq2Seq<Scalar>::Var FusionSeq2Seq<Scalar>::attention(Tape& tape, const Attention& a,
                                                                     const Var& query_in, const Var& kv_in,
                                                                     const ad::BoolMask& allowed) {
  const int heads = config_.heads;
  const int dh = config_.d / heads;
  Var q = ad::matmul(query_in, bind(tape, a.w_q));
  Var k = ad::matmul(kv_in, bind(tape, a.w_k));
  Var v = ad::matmul(kv_in, bind(tape, a.w_v));
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  std::vector<Var> outs;
  for (int h = 0; h < heads; ++h) {
    Var qh = ad::slice_cols(q, h * dh, dh);
    Var kh = ad::slice_cols(k, h * dh, dh);
    Var vh = ad::slice_cols(v, h * dh, dh);
    Var p = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt), &allowed);
    outs.push_back(ad::matmul(p, vh));
  }
  Var joined = heads == 1 ? outs[0] : ad::hcat<Scalar>(outs);
  return ad::matmul(joined, bind(tape, a.w_o));
}

template <typename Scalar>
typename FusionSeq2Seq<Scalar>::Var FusionSeq2Seq<Scalar>::feed_forward(Tape& tape, const FeedForward& f,
                                                                        const Var& x) {
  Var gate = ad::gelu(ad::matmul(x, bind(tape, f.w_gate)));
  Var up = ad::matmul(x, bind(tape, f.w_up));
  return ad::matmul(ad::mul(gate, up), bind(tape, f.w_down));
}

template <typename Scalar>
typename FusionSeq2Seq<Scalar>::CrossAttention FusionSeq2Seq<Scalar>::cross_attend(Tape& tape,
                                                                                   const Var& text_hidden,
                                                                                   const Var& image_hidden,
                                                                                   const FusionBlock& block) {
  const int d = config_.d;
  if (text_hidden.cols() != d || image_hidden.cols() != d)
    throw ShapeError("cross_attend expects hidden size " + std::to_string(d) + ", got " +
                     std::to_string(text_hidden.cols()) + " and " + std::to_string(image_hidden.cols()));
  Var q = ad::add_row(ad::matmul(text_hidden, bind(tape, block.w_q)), bind(tape, block.b_q));
  Var k = ad::add_row(ad::matmul(image_hidden, bind(tape, block.w_k)), bind(tape, block.b_k));
  Var v = ad::add_row(ad::matmul(image_hidden, bind(tape, block.w_v)), bind(tape, block.b_v));
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(d));
  Var weights = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), inv_sqrt));
  return {ad::matmul(weights, v), weights};
}

template <typename Scalar>
typename FusionSeq2Seq<Scalar>::Var FusionSeq2Seq<Scalar>::encoder_layer(Tape& tape, const EncoderState& state,
                                                                         const Var& hidden, int layer) {
  const auto& L = encoder_.at(static_cast<std::size_t>(layer));
  const auto m = hidden.rows();
  ad::BoolMask allowed = state.key_mask.replicate(m, 1);
  Var normed = ad::rms_norm(hidden, bind(tape, L.norm_attn));
  Var h = ad::add(hidden, attention(tape, L.self, normed, normed, allowed));
  Var normed_ff = ad::rms_norm(h, bind(tape, L.norm_ff));
  return ad::add(h, feed_forward(tape, L.ff, normed_ff));
}

template <typename Scalar>
typename FusionSeq2Seq<Scalar>::Var FusionSeq2Seq<Scalar>::fuse_layer(Tape& tape, const EncoderState& state,
                                                                      const Var& hidden, const Var& image_hidden,
                                                                      int layer, std::vector<Mat>* attention_out) {
  if (layer < 0 || layer >= config_.layers) throw ArgumentError("layer index out of range");
  const FusionBlock& block = fusion_[static_cast<std::size_t>(layer)];
  Var base = encoder_layer(tape, state, hidden, layer);
  CrossAttention ca = cross_attend(tape, hidden, image_hidden, block);
  if (attention_out) attention_out->push_back(ca.weights.value());
  Var fused = ad::add_row(ad::matmul(ca.output, bind(tape, block.w_o)), bind(tape, block.b_o));
  return ad::add(base, fused);
}

template <typename Scalar>
typename FusionSeq2Seq<Scalar>::EncoderState FusionSeq2Seq<Scalar>::encode(Tape& tape, std::span<const int> tokens,
                                                                           const Mat* raw_vision, AblationMode mode,
                                                                           std::vector<Mat>* attention_out) {
  EncoderState state = embed_text(tape, tokens);
  Var image;
  if (uses_vision(mode)) {
    if (!raw_vision) throw PipelineError("full-mode encoding needs image features");
    image = project_vision(tape, *raw_vision);
  }
  Var h = state.hidden;
  for (int i = 0; i < config_.layers; ++i) {
    h = uses_vision(mode) ? fuse_layer(tape, state, h, image, i, attention_out) : encoder_layer(tape, state, h, i);
  }
  state.hidden = h;
  return state;
}

template <typename Scalar>
std::vector<int> FusionSeq2Seq<Scalar>::shift_right(std::span<const int> targets) {
  std::vector<int> in;
  in.reserve(targets.size());
  in.push_back(token_id::pad);
  for (std::size_t i = 0; i + 1 < targets.size(); ++i) in.push_back(targets[i]);
  return in;
}

template <typename Scalar>
typename FusionSeq2Seq<Scalar>::Var FusionSeq2Seq<Scalar>::decoder_logits(Tape& tape, const EncoderState& memory,
                                                                          std::span<const int> decoder_inputs) {
  const auto t = static_cast<Eigen::Index>(decoder_inputs.size());
  if (t == 0) throw ArgumentError("decoder needs at least one input token");
  if (t > config_.max_target)
    throw EncodingError("decoder sequence of " + std::to_string(t) + " exceeds max_target " +
                        std::to_string(config_.max_target));
  Var mem = ad::rms_norm(memory.hidden, bind(tape, memory_norm_));
  Var h = ad::add(ad::gather_rows(bind(tape, token_embedding_), decoder_inputs),
                  ad::top_rows(bind(tape, decoder_positions_), t));
  ad::BoolMask causal(t, t);
  for (Eigen::Index r = 0; r < t; ++r)
    for (Eigen::Index c = 0; c < t; ++c) causal(r, c) = c <= r;
  ad::BoolMask cross_allowed = memory.key_mask.replicate(t, 1);
  for (const auto& L : decoder_) {
    Var n1 = ad::rms_norm(h, bind(tape, L.norm_self));
    h = ad::add(h, attention(tape, L.self, n1, n1, causal));
    Var n2 = ad::rms_norm(h, bind(tape, L.norm_cross));
    h = ad::add(h, attention(tape, L.cross, n2, mem, cross_allowed));
    Var n3 = ad::rms_norm(h, bind(tape, L.norm_ff));
    h = ad::add(h, feed_forward(tape, L.ff, n3));
  }
  Var out = ad::rms_norm(h, bind(tape, final_norm_));
  return ad::add_row(ad::matmul(out, bind(tape, lm_head_)), bind(tape, lm_bias_));
}

template <typename Scalar>
typename FusionSeq2Seq<Scalar>::Var FusionSeq2Seq<Scalar>::teacher_forced_loss(Tape& tape,
                                                                               const EncoderState& memory,
                                                                               std::span<const int> targets) {
  if (targets.empty()) throw ArgumentError("target sequence is empty");
  const std::vector<int> inputs = shift_right(targets);
  Var logits = decoder_logits(tape, memory, inputs);
  return ad::cross_entropy(logits, targets, token_id::pad);
}

template <typename Scalar>
std::vector<int> FusionSeq2Seq<Scalar>::generate_greedy(const Mat& memory, const ad::BoolMask& key_mask,
                                                        int max_len) const {
  if (max_len < 1) throw ArgumentError("max_len must be at least 1");
  max_len = std::min(max_len, config_.max_target);
  // A grad-disabled tape binds parameters by value and never writes to them.
  auto& self = const_cast<FusionSeq2Seq&>(*this);
  std::vector<int> out;
  std::vector<int> inputs{token_id::pad};
  while (static_cast<int>(out.size()) < max_len) {
    Tape tape(false);
    EncoderState mem{tape.constant(memory), key_mask};
    Var logits = self.decoder_logits(tape, mem, inputs);
    const auto last = logits.value().row(logits.rows() - 1);
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < last.size(); ++c)
      if (last(c) > last(best)) best = c;
    if (best == token_id::eos) break;
    out.push_back(static_cast<int>(best));
    inputs.push_back(static_cast<int>(best));
  }
  return out;
}

extern template class FusionSeq2Seq<double>;
extern template class FusionSeq2Seq<float>;

}  // namespace memefuse
