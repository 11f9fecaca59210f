#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "srst/features.hpp"
#include "srst/rng.hpp"
#include "srst/tensor.hpp"

namespace srst {

struct ModelConfig {
  int n_enc = 3;   // speech encoder layers
  int n_dec = 2;   // decoder layers
  int n_ctx = 1;   // context encoder layers
  int d_model = 64;
  int heads = 4;
  int d_ff = 128;
  int conv_channels = 16;
  int vocab = 0;  // must be set before building a model
  std::string context_mode = "none";       // none | text | audio
  std::string integration = "sequential";  // sequential | parallel
  double alpha = 0.04;    // gate regularization weight (used by the trainer)
  double dropout = 0.2;
  bool distance_penalty = true;

  bool has_context() const { return context_mode != "none"; }
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// --- building blocks ------------------------------------------------------

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct NormParams {
  Tensor gamma, beta;
};

struct FfnParams {
  Tensor w1, b1, w2, b2;
};

// Multi-head scaled dot-product attention over 2-D [T, d] streams. With
// distance_penalty, logits[i][j] += -log(1 + |i - j|) before the softmax
// (requires square logits). causal masks j > i.
Tensor mha(const AttentionParams& p, const Tensor& q_in, const Tensor& kv_in, int heads,
           bool causal, bool distance_penalty);

// Gate of the context-aware decoder layer: lambda = sigmoid(H wh + S ws + shift),
// combined = lambda * H + (1 - lambda) * S. No bias. Returns (lambda, combined).
std::pair<Tensor, Tensor> gate_combine(const Tensor& h, const Tensor& s, const Tensor& wh,
                                       const Tensor& ws, double logit_shift);

struct EncoderLayerParams {
  NormParams norm_self;
  AttentionParams self_attn;
  NormParams norm_ffn;
  FfnParams ffn;
};

struct DecoderLayerParams {
  NormParams norm_self;
  AttentionParams self_attn;
  NormParams norm_cross;
  AttentionParams cross_attn;
  // context path; undefined tensors when the model has no context mode
  NormParams norm_ctx;
  AttentionParams ctx_attn;
  Tensor gate_wh, gate_ws;
  NormParams norm_ffn;
  FfnParams ffn;
};

struct DecoderLayerOut {
  Tensor out;
  Tensor lambda;  // undefined when the context path was skipped
};

// One pre-norm decoder layer. x: [T_dec, d] stream, enc: encoder states,
// ctx: context encoding (undefined/empty => context path skipped, exactly the
// base layer). parallel selects which stream queries the context attention:
// the encoder cross-attention output (sequential) or the self-attention
// output (parallel). Residuals: the gate-combined stream feeds the FFN block;
// each attention sub-layer is wrapped residual(x + sublayer(norm(x))).
DecoderLayerOut decoder_layer(const DecoderLayerParams& p, const Tensor& x, const Tensor& enc,
                              const Tensor& ctx, bool parallel, int heads, double gate_shift,
                              double dropout_p, Rng* dropout_rng);

// Sinusoidal positions [t, d], no gradient.
Tensor positional_encoding(int t, int d);

// --- the model -------------------------------------------------------------

// Context for one sample; at most one of the two fields may be non-empty and
// it must match the model's context_mode.
struct ContextInput {
  std::vector<int> text;  // token ids of the previous fragment's translation
  FeatureMatrix audio;    // features of the previous fragment's audio
  bool empty() const { return text.empty() && audio.t == 0; }
};

struct ForwardResult {
  Tensor logits;                // [T_dec, vocab]
  std::vector<Tensor> lambdas;  // one [T_dec, d_model] per decoder layer when gated
};

class StModel {
 public:
  StModel(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }

  // Conv front-end (two k=3 stride-2 layers, 4x time reduction) + projection
  // + n_enc Transformer layers with distance-penalty self-attention.
  // Output [ceil(ceil(T/2)/2), d_model]. T < 4 frames is an error.
  Tensor encode_speech(const FeatureMatrix& f, Rng* dropout_rng) const;

  // Shared decoder embeddings + positions -> n_ctx encoder layers.
  // Empty ids -> undefined tensor.
  Tensor encode_context_text(const std::vector<int>& ids, Rng* dropout_rng) const;

  // Base speech encoder -> n_ctx context layers. Empty features -> undefined.
  Tensor encode_context_audio(const FeatureMatrix& f, Rng* dropout_rng) const;

  // Decoder over teacher-forced input ids. ctx undefined => base behavior.
  ForwardResult decode(const Tensor& enc, const std::vector<int>& dec_in, const Tensor& ctx,
                       Rng* dropout_rng) const;

  ForwardResult forward(const FeatureMatrix& features, const std::vector<int>& dec_in,
                        const ContextInput& ctx, Rng* dropout_rng) const;

  // Diagnostic: additive shift on every gate logit before the sigmoid
  // (large positive -> lambda saturates to 1 and context is ignored).
  void set_gate_logit_shift(double shift) { gate_shift_ = shift; }
  double gate_logit_shift() const { return gate_shift_; }

  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  Tensor parameter(const std::string& name) const;
  std::int64_t parameter_count() const;

 private:
  Tensor embed_positions(const std::vector<int>& ids, Rng* dropout_rng) const;
  Tensor context_layers(Tensor x, Rng* dropout_rng) const;

  ModelConfig cfg_;
  double gate_shift_ = 0.0;

  Tensor conv1_, conv2_;        // [C,1,3,3], [C,C,3,3]
  Tensor in_proj_w_, in_proj_b_;
  std::vector<EncoderLayerParams> enc_layers_;
  NormParams enc_norm_out_;

  Tensor embed_;  // [vocab, d_model], shared with the text context encoder
  std::vector<DecoderLayerParams> dec_layers_;
  NormParams dec_norm_out_;
  Tensor out_proj_w_, out_proj_b_;

  std::vector<EncoderLayerParams> ctx_layers_;
  NormParams ctx_norm_out_;

  std::vector<std::pair<std::string, Tensor>> params_;
};

// --- checkpoints ------------------------------------------------------------

// Binary checkpoint: magic, config JSON, named parameter manifest, f32 data.
void save_model(const StModel& model, const std::string& path);

// Exact restore: rebuilds the model from the stored config; every model
// parameter must be present in the file.
StModel load_model(const std::string& path);

// Name- and shape-matched partial initialization (e.g. a base checkpoint
// warm-starting a context-aware model). Parameters of `model` not in the file
// keep their current values. Returns (loaded, kept_fresh) counts.
std::pair<int, int> init_from_checkpoint(StModel& model, const std::string& path);

}  // namespace srst
