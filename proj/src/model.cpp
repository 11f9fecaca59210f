#include "srst/model.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "srst/errors.hpp"

namespace srst {

using nlohmann::json;

// --- config -----------------------------------------------------------------

void ModelConfig::validate() const {
  if (n_enc < 1 || n_dec < 1 || n_ctx < 1)
    throw UsageError("ModelConfig: layer counts must be >= 1");
  if (d_model < 2 || heads < 1 || d_model % heads != 0)
    throw UsageError("ModelConfig: heads must divide d_model");
  if (d_ff < 1 || conv_channels < 1) throw UsageError("ModelConfig: bad width");
  if (vocab < 5) throw UsageError("ModelConfig: vocab must cover specials (>= 5)");
  if (context_mode != "none" && context_mode != "text" && context_mode != "audio")
    throw UsageError("ModelConfig: context_mode must be none|text|audio");
  if (integration != "sequential" && integration != "parallel")
    throw UsageError("ModelConfig: integration must be sequential|parallel");
  if (alpha < 0.0) throw UsageError("ModelConfig: alpha must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) throw UsageError("ModelConfig: dropout in [0, 1)");
}

std::string ModelConfig::to_json() const {
  json j;
  j["n_enc"] = n_enc;
  j["n_dec"] = n_dec;
  j["n_ctx"] = n_ctx;
  j["d_model"] = d_model;
  j["heads"] = heads;
  j["d_ff"] = d_ff;
  j["conv_channels"] = conv_channels;
  j["vocab"] = vocab;
  j["context_mode"] = context_mode;
  j["integration"] = integration;
  j["alpha"] = alpha;
  j["dropout"] = dropout;
  j["distance_penalty"] = distance_penalty;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("ModelConfig: bad json: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg.n_enc = j.at("n_enc").get<int>();
    cfg.n_dec = j.at("n_dec").get<int>();
    cfg.n_ctx = j.at("n_ctx").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.d_ff = j.at("d_ff").get<int>();
    cfg.conv_channels = j.at("conv_channels").get<int>();
    cfg.vocab = j.at("vocab").get<int>();
    cfg.context_mode = j.at("context_mode").get<std::string>();
    cfg.integration = j.at("integration").get<std::string>();
    cfg.alpha = j.at("alpha").get<double>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.distance_penalty = j.at("distance_penalty").get<bool>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("ModelConfig: missing field: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// --- building blocks ----------------------------------------------------------

Tensor positional_encoding(int t, int d) {
  if (t < 0 || d < 2) throw UsageError("positional_encoding: bad shape");
  std::vector<double> v(static_cast<size_t>(t) * static_cast<size_t>(d));
  for (int pos = 0; pos < t; ++pos) {
    for (int i = 0; i * 2 < d; ++i) {
      const double rate = std::exp(-std::log(10000.0) * (2.0 * i) / d);
      const double angle = pos * rate;
      v[static_cast<size_t>(pos) * d + 2 * i] = std::sin(angle);
      if (2 * i + 1 < d) v[static_cast<size_t>(pos) * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor::from_vector({t, d}, std::move(v));
}

Tensor mha(const AttentionParams& p, const Tensor& q_in, const Tensor& kv_in, int heads,
           bool causal, bool distance_penalty) {
  if (q_in.shape().size() != 2 || kv_in.shape().size() != 2)
    throw DimensionError("mha: expects 2-D streams, got " + shape_str(q_in.shape()) + " and " +
                         shape_str(kv_in.shape()));
  const int d = q_in.shape()[1];
  if (kv_in.shape()[1] != d)
    throw DimensionError("mha: query width " + std::to_string(d) + " != key width " +
                         std::to_string(kv_in.shape()[1]));
  if (heads < 1 || d % heads != 0) throw UsageError("mha: heads must divide the model width");
  const int tq = q_in.shape()[0], tk = kv_in.shape()[0], dh = d / heads;
  if ((causal || distance_penalty) && tq != tk)
    throw UsageError("mha: causal/distance-penalty attention needs square logits");

  Tensor q = linear(q_in, p.wq, p.bq);
  Tensor k = linear(kv_in, p.wk, p.bk);
  Tensor v = linear(kv_in, p.wv, p.bv);

  Tensor penalty;
  if (distance_penalty) {
    std::vector<double> vals(static_cast<size_t>(tq) * static_cast<size_t>(tk));
    for (int i = 0; i < tq; ++i)
      for (int j = 0; j < tk; ++j)
        vals[static_cast<size_t>(i) * tk + j] = -std::log(1.0 + std::abs(i - j));
    penalty = Tensor::from_vector({tq, tk}, std::move(vals));
  }
  std::vector<std::uint8_t> keep;
  if (causal) {
    keep.resize(static_cast<size_t>(tq) * static_cast<size_t>(tk));
    for (int i = 0; i < tq; ++i)
      for (int j = 0; j < tk; ++j) keep[static_cast<size_t>(i) * tk + j] = j <= i ? 1 : 0;
  }

  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<size_t>(heads));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor logits = scale(matmul(qh, transpose2d(kh)), inv_sqrt);
    if (penalty.defined()) logits = add(logits, penalty);
    Tensor attn = causal ? softmax_masked(logits, keep) : softmax(logits, 1);
    head_outs.push_back(matmul(attn, vh));
  }
  return linear(concat_cols(head_outs), p.wo, p.bo);
}

std::pair<Tensor, Tensor> gate_combine(const Tensor& h, const Tensor& s, const Tensor& wh,
                                       const Tensor& ws, double logit_shift) {
  if (h.shape() != s.shape())
    throw DimensionError("gate_combine: H " + shape_str(h.shape()) + " != S " +
                         shape_str(s.shape()));
  Tensor logits = add(matmul(h, wh), matmul(s, ws));
  if (logit_shift != 0.0) logits = add_scalar(logits, logit_shift);
  Tensor lambda = sigmoid(logits);
  Tensor combined = add(mul(lambda, h), mul(add_scalar(scale(lambda, -1.0), 1.0), s));
  return {lambda, combined};
}

namespace {

Tensor maybe_dropout(const Tensor& x, double p, Rng* rng) {
  return (rng != nullptr && p > 0.0) ? dropout(x, p, *rng) : x;
}

Tensor ffn_forward(const FfnParams& p, const Tensor& x) {
  return linear(relu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

Tensor ln(const Tensor& x, const NormParams& p) { return layer_norm(x, p.gamma, p.beta, 1e-5); }

Tensor encoder_layer_forward(const EncoderLayerParams& p, Tensor x, int heads, bool penalty,
                             double dropout_p, Rng* rng) {
  Tensor n1 = ln(x, p.norm_self);
  x = add(x, maybe_dropout(mha(p.self_attn, n1, n1, heads, false, penalty), dropout_p, rng));
  Tensor n2 = ln(x, p.norm_ffn);
  return add(x, maybe_dropout(ffn_forward(p.ffn, n2), dropout_p, rng));
}

}  // namespace

DecoderLayerOut decoder_layer(const DecoderLayerParams& p, const Tensor& x, const Tensor& enc,
                              const Tensor& ctx, bool parallel, int heads, double gate_shift,
                              double dropout_p, Rng* rng) {
  Tensor n1 = ln(x, p.norm_self);
  Tensor a =
    add(x, maybe_dropout(mha(p.self_attn, n1, n1, heads, true, false), dropout_p, rng));
  Tensor h = add(
                 a, maybe_dropout(mha(p.cross_attn, ln(a, p.norm_cross), enc, heads, false, false),
                                  dropout_p, rng));
  DecoderLayerOut result;
  Tensor g = h;
  if (ctx.defined()) {
    if (!p.gate_wh.defined())
      throw UsageError("decoder_layer: context given to a context-free layer");
    // the query stream is what distinguishes the two integration modes
    const Tensor& qsrc = parallel ? a : h;
    Tensor s = add(qsrc, maybe_dropout(mha(p.ctx_attn, ln(qsrc, p.norm_ctx), ctx, heads,
                                           false, false),
                                       dropout_p, rng));
    auto [lambda, combined] = gate_combine(h, s, p.gate_wh, p.gate_ws, gate_shift);
    result.lambda = lambda;
    g = combined;
  }
  result.out = add(g, maybe_dropout(ffn_forward(p.ffn, ln(g, p.norm_ffn)), dropout_p, rng));
  return result;
}

// --- model ---------------------------------------------------------------------

namespace {

std::string layer_name(const char* stack, int i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s.layer%d", stack, i);
  return buf;
}

}  // namespace

StModel::StModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.d_model;
  const int c = cfg_.conv_channels;
  auto reg = [&](const std::string& name, Tensor t) {
    params_.emplace_back(name, t);
    return t;
  };
  auto rand_p = [&](const Shape& shape, double stddev) {
    return Tensor::randn(shape, rng, stddev, true);
  };
  auto norm_p = [&](const std::string& prefix) {
    NormParams p;
    p.gamma = reg(prefix + ".gamma", Tensor::full({d}, 1.0, true));
    p.beta = reg(prefix + ".beta", Tensor::zeros({d}, true));
    return p;
  };
  auto attn_p = [&](const std::string& prefix) {
    AttentionParams p;
    const double stddev = std::sqrt(1.0 / d);
    p.wq = reg(prefix + ".wq", rand_p({d, d}, stddev));
    p.bq = reg(prefix + ".bq", Tensor::zeros({d}, true));
    p.wk = reg(prefix + ".wk", rand_p({d, d}, stddev));
    p.bk = reg(prefix + ".bk", Tensor::zeros({d}, true));
    p.wv = reg(prefix + ".wv", rand_p({d, d}, stddev));
    p.bv = reg(prefix + ".bv", Tensor::zeros({d}, true));
    p.wo = reg(prefix + ".wo", rand_p({d, d}, stddev));
    p.bo = reg(prefix + ".bo", Tensor::zeros({d}, true));
    return p;
  };
  auto ffn_p = [&](const std::string& prefix) {
    FfnParams p;
    p.w1 = reg(prefix + ".w1", rand_p({d, cfg_.d_ff}, std::sqrt(1.0 / d)));
    p.b1 = reg(prefix + ".b1", Tensor::zeros({cfg_.d_ff}, true));
    p.w2 = reg(prefix + ".w2", rand_p({cfg_.d_ff, d}, std::sqrt(1.0 / cfg_.d_ff)));
    p.b2 = reg(prefix + ".b2", Tensor::zeros({d}, true));
    return p;
  };
  auto enc_layer_p = [&](const std::string& prefix) {
    EncoderLayerParams p;
    p.norm_self = norm_p(prefix + ".norm_self");
    p.self_attn = attn_p(prefix + ".self_attn");
    p.norm_ffn = norm_p(prefix + ".norm_ffn");
    p.ffn = ffn_p(prefix + ".ffn");
    return p;
  };

  conv1_ = reg("encoder.conv1.kernel", rand_p({c, 1, 3, 3}, std::sqrt(1.0 / 9.0)));
  conv2_ = reg("encoder.conv2.kernel", rand_p({c, c, 3, 3}, std::sqrt(1.0 / (9.0 * c))));
  const int flat = c * (kFeatureDim / 4);  // conv stack leaves 10 of 40 mel bins
  in_proj_w_ = reg("encoder.in_proj.w", rand_p({flat, d}, std::sqrt(1.0 / flat)));
  in_proj_b_ = reg("encoder.in_proj.b", Tensor::zeros({d}, true));
  for (int i = 0; i < cfg_.n_enc; ++i)
    enc_layers_.push_back(enc_layer_p(layer_name("encoder", i)));
  enc_norm_out_ = norm_p("encoder.norm_out");

  embed_ = reg("decoder.embed.table", rand_p({cfg_.vocab, d}, std::sqrt(1.0 / d)));
  for (int i = 0; i < cfg_.n_dec; ++i) {
    const std::string prefix = layer_name("decoder", i);
    DecoderLayerParams p;
    p.norm_self = norm_p(prefix + ".norm_self");
    p.self_attn = attn_p(prefix + ".self_attn");
    p.norm_cross = norm_p(prefix + ".norm_cross");
    p.cross_attn = attn_p(prefix + ".cross_attn");
    if (cfg_.has_context()) {
      p.norm_ctx = norm_p(prefix + ".norm_ctx");
      p.ctx_attn = attn_p(prefix + ".ctx_attn");
      p.gate_wh = reg(prefix + ".gate.wh", rand_p({d, d}, std::sqrt(1.0 / d)));
      p.gate_ws = reg(prefix + ".gate.ws", rand_p({d, d}, std::sqrt(1.0 / d)));
    }
    p.norm_ffn = norm_p(prefix + ".norm_ffn");
    p.ffn = ffn_p(prefix + ".ffn");
    dec_layers_.push_back(std::move(p));
  }
  dec_norm_out_ = norm_p("decoder.norm_out");
  out_proj_w_ = reg("decoder.out_proj.w", rand_p({d, cfg_.vocab}, std::sqrt(1.0 / d)));
  out_proj_b_ = reg("decoder.out_proj.b", Tensor::zeros({cfg_.vocab}, true));

  if (cfg_.has_context()) {
    for (int i = 0; i < cfg_.n_ctx; ++i)
      ctx_layers_.push_back(enc_layer_p(layer_name("ctx_encoder", i)));
    ctx_norm_out_ = norm_p("ctx_encoder.norm_out");
  }
}

Tensor StModel::parameter(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  throw LookupError("parameter: no parameter named '" + name + "'");
}

std::int64_t StModel::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

Tensor StModel::encode_speech(const FeatureMatrix& f, Rng* dropout_rng) const {
  if (f.d != kFeatureDim)
    throw UsageError("encode_speech: expected " + std::to_string(kFeatureDim) +
                     "-dim features, got " + std::to_string(f.d));
  if (f.t < 4)
    throw UsageError("encode_speech: input too short (" + std::to_string(f.t) +
                     " frames, need >= 4)");
  Tensor x = Tensor::from_vector({1, f.t, f.d}, f.v);
  x = relu(conv2d(x, conv1_, 2, 1));
  x = relu(conv2d(x, conv2_, 2, 1));
  const Shape& s = x.shape();  // [C, T', mel/4]
  x = reshape(permute3(x, 1, 0, 2), {s[1], s[0] * s[2]});
  x = maybe_dropout(linear(x, in_proj_w_, in_proj_b_), cfg_.dropout, dropout_rng);
  for (const auto& layer : enc_layers_)
    x = encoder_layer_forward(layer, x, cfg_.heads, cfg_.distance_penalty, cfg_.dropout,
                              dropout_rng);
  return ln(x, enc_norm_out_);
}

Tensor StModel::embed_positions(const std::vector<int>& ids, Rng* dropout_rng) const {
  for (int id : ids)
    if (id < 0 || id >= cfg_.vocab)
      throw UsageError("embed: token id " + std::to_string(id) + " outside vocab of " +
                       std::to_string(cfg_.vocab));
  Tensor e = scale(embedding(ids, embed_), std::sqrt(static_cast<double>(cfg_.d_model)));
  e = add(e, positional_encoding(static_cast<int>(ids.size()), cfg_.d_model));
  return maybe_dropout(e, cfg_.dropout, dropout_rng);
}

Tensor StModel::context_layers(Tensor x, Rng* dropout_rng) const {
  for (const auto& layer : ctx_layers_)
    x = encoder_layer_forward(layer, x, cfg_.heads, false, cfg_.dropout, dropout_rng);
  return ln(x, ctx_norm_out_);
}

Tensor StModel::encode_context_text(const std::vector<int>& ids, Rng* dropout_rng) const {
  if (cfg_.context_mode != "text")
    throw UsageError("encode_context_text: model context_mode is " + cfg_.context_mode);
  if (ids.empty()) return Tensor();
  return context_layers(embed_positions(ids, dropout_rng), dropout_rng);
}

Tensor StModel::encode_context_audio(const FeatureMatrix& f, Rng* dropout_rng) const {
  if (cfg_.context_mode != "audio")
    throw UsageError("encode_context_audio: model context_mode is " + cfg_.context_mode);
  if (f.t == 0) return Tensor();
  return context_layers(encode_speech(f, dropout_rng), dropout_rng);
}

ForwardResult StModel::decode(const Tensor& enc, const std::vector<int>& dec_in,
                              const Tensor& ctx, Rng* dropout_rng) const {
  if (dec_in.empty()) throw UsageError("decode: empty decoder input");
  Tensor x = embed_positions(dec_in, dropout_rng);
  ForwardResult result;
  for (const auto& layer : dec_layers_) {
    auto out = decoder_layer(layer, x, enc, ctx, cfg_.integration == "parallel", cfg_.heads,
                             gate_shift_, cfg_.dropout, dropout_rng);
    x = out.out;
    if (out.lambda.defined()) result.lambdas.push_back(out.lambda);
  }
  result.logits = linear(ln(x, dec_norm_out_), out_proj_w_, out_proj_b_);
  return result;
}

ForwardResult StModel::forward(const FeatureMatrix& features, const std::vector<int>& dec_in,
                               const ContextInput& ctx, Rng* dropout_rng) const {
  if (cfg_.context_mode == "none" && !ctx.empty())
    throw UsageError("forward: context given to a context-free model");
  if (cfg_.context_mode == "text" && ctx.audio.t != 0)
    throw UsageError("forward: audio context given to a text-context model");
  if (cfg_.context_mode == "audio" && !ctx.text.empty())
    throw UsageError("forward: text context given to an audio-context model");
  Tensor enc = encode_speech(features, dropout_rng);
  Tensor ctx_enc;
  if (cfg_.context_mode == "text" && !ctx.text.empty())
    ctx_enc = encode_context_text(ctx.text, dropout_rng);
  else if (cfg_.context_mode == "audio" && ctx.audio.t != 0)
    ctx_enc = encode_context_audio(ctx.audio, dropout_rng);
  return decode(enc, dec_in, ctx_enc, dropout_rng);
}

// --- checkpoints ----------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'S', 'R', 'S', 'T', 'C', 'K', 'P', 'T'};

void write_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ofstream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::ifstream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(std::string("checkpoint: truncated ") + what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::ifstream& in, const char* what) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw FormatError(std::string("checkpoint: truncated ") + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

struct CkptEntry {
  Shape shape;
  std::vector<float> data;
};

// Whole-file read: config JSON + name -> (shape, float data).
std::pair<std::string, std::map<std::string, CkptEntry>> read_checkpoint(
                                                                         const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw FormatError("checkpoint: bad magic in '" + path + "'");
  const std::uint64_t json_len = read_u64(in, "config length");
  if (json_len > (1ULL << 20)) throw FormatError("checkpoint: config block too large");
  std::string config(json_len, '\0');
  if (!in.read(config.data(), static_cast<std::streamsize>(json_len)))
    throw FormatError("checkpoint: truncated config");
  const std::uint64_t n_params = read_u64(in, "parameter count");
  std::map<std::string, CkptEntry> entries;
  std::vector<std::pair<std::string, std::uint64_t>> order;
  std::uint64_t total = 0;
  for (std::uint64_t p = 0; p < n_params; ++p) {
    const std::uint32_t name_len = read_u32(in, "name length");
    if (name_len == 0 || name_len > 4096) throw FormatError("checkpoint: bad name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw FormatError("checkpoint: truncated name");
    const std::uint32_t ndims = read_u32(in, "rank");
    if (ndims == 0 || ndims > 8) throw FormatError("checkpoint: bad rank");
    Shape shape;
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < ndims; ++i) {
      const std::uint32_t dim = read_u32(in, "dimension");
      shape.push_back(static_cast<int>(dim));
      count *= dim;
    }
    const std::uint64_t offset = read_u64(in, "offset");
    if (offset != total) throw FormatError("checkpoint: non-contiguous offsets");
    total += count;
    if (entries.count(name)) throw FormatError("checkpoint: duplicate parameter " + name);
    entries[name].shape = std::move(shape);
    order.emplace_back(name, count);
  }
  const std::uint64_t data_len = read_u64(in, "data length");
  if (data_len != total) throw FormatError("checkpoint: data length mismatch");
  for (const auto& [name, count] : order) {
    auto& e = entries[name];
    e.data.resize(count);
    if (!in.read(reinterpret_cast<char*>(e.data.data()),
                 static_cast<std::streamsize>(count * 4)))
      throw FormatError("checkpoint: truncated data for " + name);
  }
  return {std::move(config), std::move(entries)};
}

}  // namespace

void save_model(const StModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("save_model: cannot open '" + path + "' for writing");
  out.write(kCkptMagic, 8);
  const std::string config = model.config().to_json();
  write_u64(out, config.size());
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  const auto& params = model.parameters();
  write_u64(out, params.size());
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(t.shape().size()));
    for (int dim : t.shape()) write_u32(out, static_cast<std::uint32_t>(dim));
    write_u64(out, offset);
    offset += static_cast<std::uint64_t>(t.size());
  }
  write_u64(out, offset);
  for (const auto& [name, t] : params) {
    for (double x : t.data()) {
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(x));
      unsigned char b[4];
      for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
      out.write(reinterpret_cast<const char*>(b), 4);
    }
  }
  if (!out) throw UsageError("save_model: write failed for '" + path + "'");
}

StModel load_model(const std::string& path) {
  auto [config_text, entries] = read_checkpoint(path);
  ModelConfig cfg = ModelConfig::from_json(config_text);
  Rng rng(0);  // every parameter is overwritten below
  StModel model(cfg, rng);
  for (const auto& [name, t] : model.parameters()) {
    auto it = entries.find(name);
    if (it == entries.end())
      throw FormatError("load_model: checkpoint missing parameter " + name);
    if (it->second.shape != t.shape())
      throw FormatError("load_model: shape mismatch for " + name + ": file " +
                        shape_str(it->second.shape) + " vs model " + shape_str(t.shape()));
    Tensor handle = t;  // shared storage
    std::vector<double>& dst = handle.data();
    for (size_t i = 0; i < dst.size(); ++i)
      dst[i] = static_cast<double>(it->second.data[i]);
  }
  return model;
}

std::pair<int, int> init_from_checkpoint(StModel& model, const std::string& path) {
  auto [config_text, entries] = read_checkpoint(path);
  (void)config_text;
  int loaded = 0, fresh = 0;
  for (const auto& [name, t] : model.parameters()) {
    auto it = entries.find(name);
    if (it == entries.end()) {
      ++fresh;
      continue;
    }
    if (it->second.shape != t.shape())
      throw FormatError("init_from_checkpoint: shape mismatch for " + name + ": file " +
                        shape_str(it->second.shape) + " vs model " + shape_str(t.shape()));
    Tensor handle = t;  // shared storage
    std::vector<double>& dst = handle.data();
    for (size_t i = 0; i < dst.size(); ++i)
      dst[i] = static_cast<double>(it->second.data[i]);
    ++loaded;
  }
  return {loaded, fresh};
}

}  // namespace srst
