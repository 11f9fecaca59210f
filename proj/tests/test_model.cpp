#include "srst/model.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "doctest.h"
#include "srst/errors.hpp"
#include "test_util.hpp"

using namespace srst;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  const int rows = t.shape()[0], cols = t.shape()[1];
  Mat m(size_t(rows), std::vector<double>(size_t(cols), 0.0));
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m[size_t(i)][size_t(j)] = t.data()[size_t(i) * cols + j];
  return m;
}

Mat mat_linear(const Mat& x, const Tensor& w, const Tensor& b) {
  const int din = w.shape()[0], dout = w.shape()[1];
  Mat out(x.size(), std::vector<double>(size_t(dout), 0.0));
  for (size_t i = 0; i < x.size(); ++i)
    for (int j = 0; j < dout; ++j) {
      double acc = b.defined() ? b.data()[size_t(j)] : 0.0;
      for (int k = 0; k < din; ++k) acc += x[i][size_t(k)] * w.data()[size_t(k) * dout + j];
      out[i][size_t(j)] = acc;
    }
  return out;
}

// Fully scalar-loop attention, written from the definition.
Mat oracle_mha(const AttentionParams& p, const Mat& q_in, const Mat& kv_in, int heads,
               bool causal, bool penalty) {
  const int d = int(q_in[0].size());
  const int dh = d / heads;
  Mat q = mat_linear(q_in, p.wq, p.bq);
  Mat k = mat_linear(kv_in, p.wk, p.bk);
  Mat v = mat_linear(kv_in, p.wv, p.bv);
  const size_t tq = q.size(), tk = k.size();
  Mat mix(tq, std::vector<double>(size_t(d), 0.0));
  for (int h = 0; h < heads; ++h) {
    for (size_t i = 0; i < tq; ++i) {
      std::vector<double> logits(tk, 0.0);
      for (size_t j = 0; j < tk; ++j) {
        double dot = 0.0;
        for (int c = 0; c < dh; ++c) dot += q[i][size_t(h * dh + c)] * k[j][size_t(h * dh + c)];
        logits[j] = dot / std::sqrt(double(dh));
        if (penalty) logits[j] += -std::log(1.0 + std::abs(double(i) - double(j)));
      }
      double mx = -1e300;
      for (size_t j = 0; j < tk; ++j)
        if (!(causal && j > i)) mx = std::max(mx, logits[j]);
      double z = 0.0;
      std::vector<double> w(tk, 0.0);
      for (size_t j = 0; j < tk; ++j) {
        if (causal && j > i) continue;
        w[j] = std::exp(logits[j] - mx);
        z += w[j];
      }
      for (size_t j = 0; j < tk; ++j) {
        if (w[j] == 0.0) continue;
        const double a = w[j] / z;
        for (int c = 0; c < dh; ++c) mix[i][size_t(h * dh + c)] += a * v[j][size_t(h * dh + c)];
      }
    }
  }
  return mat_linear(mix, p.wo, p.bo);
}

AttentionParams random_attention(int d, Rng& rng) {
  AttentionParams p;
  const double s = std::sqrt(1.0 / d);
  p.wq = Tensor::randn({d, d}, rng, s);
  p.bq = Tensor::randn({d}, rng, 0.1);
  p.wk = Tensor::randn({d, d}, rng, s);
  p.bk = Tensor::randn({d}, rng, 0.1);
  p.wv = Tensor::randn({d, d}, rng, s);
  p.bv = Tensor::randn({d}, rng, 0.1);
  p.wo = Tensor::randn({d, d}, rng, s);
  p.bo = Tensor::randn({d}, rng, 0.1);
  return p;
}

ModelConfig tiny_config(const std::string& mode, const std::string& integration) {
  ModelConfig cfg;
  cfg.n_enc = 1;
  cfg.n_dec = 2;
  cfg.n_ctx = 1;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.d_ff = 16;
  cfg.conv_channels = 2;
  cfg.vocab = 11;
  cfg.context_mode = mode;
  cfg.integration = integration;
  cfg.dropout = 0.0;
  return cfg;
}

FeatureMatrix random_features(int t, Rng& rng) {
  FeatureMatrix f;
  f.t = t;
  f.d = kFeatureDim;
  f.v.resize(size_t(t) * size_t(kFeatureDim));
  for (double& x : f.v) x = 0.5 * rng.normal();
  return f;
}

std::vector<Tensor> param_tensors(const StModel& m, const std::string& prefix = "") {
  std::vector<Tensor> out;
  for (const auto& [name, t] : m.parameters())
    if (prefix.empty() || name.rfind(prefix, 0) == 0) out.push_back(t);
  return out;
}

// Scalar loss exercising both the logits and every gate: mean(logits) + sum of
// per-layer mean(lambda).
Tensor probe_loss(const StModel& m, const FeatureMatrix& f, const std::vector<int>& dec_in,
                  const ContextInput& ctx) {
  auto r = m.forward(f, dec_in, ctx, nullptr);
  Tensor loss = mean(r.logits);
  for (const auto& lam : r.lambdas) loss = add(loss, mean(lam));
  return loss;
}

}  // namespace

TEST_CASE("model config json roundtrip and validation") {
  ModelConfig cfg = tiny_config("text", "parallel");
  cfg.alpha = 0.07;
  cfg.distance_penalty = false;
  ModelConfig back = ModelConfig::from_json(cfg.to_json());
  CHECK(back.n_enc == cfg.n_enc);
  CHECK(back.n_dec == cfg.n_dec);
  CHECK(back.n_ctx == cfg.n_ctx);
  CHECK(back.d_model == cfg.d_model);
  CHECK(back.heads == cfg.heads);
  CHECK(back.d_ff == cfg.d_ff);
  CHECK(back.conv_channels == cfg.conv_channels);
  CHECK(back.vocab == cfg.vocab);
  CHECK(back.context_mode == cfg.context_mode);
  CHECK(back.integration == cfg.integration);
  CHECK(back.alpha == cfg.alpha);
  CHECK(back.dropout == cfg.dropout);
  CHECK(back.distance_penalty == cfg.distance_penalty);

  ModelConfig bad = cfg;
  bad.heads = 3;  // does not divide 8
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = cfg;
  bad.vocab = 2;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = cfg;
  bad.context_mode = "video";
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = cfg;
  bad.integration = "serial";
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = cfg;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  CHECK_THROWS_AS(ModelConfig::from_json("{"), FormatError);
  CHECK_THROWS_AS(ModelConfig::from_json("{\"n_enc\": 1}"), FormatError);
}

TEST_CASE("mha matches the scalar-loop oracle") {
  Rng rng(71);
  const int d = 8, heads = 2;
  AttentionParams p = random_attention(d, rng);
  Tensor q_in = Tensor::randn({4, d}, rng, 1.0);
  Tensor kv_in = Tensor::randn({4, d}, rng, 1.0);

  for (bool causal : {false, true}) {
    for (bool penalty : {false, true}) {
      Tensor out = mha(p, q_in, kv_in, heads, causal, penalty);
      Mat expect = oracle_mha(p, to_mat(q_in), to_mat(kv_in), heads, causal, penalty);
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < d; ++j)
          CHECK(testutil::rel_err(out.at({i, j}), expect[size_t(i)][size_t(j)]) < 1e-10);
    }
  }

  // cross-attention shape: 3 queries over 5 keys
  Tensor cross = mha(p, Tensor::randn({3, d}, rng, 1.0), Tensor::randn({5, d}, rng, 1.0), heads,
                     false, false);
  CHECK(cross.shape() == Shape{3, d});

  CHECK_THROWS_AS(mha(p, Tensor::randn({3, d}, rng, 1.0), Tensor::randn({5, d}, rng, 1.0), heads,
                      true, false),
                  UsageError);  // causal needs square
  CHECK_THROWS_AS(mha(p, q_in, kv_in, 3, false, false), UsageError);  // 3 does not divide 8
}

TEST_CASE("distance penalty turns uniform logits into 1/(1+distance) weights") {
  // zero query/key projections make the raw logits identically zero, so the
  // softmax sees only the penalty; identity value/output paths expose the
  // attention weights directly.
  const int t = 4;
  AttentionParams p;
  p.wq = Tensor::zeros({t, t});
  p.wk = Tensor::zeros({t, t});
  std::vector<double> eye(size_t(t) * t, 0.0);
  for (int i = 0; i < t; ++i) eye[size_t(i) * t + i] = 1.0;
  p.wv = Tensor::from_vector({t, t}, eye);
  p.wo = Tensor::from_vector({t, t}, eye);
  Tensor x = Tensor::from_vector({t, t}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  Tensor out = mha(p, x, x, 1, false, true);
  for (int i = 0; i < t; ++i) {
    double z = 0.0;
    for (int j = 0; j < t; ++j) z += 1.0 / (1.0 + std::abs(i - j));
    for (int j = 0; j < t; ++j) {
      const double expect = (1.0 / (1.0 + std::abs(i - j))) / z;
      CHECK(out.at({i, j}) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("causal attention ignores future positions") {
  Rng rng(5);
  const int d = 8;
  AttentionParams p = random_attention(d, rng);
  Tensor x1 = Tensor::randn({4, d}, rng, 1.0);
  Tensor x2 = Tensor::from_vector({4, d}, x1.data());
  // perturb everything after position 0
  for (int i = 1; i < 4; ++i)
    for (int j = 0; j < d; ++j) x2.data()[size_t(i) * d + j] += 3.0;
  Tensor o1 = mha(p, x1, x1, 2, true, false);
  Tensor o2 = mha(p, x2, x2, 2, true, false);
  for (int j = 0; j < d; ++j) CHECK(o1.at({0, j}) == o2.at({0, j}));
}

TEST_CASE("gate combine hand cases and scalar oracle") {
  Rng rng(13);
  const int t = 3, d = 4;
  Tensor h = Tensor::randn({t, d}, rng, 1.0);
  Tensor s = Tensor::randn({t, d}, rng, 1.0);

  // zero weights: lambda = 1/2 and the combination is the midpoint
  auto [lam0, comb0] = gate_combine(h, s, Tensor::zeros({d, d}), Tensor::zeros({d, d}), 0.0);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j) {
      CHECK(lam0.at({i, j}) == 0.5);
      CHECK(comb0.at({i, j}) ==
            doctest::Approx(0.5 * (h.at({i, j}) + s.at({i, j}))).epsilon(1e-15));
    }

  // saturated gate: context fully ignored, bitwise
  auto [lam1, comb1] = gate_combine(h, s, Tensor::zeros({d, d}), Tensor::zeros({d, d}), 1e3);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j) {
      CHECK(lam1.at({i, j}) == 1.0);
      CHECK(comb1.at({i, j}) == h.at({i, j}));
    }

  // random case against explicit loops; lambda strictly inside (0,1) and the
  // combination convex elementwise
  Tensor wh = Tensor::randn({d, d}, rng, 0.5);
  Tensor ws = Tensor::randn({d, d}, rng, 0.5);
  auto [lam, comb] = gate_combine(h, s, wh, ws, 0.0);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j) {
      double logit = 0.0;
      for (int k = 0; k < d; ++k)
        logit += h.at({i, k}) * wh.at({k, j}) + s.at({i, k}) * ws.at({k, j});
      const double l = 1.0 / (1.0 + std::exp(-logit));
      const double c = l * h.at({i, j}) + (1.0 - l) * s.at({i, j});
      CHECK(testutil::rel_err(lam.at({i, j}), l) < 1e-12);
      CHECK(testutil::rel_err(comb.at({i, j}), c) < 1e-12);
      CHECK(lam.at({i, j}) > 0.0);
      CHECK(lam.at({i, j}) < 1.0);
      const double lo = std::min(h.at({i, j}), s.at({i, j}));
      const double hi = std::max(h.at({i, j}), s.at({i, j}));
      CHECK(comb.at({i, j}) >= lo - 1e-12);
      CHECK(comb.at({i, j}) <= hi + 1e-12);
    }

  CHECK_THROWS_AS(gate_combine(h, Tensor::zeros({t, d + 1}), wh, ws, 0.0), DimensionError);
}

TEST_CASE("speech encoder output length follows the conv arithmetic") {
  Rng rng(3);
  StModel m(tiny_config("none", "sequential"), rng);
  Rng frng(4);
  NoGradGuard ng;
  CHECK(m.encode_speech(random_features(98, frng), nullptr).shape() == Shape{25, 8});
  CHECK(m.encode_speech(random_features(16, frng), nullptr).shape() == Shape{4, 8});
  CHECK(m.encode_speech(random_features(4, frng), nullptr).shape() == Shape{1, 8});
  CHECK_THROWS_AS(m.encode_speech(random_features(3, frng), nullptr), UsageError);
  FeatureMatrix wrong;
  wrong.t = 10;
  wrong.d = 39;
  wrong.v.assign(390, 0.0);
  CHECK_THROWS_AS(m.encode_speech(wrong, nullptr), UsageError);

  // eval mode is deterministic
  auto f = random_features(20, frng);
  Tensor a = m.encode_speech(f, nullptr);
  Tensor b = m.encode_speech(f, nullptr);
  CHECK(a.data() == b.data());
}

TEST_CASE("speech encoder gradient check") {
  Rng rng(17);
  StModel m(tiny_config("none", "sequential"), rng);
  Rng frng(18);
  auto f = random_features(16, frng);
  auto loss_fn = [&]() { return mean(m.encode_speech(f, nullptr)); };
  CHECK(testutil::max_fd_rel_err(loss_fn, param_tensors(m, "encoder.")) < 1e-4);
}

TEST_CASE("text context encoding shares the decoder embedding table") {
  Rng rng(23);
  StModel m(tiny_config("text", "sequential"), rng);
  NoGradGuard ng;
  CHECK_FALSE(m.encode_context_text({}, nullptr).defined());
  Tensor one = m.encode_context_text({4}, nullptr);
  CHECK(one.shape() == Shape{1, 8});

  Tensor before = m.encode_context_text({4, 6}, nullptr);
  Tensor table = m.parameter("decoder.embed.table");
  table.data()[size_t(4) * 8 + 0] += 0.25;  // mutate the row of token 4
  Tensor after = m.encode_context_text({4, 6}, nullptr);
  bool changed = false;
  for (size_t i = 0; i < before.data().size(); ++i)
    if (before.data()[i] != after.data()[i]) changed = true;
  CHECK(changed);

  CHECK_THROWS_AS(m.encode_context_text({11}, nullptr), UsageError);  // vocab is 11, ids 0..10
  CHECK_THROWS_AS(m.encode_context_audio(random_features(8, rng), nullptr), UsageError);
}

TEST_CASE("audio context encoding runs through the shared speech encoder") {
  Rng rng(29);
  StModel m(tiny_config("audio", "sequential"), rng);
  FeatureMatrix empty;
  CHECK_FALSE(m.encode_context_audio(empty, nullptr).defined());
  Rng frng(30);
  auto f = random_features(16, frng);
  {
    NoGradGuard ng;
    CHECK(m.encode_context_audio(f, nullptr).shape() == Shape{4, 8});
  }

  // gradients reach the base encoder through the context path
  for (auto& t : param_tensors(m)) t.zero_grad();
  Tensor loss = mean(m.encode_context_audio(f, nullptr));
  backward(loss);
  Tensor conv1 = m.parameter("encoder.conv1.kernel");
  double norm = 0.0;
  for (double g : conv1.grad()) norm += g * g;
  CHECK(norm > 0.0);

  CHECK_THROWS_AS(m.encode_context_text({1}, nullptr), UsageError);
}

TEST_CASE("context-aware decoding with empty context equals the base model bitwise") {
  auto dir = testutil::tmp_dir();
  Rng rng(41);
  StModel base(tiny_config("none", "sequential"), rng);
  const std::string ckpt = (dir / "base_equiv.ckpt").string();
  save_model(base, ckpt);

  // checkpoints store float32, so the reference is the reloaded base
  StModel base_rt = load_model(ckpt);
  Rng frng(42);
  auto f = random_features(20, frng);
  std::vector<int> dec_in = {1, 5, 7, 3};
  NoGradGuard ng;
  Tensor base_logits = base_rt.forward(f, dec_in, ContextInput{}, nullptr).logits;

  for (const char* integration : {"sequential", "parallel"}) {
    for (const char* mode : {"text", "audio"}) {
      Rng r2(99);
      StModel ctx_model(tiny_config(mode, integration), r2);
      auto [loaded, fresh] = init_from_checkpoint(ctx_model, ckpt);
      CHECK(loaded == int(base.parameters().size()));
      CHECK(fresh == int(ctx_model.parameters().size()) - loaded);
      auto result = ctx_model.forward(f, dec_in, ContextInput{}, nullptr);
      CHECK(result.lambdas.empty());
      CHECK(result.logits.data() == base_logits.data());
    }
  }
}

TEST_CASE("saturated gates reduce the context model to the base model") {
  auto dir = testutil::tmp_dir();
  Rng rng(43);
  StModel base(tiny_config("none", "sequential"), rng);
  const std::string ckpt = (dir / "base_sat.ckpt").string();
  save_model(base, ckpt);

  StModel base_rt = load_model(ckpt);
  Rng frng(44);
  auto f = random_features(20, frng);
  std::vector<int> dec_in = {1, 5, 7};
  NoGradGuard ng;
  Tensor base_logits = base_rt.forward(f, dec_in, ContextInput{}, nullptr).logits;

  for (const char* integration : {"sequential", "parallel"}) {
    Rng r2(101);
    StModel m(tiny_config("text", integration), r2);
    init_from_checkpoint(m, ckpt);
    ContextInput ctx;
    ctx.text = {4, 6, 2};
    // sanity: with live gates the context changes the output
    Tensor live = m.forward(f, dec_in, ctx, nullptr).logits;
    bool differs = false;
    for (size_t i = 0; i < live.data().size(); ++i)
      if (live.data()[i] != base_logits.data()[i]) differs = true;
    CHECK(differs);

    m.set_gate_logit_shift(1e3);
    auto result = m.forward(f, dec_in, ctx, nullptr);
    REQUIRE(result.lambdas.size() == 2);
    for (const auto& lam : result.lambdas)
      for (double v : lam.data()) CHECK(v == 1.0);
    for (size_t i = 0; i < result.logits.data().size(); ++i)
      CHECK(std::abs(result.logits.data()[i] - base_logits.data()[i]) < 1e-5);
  }
}

TEST_CASE("parallel layer with tied attentions and identical streams ignores the gate") {
  Rng rng(53);
  const int d = 8, heads = 2;
  DecoderLayerParams p;
  p.norm_self = {Tensor::full({d}, 1.0), Tensor::zeros({d})};
  p.self_attn = random_attention(d, rng);
  p.norm_cross = {Tensor::full({d}, 1.0), Tensor::randn({d}, rng, 0.1)};
  p.cross_attn = random_attention(d, rng);
  p.norm_ctx = p.norm_cross;    // tied
  p.ctx_attn = p.cross_attn;    // tied
  p.gate_wh = Tensor::randn({d, d}, rng, 0.5);
  p.gate_ws = Tensor::randn({d, d}, rng, 0.5);
  p.norm_ffn = {Tensor::full({d}, 1.0), Tensor::zeros({d})};
  p.ffn.w1 = Tensor::randn({d, 16}, rng, 0.3);
  p.ffn.b1 = Tensor::zeros({16});
  p.ffn.w2 = Tensor::randn({16, d}, rng, 0.3);
  p.ffn.b2 = Tensor::zeros({d});

  Tensor x = Tensor::randn({3, d}, rng, 1.0);
  Tensor enc = Tensor::randn({5, d}, rng, 1.0);
  NoGradGuard ng;
  auto base = decoder_layer(p, x, enc, Tensor(), true, heads, 0.0, 0.0, nullptr);
  auto gated = decoder_layer(p, x, enc, enc, true, heads, 0.0, 0.0, nullptr);
  REQUIRE(gated.lambda.defined());
  for (size_t i = 0; i < base.out.data().size(); ++i)
    CHECK(testutil::rel_err(gated.out.data()[i], base.out.data()[i]) < 1e-12);

  // sequential wiring queries the cross-attention output instead, so with the
  // same tied weights the two integration modes genuinely differ
  auto seq = decoder_layer(p, x, enc, enc, false, heads, 0.0, 0.0, nullptr);
  bool differs = false;
  for (size_t i = 0; i < seq.out.data().size(); ++i)
    if (seq.out.data()[i] != gated.out.data()[i]) differs = true;
  CHECK(differs);

  // context handed to a context-free layer is a usage error
  DecoderLayerParams bare = p;
  bare.gate_wh = Tensor();
  CHECK_THROWS_AS(decoder_layer(bare, x, enc, enc, true, heads, 0.0, 0.0, nullptr), UsageError);
}

TEST_CASE("sequential and parallel variants have identical parameter sets") {
  Rng r1(61), r2(62), r3(63);
  StModel seq(tiny_config("text", "sequential"), r1);
  StModel par(tiny_config("text", "parallel"), r2);
  StModel aud(tiny_config("audio", "sequential"), r3);
  CHECK(seq.parameter_count() == par.parameter_count());
  CHECK(seq.parameter_count() == aud.parameter_count());
  std::set<std::string> seq_names, par_names;
  for (const auto& [n, t] : seq.parameters()) seq_names.insert(n);
  for (const auto& [n, t] : par.parameters()) par_names.insert(n);
  CHECK(seq_names == par_names);

  Rng r4(64);
  StModel base(tiny_config("none", "sequential"), r4);
  CHECK(base.parameter_count() < seq.parameter_count());
}

TEST_CASE("full forward: shapes, lambda record, determinism, validation") {
  Rng rng(67);
  StModel m(tiny_config("text", "sequential"), rng);
  Rng frng(68);
  auto f = random_features(24, frng);
  std::vector<int> dec_in = {1, 4, 9, 2, 7};
  ContextInput ctx;
  ctx.text = {5, 8};

  NoGradGuard ng;
  auto r = m.forward(f, dec_in, ctx, nullptr);
  CHECK(r.logits.shape() == Shape{5, 11});
  CHECK(r.lambdas.size() == 2);  // one per decoder layer
  for (const auto& lam : r.lambdas) {
    CHECK(lam.shape() == Shape{5, 8});
    for (double v : lam.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
  auto r2 = m.forward(f, dec_in, ctx, nullptr);
  CHECK(r.logits.data() == r2.logits.data());

  // a base model never records lambdas
  Rng r3(69);
  StModel base(tiny_config("none", "sequential"), r3);
  CHECK(base.forward(f, dec_in, ContextInput{}, nullptr).lambdas.empty());

  ContextInput audio_ctx;
  audio_ctx.audio = random_features(8, frng);
  CHECK_THROWS_AS(m.forward(f, dec_in, audio_ctx, nullptr), UsageError);
  CHECK_THROWS_AS(base.forward(f, dec_in, ctx, nullptr), UsageError);
  Rng r5(70);
  StModel aud(tiny_config("audio", "sequential"), r5);
  CHECK_THROWS_AS(aud.forward(f, dec_in, ctx, nullptr), UsageError);
  CHECK_THROWS_AS(m.forward(f, {}, ctx, nullptr), UsageError);
}

TEST_CASE("full-model gradient check for every variant") {
  Rng frng(80);
  auto f = random_features(16, frng);
  std::vector<int> dec_in = {1, 5, 7};
  ContextInput text_ctx;
  text_ctx.text = {4, 6};
  ContextInput audio_ctx;
  audio_ctx.audio = random_features(8, frng);
  ContextInput none;

  struct Case {
    const char* mode;
    const char* integration;
    const ContextInput* ctx;
  };
  const Case cases[] = {
      {"none", "sequential", &none},
      {"text", "sequential", &text_ctx},
      {"text", "parallel", &text_ctx},
      {"audio", "sequential", &audio_ctx},
      {"audio", "parallel", &audio_ctx},
  };
  int seed = 200;
  for (const auto& c : cases) {
    CAPTURE(c.mode);
    CAPTURE(c.integration);
    Rng rng(uint64_t(seed++));
    StModel m(tiny_config(c.mode, c.integration), rng);
    auto loss_fn = [&]() { return probe_loss(m, f, dec_in, *c.ctx); };
    CHECK(testutil::max_fd_rel_err(loss_fn, param_tensors(m)) < 1e-4);
  }
}

TEST_CASE("checkpoint roundtrip restores the model exactly") {
  auto dir = testutil::tmp_dir();
  Rng rng(91);
  StModel m(tiny_config("text", "parallel"), rng);
  m.set_gate_logit_shift(0.0);
  const std::string path = (dir / "roundtrip.ckpt").string();
  save_model(m, path);
  StModel back = load_model(path);
  CHECK(back.config().to_json() == m.config().to_json());
  REQUIRE(back.parameters().size() == m.parameters().size());
  for (size_t i = 0; i < m.parameters().size(); ++i) {
    CHECK(back.parameters()[i].first == m.parameters()[i].first);
    // float32 storage: roundtrip equals the float-cast original
    const auto& a = m.parameters()[i].second.data();
    const auto& b = back.parameters()[i].second.data();
    REQUIRE(a.size() == b.size());
    for (size_t j = 0; j < a.size(); ++j) CHECK(b[j] == double(float(a[j])));
  }

  CHECK_THROWS_AS(load_model((dir / "missing.ckpt").string()), FormatError);
  const std::string garbage = (dir / "garbage.ckpt").string();
  {
    std::ofstream out(garbage, std::ios::binary);
    out << "NOTACKPTxxxxxxxxxxxxxxxx";
  }
  CHECK_THROWS_AS(load_model(garbage), FormatError);

  // shape-conflicting warm start is rejected
  ModelConfig other = tiny_config("text", "parallel");
  other.d_model = 16;
  other.heads = 2;
  Rng r2(92);
  StModel wider(other, r2);
  CHECK_THROWS_AS(init_from_checkpoint(wider, path), FormatError);
}
