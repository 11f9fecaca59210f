#include "srst/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "json.hpp"
#include "srst/audio.hpp"
#include "srst/errors.hpp"

namespace srst {

namespace {

// Audio span [start_s, end_s) of a clip, clamped to its bounds.
AudioClip slice_clip(const AudioClip& clip, double start_s, double end_s) {
  const long long n = (long long)clip.samples.size();
  long long a = std::llround(start_s * clip.sample_rate);
  long long b = std::llround(end_s * clip.sample_rate);
  a = std::clamp(a, 0LL, n);
  b = std::clamp(b, a, n);
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples.assign(clip.samples.begin() + a, clip.samples.begin() + b);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (lr_start > lr_peak) throw UsageError("train config: lr_start must be <= lr_peak");
  if (lr_start <= 0.0) throw UsageError("train config: lr_start must be positive");
  if (warmup_steps < 1) throw UsageError("train config: warmup_steps must be >= 1");
  if (batch_pairs < 1) throw UsageError("train config: batch_pairs must be >= 1");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw UsageError("train config: label_smoothing must be in [0, 1)");
  if (alpha < 0.0) throw UsageError("train config: alpha must be >= 0");
  if (max_audio_s <= 0.0) throw UsageError("train config: max_audio_s must be positive");
  if (max_steps < 1) throw UsageError("train config: max_steps must be >= 1");
}

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["lr_start"] = lr_start;
  j["lr_peak"] = lr_peak;
  j["warmup_steps"] = warmup_steps;
  j["batch_pairs"] = batch_pairs;
  j["label_smoothing"] = label_smoothing;
  j["alpha"] = alpha;
  j["max_audio_s"] = max_audio_s;
  j["freeze_encoder"] = freeze_encoder;
  j["seed"] = seed;
  j["max_steps"] = max_steps;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  TrainConfig cfg;
  try {
    cfg.lr_start = j.value("lr_start", cfg.lr_start);
    cfg.lr_peak = j.value("lr_peak", cfg.lr_peak);
    cfg.warmup_steps = j.value("warmup_steps", cfg.warmup_steps);
    cfg.batch_pairs = j.value("batch_pairs", cfg.batch_pairs);
    cfg.label_smoothing = j.value("label_smoothing", cfg.label_smoothing);
    cfg.alpha = j.value("alpha", cfg.alpha);
    cfg.max_audio_s = j.value("max_audio_s", cfg.max_audio_s);
    cfg.freeze_encoder = j.value("freeze_encoder", cfg.freeze_encoder);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.max_steps = j.value("max_steps", cfg.max_steps);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  return cfg;
}

double lr_schedule(const TrainConfig& cfg, long long step) {
  if (step < 0) throw UsageError("lr_schedule: step must be >= 0");
  const double w = double(cfg.warmup_steps);
  // the decay branch owns the boundary so lr(warmup) == lr_peak exactly
  if (step >= cfg.warmup_steps) return cfg.lr_peak * std::sqrt(w / double(step));
  return cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * double(step) / w;
}

Tensor label_smoothed_ce(const Tensor& logits, const std::vector<int>& targets, double eps,
                         const std::vector<std::uint8_t>& mask) {
  if (!logits.defined() || logits.shape().size() != 2)
    throw UsageError("label_smoothed_ce: logits must be 2-D");
  const int t = logits.shape()[0], v = logits.shape()[1];
  if (int(targets.size()) != t)
    throw UsageError("label_smoothed_ce: got " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(t) + " rows");
  if (eps < 0.0 || eps >= 1.0) throw UsageError("label_smoothed_ce: eps must be in [0, 1)");
  if (!mask.empty() && int(mask.size()) != t)
    throw UsageError("label_smoothed_ce: mask size mismatch");
  for (int id : targets)
    if (id < 0 || id >= v) throw UsageError("label_smoothed_ce: target id out of range");

  Tensor nll = scale(log_softmax_rows(logits), -1.0);  // [t, v]
  Tensor picked = gather_rows(nll, targets);           // [t]
  Tensor row_mean = scale(sum_rows(nll), 1.0 / v);     // [t]
  Tensor per_token = add(scale(picked, 1.0 - eps), scale(row_mean, eps));

  if (mask.empty()) return mean(per_token);
  long long kept = 0;
  std::vector<double> m(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) {
    m[i] = mask[i] ? 1.0 : 0.0;
    kept += mask[i] ? 1 : 0;
  }
  if (kept == 0) throw UsageError("label_smoothed_ce: every token is masked out");
  return scale(sum(mul(per_token, Tensor::from_vector({t}, m))), 1.0 / double(kept));
}

Tensor gate_regularized_loss(const Tensor& l, const std::vector<Tensor>& lambdas, double alpha) {
  if (alpha > 0.0 && lambdas.empty())
    throw UsageError("gate_regularized_loss: alpha > 0 but the model has no gates");
  if (alpha == 0.0 || lambdas.empty()) return l;
  Tensor penalty;
  for (const Tensor& lam : lambdas) {
    Tensor term = mean(add_scalar(scale(lam, -1.0), 1.0));
    penalty = penalty.defined() ? add(penalty, term) : term;
  }
  return add(l, scale(penalty, alpha));
}

std::vector<std::pair<std::string, Tensor>> trainable_parameters(const StModel& model,
                                                                 bool freeze_encoder) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [name, t] : model.parameters()) {
    if (freeze_encoder && name.rfind("encoder.", 0) == 0) continue;
    out.emplace_back(name, t);
  }
  return out;
}

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, double beta1, double beta2,
           double eps)
    : b1_(beta1), b2_(beta2), eps_(eps) {
  for (auto& [name, t] : params) {
    Slot s;
    s.name = name;
    s.p = t;
    s.m.assign(size_t(t.size()), 0.0);
    s.v.assign(size_t(t.size()), 0.0);
    slots_.push_back(std::move(s));
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, double(t_));
  const double c2 = 1.0 - std::pow(b2_, double(t_));
  for (Slot& s : slots_) {
    std::vector<double>& g = s.p.grad();
    std::vector<double>& p = s.p.data();
    for (size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw NumericError("adam_step: non-finite gradient in " + s.name);
      s.m[i] = b1_ * s.m[i] + (1.0 - b1_) * g[i];
      s.v[i] = b2_ * s.v[i] + (1.0 - b2_) * g[i] * g[i];
      const double mhat = s.m[i] / c1;
      const double vhat = s.v[i] / c2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (Slot& s : slots_) s.p.zero_grad();
}

BatchPlan make_batches(const std::vector<TrainSample>& samples, const TrainConfig& cfg,
                       Rng& rng) {
  BatchPlan plan;
  std::vector<int> keep;
  for (size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].dur_s > cfg.max_audio_s)
      ++plan.dropped_long;
    else
      keep.push_back(int(i));
  }
  if (keep.empty()) throw UsageError("make_batches: no samples left after the length filter");
  // Fisher-Yates with the explicit stream
  for (size_t i = keep.size(); i > 1; --i)
    std::swap(keep[i - 1], keep[size_t(rng.uniform_int(std::int64_t(i)))]);
  for (size_t i = 0; i < keep.size(); i += size_t(cfg.batch_pairs)) {
    const size_t end = std::min(keep.size(), i + size_t(cfg.batch_pairs));
    plan.batches.emplace_back(keep.begin() + long(i), keep.begin() + long(end));
  }
  return plan;
}

TrainResult train_loop(StModel& model, const TrainConfig& cfg,
                       const std::vector<TrainSample>& samples, const std::string& log_path) {
  cfg.validate();
  if (samples.empty()) throw UsageError("train_loop: no training samples");
  if (cfg.alpha > 0.0 && !model.config().has_context())
    throw UsageError("train_loop: alpha > 0 but the model has no gates");

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw FormatError("train_loop: cannot write " + log_path);
  }

  Rng root(cfg.seed);
  Rng shuffle_rng = root.derive(1);
  Rng dropout_rng = root.derive(2);
  const int n_gate_layers = model.config().has_context() ? model.config().n_dec : 0;

  Adam opt(trainable_parameters(model, cfg.freeze_encoder));
  TrainResult res;
  long long step = 0;
  while (step < cfg.max_steps) {
    BatchPlan plan = make_batches(samples, cfg, shuffle_rng);
    res.dropped_long = plan.dropped_long;
    for (const std::vector<int>& batch : plan.batches) {
      if (step >= cfg.max_steps) break;
      ++step;

      // totals that turn per-sample losses into the batch loss
      long long ntok_total = 0, posdim_total = 0;
      for (int idx : batch) {
        ntok_total += (long long)samples[size_t(idx)].targets.size();
        if (!samples[size_t(idx)].ctx.empty())
          posdim_total +=
              (long long)samples[size_t(idx)].dec_in.size() * model.config().d_model;
      }

      opt.zero_grad();
      double l_value = 0.0;
      std::vector<double> pen_sums(size_t(n_gate_layers), 0.0);
      for (int idx : batch) {
        const TrainSample& s = samples[size_t(idx)];
        ForwardResult r = model.forward(s.feats, s.dec_in, s.ctx, &dropout_rng);
        Tensor ce = label_smoothed_ce(r.logits, s.targets, cfg.label_smoothing);
        const double w = double(s.targets.size()) / double(ntok_total);
        Tensor contrib = scale(ce, w);
        for (size_t li = 0; li < r.lambdas.size(); ++li) {
          Tensor pen = sum(add_scalar(scale(r.lambdas[li], -1.0), 1.0));
          pen_sums[li] += pen.data()[0];
          if (cfg.alpha > 0.0)
            contrib = add(contrib, scale(pen, cfg.alpha / double(posdim_total)));
        }
        backward(contrib);
        l_value += ce.data()[0] * w;
      }

      const double lr = lr_schedule(cfg, step);
      opt.step(lr);

      StepLog sl;
      sl.step = step;
      sl.lr = lr;
      sl.l = l_value;
      sl.l_prime = l_value;
      for (size_t li = 0; li < pen_sums.size(); ++li) {
        if (posdim_total > 0) {
          sl.l_prime += cfg.alpha * pen_sums[li] / double(posdim_total);
          sl.mean_lambda.push_back(1.0 - pen_sums[li] / double(posdim_total));
        }
      }
      if (log) {
        nlohmann::json j;
        j["step"] = sl.step;
        j["lr"] = sl.lr;
        j["L"] = sl.l;
        j["L_prime"] = sl.l_prime;
        j["mean_lambda_per_layer"] = sl.mean_lambda;
        log << j.dump() << "\n";
      }
      res.last = sl;
    }
  }
  res.steps = step;
  return res;
}

// --- data preparation -------------------------------------------------------

TextModel learn_subwords(const std::vector<ManifestEntry>& entries, int n_merges) {
  std::vector<std::vector<std::string>> corpus;
  corpus.reserve(entries.size());
  for (const auto& e : entries) corpus.push_back(normalize(e.tgt));
  TextModel tm;
  tm.bpe = bpe_learn(corpus, n_merges);
  tm.vocab = Vocabulary::build(tm.bpe);
  return tm;
}

SpeakerStatsTable collect_feature_stats(const std::vector<ManifestEntry>& entries,
                                        const std::string& manifest_path) {
  SpeakerStatsTable stats;
  std::map<std::string, AudioClip> wavs;
  for (const auto& e : entries) {
    const std::string path = resolve_audio_path(manifest_path, e.audio);
    auto it = wavs.find(path);
    if (it == wavs.end()) it = wavs.emplace(path, read_wav(path)).first;
    FeatureMatrix f = log_mel(slice_clip(it->second, e.start_s, e.end_s));
    if (f.t > 0) stats.add(e.speaker, f);
  }
  return stats;
}

FeatureMatrix entry_features(const ManifestEntry& e, const std::string& manifest_path,
                             const SpeakerStatsTable& stats) {
  AudioClip clip = read_wav(resolve_audio_path(manifest_path, e.audio));
  FeatureMatrix f = log_mel(slice_clip(clip, e.start_s, e.end_s));
  return speaker_normalize(f, stats.lookup(e.speaker));
}

std::vector<TrainSample> build_train_samples(const std::vector<ManifestEntry>& entries,
                                             const std::string& manifest_path,
                                             const TextModel& tm, const SpeakerStatsTable& stats,
                                             const std::string& context_mode) {
  if (context_mode != "none" && context_mode != "text" && context_mode != "audio")
    throw UsageError("build_train_samples: unknown context mode " + context_mode);

  std::map<std::string, AudioClip> wavs;
  auto clip_of = [&](const ManifestEntry& e) -> const AudioClip& {
    const std::string path = resolve_audio_path(manifest_path, e.audio);
    auto it = wavs.find(path);
    if (it == wavs.end()) it = wavs.emplace(path, read_wav(path)).first;
    return it->second;
  };
  // previous fragment of each entry, for audio context
  std::map<std::pair<std::string, int>, const ManifestEntry*> by_pos;
  for (const auto& e : entries) by_pos[{e.doc_id, e.idx}] = &e;

  std::vector<TrainSample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    TrainSample s;
    s.dur_s = e.end_s - e.start_s;
    FeatureMatrix raw = log_mel(slice_clip(clip_of(e), e.start_s, e.end_s));
    s.feats = speaker_normalize(raw, stats.lookup(e.speaker));
    std::vector<int> ids = bpe_apply(normalize(e.tgt), tm.bpe, tm.vocab, false);
    s.dec_in.push_back(Vocabulary::kBos);
    s.dec_in.insert(s.dec_in.end(), ids.begin(), ids.end());
    s.targets = ids;
    s.targets.push_back(Vocabulary::kEos);
    if (context_mode == "text") {
      s.ctx.text = bpe_apply(normalize(e.ctx), tm.bpe, tm.vocab, false);
    } else if (context_mode == "audio" && e.idx > 0) {
      auto it = by_pos.find({e.doc_id, e.idx - 1});
      if (it != by_pos.end()) {
        const ManifestEntry& prev = *it->second;
        FeatureMatrix praw = log_mel(slice_clip(clip_of(prev), prev.start_s, prev.end_s));
        s.ctx.audio = speaker_normalize(praw, stats.lookup(prev.speaker));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// --- whole training runs ----------------------------------------------------

std::string vocab_path(const std::string& ckpt) { return ckpt + ".vocab"; }
std::string merges_path(const std::string& ckpt) { return ckpt + ".merges"; }
std::string stats_path(const std::string& ckpt) { return ckpt + ".stats"; }
std::string train_log_path(const std::string& ckpt) { return ckpt + ".log.jsonl"; }

TrainResult run_training(const TrainJob& job) {
  std::vector<ManifestEntry> entries = read_manifest(job.manifest);
  TextModel tm;
  SpeakerStatsTable stats;
  if (!job.init_ckpt.empty()) {
    tm.bpe = load_merges(merges_path(job.init_ckpt));
    tm.vocab = Vocabulary::load(vocab_path(job.init_ckpt));
    stats = SpeakerStatsTable::load(stats_path(job.init_ckpt));
  } else {
    tm = learn_subwords(entries, job.bpe_merges);
    stats = collect_feature_stats(entries, job.manifest);
  }

  ModelConfig mc = job.model_cfg;
  if (mc.vocab == 0) mc.vocab = tm.vocab.size();
  if (mc.vocab != tm.vocab.size())
    throw UsageError("run_training: model vocab " + std::to_string(mc.vocab) +
                     " != vocabulary size " + std::to_string(tm.vocab.size()));
  mc.validate();

  Rng model_rng(job.train_cfg.seed);
  StModel model(mc, model_rng);
  if (!job.init_ckpt.empty()) init_from_checkpoint(model, job.init_ckpt);

  std::vector<TrainSample> samples =
      build_train_samples(entries, job.manifest, tm, stats, mc.context_mode);
  TrainResult res = train_loop(model, job.train_cfg, samples, train_log_path(job.out_ckpt));

  save_model(model, job.out_ckpt);
  save_merges(merges_path(job.out_ckpt), tm.bpe);
  tm.vocab.save(vocab_path(job.out_ckpt));
  stats.save(stats_path(job.out_ckpt));
  return res;
}

}  // namespace srst
