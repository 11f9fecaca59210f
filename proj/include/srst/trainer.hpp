#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "srst/features.hpp"
#include "srst/manifest.hpp"
#include "srst/model.hpp"
#include "srst/rng.hpp"
#include "srst/tensor.hpp"
#include "srst/text.hpp"

namespace srst {

struct TrainConfig {
  double lr_start = 3e-4;
  double lr_peak = 5e-4;
  long long warmup_steps = 5000;  // toy runs use 500
  int batch_pairs = 512;          // toy runs use 32
  double label_smoothing = 0.1;
  double alpha = 0.04;  // gate regularization weight; must be 0 for ungated models
  double max_audio_s = 20.0;
  bool freeze_encoder = false;
  std::uint64_t seed = 1;
  long long max_steps = 0;  // optimizer steps to run

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

// Warmup then inverse square root: step <= warmup gives
// lr_start + (lr_peak - lr_start) * step / warmup, afterwards
// lr_peak * sqrt(warmup / step). Continuous at step == warmup.
double lr_schedule(const TrainConfig& cfg, long long step);

// Per token: (1 - eps) * nll[target] + eps * mean over the vocabulary of nll;
// averaged over unmasked tokens. mask (1 = keep) may be empty for all-keep;
// otherwise its size must match targets. All tokens masked out -> UsageError.
Tensor label_smoothed_ce(const Tensor& logits, const std::vector<int>& targets, double eps,
                         const std::vector<std::uint8_t>& mask = {});

// L' = L + alpha * sum over layers of mean(1 - lambda). alpha > 0 with no
// lambda records -> UsageError (the model has no gates).
Tensor gate_regularized_loss(const Tensor& l, const std::vector<Tensor>& lambdas, double alpha);

// All parameters, minus the speech encoder ("encoder." prefix) when
// freeze_encoder; the context encoder and gates always stay trainable.
std::vector<std::pair<std::string, Tensor>> trainable_parameters(const StModel& model,
                                                                 bool freeze_encoder);

// Bias-corrected Adam. Holds state only for the parameters it was given;
// a non-finite gradient aborts with a diagnostic naming the parameter.
class Adam {
 public:
  explicit Adam(std::vector<std::pair<std::string, Tensor>> params, double beta1 = 0.9,
                double beta2 = 0.98, double eps = 1e-9);

  void step(double lr);
  void zero_grad();
  std::size_t size() const { return slots_.size(); }
  long long steps_taken() const { return t_; }

 private:
  struct Slot {
    std::string name;
    Tensor p;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  double b1_, b2_, eps_;
  long long t_ = 0;
};

// One training sample, fully prepared: normalized features, framed decoder
// ids (dec_in = bos + ids, targets = ids + eos), and its context.
struct TrainSample {
  FeatureMatrix feats;
  std::vector<int> dec_in;
  std::vector<int> targets;
  ContextInput ctx;
  double dur_s = 0.0;
};

struct BatchPlan {
  std::vector<std::vector<int>> batches;  // sample indices per optimizer step
  int dropped_long = 0;                   // samples over max_audio_s
};

// One epoch: drop samples longer than max_audio_s, shuffle with rng, chunk
// into batch_pairs-sized steps (last batch may be short). Nothing left after
// the filter -> UsageError.
BatchPlan make_batches(const std::vector<TrainSample>& samples, const TrainConfig& cfg, Rng& rng);

struct StepLog {
  long long step = 0;
  double lr = 0.0;
  double l = 0.0;        // label-smoothed CE, token mean over the batch
  double l_prime = 0.0;  // l + gate penalty
  std::vector<double> mean_lambda;  // per decoder layer, over gated samples
};

struct TrainResult {
  long long steps = 0;
  int dropped_long = 0;
  StepLog last;
};

// Gradient-accumulated training: each step runs batch_pairs samples one at a
// time, scaling every sample's loss so the accumulated gradient equals the
// gradient of the token-averaged batch loss (CE) plus alpha times the
// per-layer batch mean of (1 - lambda). Logs one JSON line per step to
// log_path when non-empty.
TrainResult train_loop(StModel& model, const TrainConfig& cfg,
                       const std::vector<TrainSample>& samples, const std::string& log_path);

// --- data preparation -------------------------------------------------------

struct TextModel {
  BpeModel bpe;
  Vocabulary vocab;
};

// Learns subwords from the target side of a training manifest.
TextModel learn_subwords(const std::vector<ManifestEntry>& entries, int n_merges);

// Per-speaker feature statistics over a manifest (un-normalized features).
SpeakerStatsTable collect_feature_stats(const std::vector<ManifestEntry>& entries,
                                        const std::string& manifest_path);

// Normalized log-Mel features for one manifest entry's audio span.
FeatureMatrix entry_features(const ManifestEntry& e, const std::string& manifest_path,
                             const SpeakerStatsTable& stats);

// Assembles training samples: features, framed target ids, and the context
// selected by context_mode ("none", "text" from the ctx field, "audio" from
// the previous fragment's span). Wav files are read once each.
std::vector<TrainSample> build_train_samples(const std::vector<ManifestEntry>& entries,
                                             const std::string& manifest_path,
                                             const TextModel& tm, const SpeakerStatsTable& stats,
                                             const std::string& context_mode);

// --- whole training runs ----------------------------------------------------

// Sidecar files written next to a checkpoint (vocabulary, merges, feature
// stats, training log).
std::string vocab_path(const std::string& ckpt);
std::string merges_path(const std::string& ckpt);
std::string stats_path(const std::string& ckpt);
std::string train_log_path(const std::string& ckpt);

struct TrainJob {
  std::string manifest;   // training manifest (clean or resegmented)
  std::string init_ckpt;  // warm start; empty = fresh model
  std::string out_ckpt;
  ModelConfig model_cfg;  // target architecture; vocab filled from the data
  TrainConfig train_cfg;
  int bpe_merges = 500;
};

// End-to-end run: learn or inherit subwords/stats, build samples, train,
// save the checkpoint and its sidecars. With init_ckpt the text model and
// stats are inherited from the init's sidecars (vocabularies must agree).
TrainResult run_training(const TrainJob& job);

}  // namespace srst
