#pragma once

#include <functional>
#include <string>
#include <vector>

#include "srst/manifest.hpp"
#include "srst/metrics.hpp"
#include "srst/model.hpp"
#include "srst/trainer.hpp"
#include "srst/vad.hpp"

namespace srst {

// Next-token scorer: maps a prefix (starting with bos) to one unnormalized
// logit per vocabulary id.
using StepScorer = std::function<std::vector<double>(const std::vector<int>&)>;

// Length-normalized beam search (total log-probability / generated length,
// eos included) over an arbitrary scorer. Stops per hypothesis on eos or
// after max_len generated tokens. Ties break toward the earlier-expanded
// parent, then the lower token id, so beam = 1 is exactly greedy argmax
// decoding. Returns generated ids without bos/eos. beam < 1 or
// max_len < 1 -> UsageError.
std::vector<int> beam_search(const StepScorer& logits_fn, int beam, int max_len);

// beam_search driven by a translation model. enc is the encoded speech; ctx
// the encoded context (or an undefined tensor).
std::vector<int> beam_decode(const StModel& model, const Tensor& enc, const Tensor& ctx,
                             int beam, int max_len);

struct DecodeOptions {
  int beam = 4;
  int max_len = 200;
  // Diagnostic: feed reference translations (overlap-stripped, matching the
  // training contexts) instead of generated ones as text context.
  bool oracle_context = false;
};

struct SegmentHypothesis {
  std::string doc_id;
  int idx = 0;
  std::string text;  // space-joined decoded words
};

// Translates entries in document order (documents by first appearance, then
// idx). Text-context models feed each segment the previously generated
// translation of its document, raw (nothing exists to strip it against at
// inference); the first segment gets empty context. Audio-context models feed
// the previous entry's audio span. Segments too short to encode (< 4 feature
// frames) yield empty hypotheses and clear the running context.
std::vector<SegmentHypothesis> translate_manifest(const StModel& model, const TextModel& tm,
                                                  const SpeakerStatsTable& stats,
                                                  const std::vector<ManifestEntry>& entries,
                                                  const std::string& manifest_path,
                                                  const DecodeOptions& opt);

struct EvalReport {
  double bleu = 0.0;
  double precisions[4] = {0, 0, 0, 0};
  double brevity_penalty = 1.0;
  double ter = 0.0;
  long long segments = 0;
  long long hyp_tokens = 0;
  long long ref_tokens = 0;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

struct EvalOptions {
  DecodeOptions decode;
  // When set, each document's audio is re-segmented by the VAD and scoring is
  // document-level: the concatenated fragment hypotheses against the
  // concatenated reference sentences. Otherwise manifest entries are decoded
  // and scored one-to-one against their references.
  bool use_vad = false;
  VadConfig vad;
};

struct EvalResult {
  EvalReport report;
  std::vector<SegmentHypothesis> hypotheses;
};

// Decodes a test manifest with a trained model and scores BLEU and TER.
EvalResult evaluate_manifest(const StModel& model, const TextModel& tm,
                             const SpeakerStatsTable& stats, const std::string& manifest_path,
                             const EvalOptions& opt);

// Loads the model and its sidecar files (vocabulary, merges, speaker stats)
// and runs evaluate_manifest.
EvalResult evaluate_checkpoint(const std::string& ckpt, const std::string& manifest_path,
                               const EvalOptions& opt);

// Writes the report JSON and the per-segment hypotheses (one JSON object per
// line: {doc_id, idx, text}) to report_path and hyps_path.
void write_eval_outputs(const EvalResult& result, const std::string& report_path,
                        const std::string& hyps_path);

}  // namespace srst
