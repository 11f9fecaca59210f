#include "srst/decode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>

#include "json.hpp"
#include "srst/audio.hpp"
#include "srst/errors.hpp"
#include "srst/features.hpp"
#include "srst/resegment.hpp"
#include "srst/text.hpp"

namespace srst {

namespace {

struct Hyp {
  std::vector<int> ids;  // starts with bos
  double sum_logp = 0.0;
  bool done = false;
};

double norm_score(const Hyp& h) { return h.sum_logp / double(h.ids.size() - 1); }

}  // namespace

std::vector<int> beam_search(const StepScorer& logits_fn, int beam, int max_len) {
  if (beam < 1) throw UsageError("beam_decode: beam must be >= 1");
  if (max_len < 1) throw UsageError("beam_decode: max_len must be >= 1");

  std::vector<Hyp> pool = {Hyp{{Vocabulary::kBos}, 0.0, false}};
  for (int t = 0; t < max_len; ++t) {
    bool any_live = false;
    for (const Hyp& h : pool) any_live = any_live || !h.done;
    if (!any_live) break;

    std::vector<Hyp> next;
    for (const Hyp& h : pool) {
      if (h.done) {
        next.push_back(h);
        continue;
      }
      const std::vector<double> logits = logits_fn(h.ids);
      if (logits.empty()) throw UsageError("beam_decode: scorer returned no logits");
      double mx = logits[0];
      for (double v : logits) mx = std::max(mx, v);
      double z = 0.0;
      for (double v : logits) z += std::exp(v - mx);
      const double lse = mx + std::log(z);
      for (int c = 0; c < int(logits.size()); ++c) {
        Hyp nh;
        nh.ids = h.ids;
        nh.ids.push_back(c);
        nh.sum_logp = h.sum_logp + (logits[size_t(c)] - lse);
        nh.done = (c == Vocabulary::kEos);
        next.push_back(std::move(nh));
      }
    }
    // ties keep construction order: earlier parent first, then lower token id
    std::stable_sort(next.begin(), next.end(),
                     [](const Hyp& a, const Hyp& b) { return norm_score(a) > norm_score(b); });
    if (int(next.size()) > beam) next.resize(size_t(beam));
    pool = std::move(next);
  }

  const Hyp& best = pool.front();  // pool stays sorted by the last selection
  std::vector<int> out(best.ids.begin() + 1, best.ids.end());
  if (!out.empty() && out.back() == Vocabulary::kEos) out.pop_back();
  return out;
}

namespace {

// Manifest entries grouped by document (first-appearance order, idx order
// within), without requiring the oracle fields group_documents needs.
std::vector<std::vector<const ManifestEntry*>> group_by_doc(
    const std::vector<ManifestEntry>& entries) {
  std::vector<std::vector<const ManifestEntry*>> docs;
  std::map<std::string, std::size_t> pos;
  for (const auto& e : entries) {
    auto it = pos.find(e.doc_id);
    if (it == pos.end()) {
      pos.emplace(e.doc_id, docs.size());
      docs.emplace_back();
      docs.back().push_back(&e);
    } else {
      docs[it->second].push_back(&e);
    }
  }
  for (auto& d : docs)
    std::sort(d.begin(), d.end(),
              [](const ManifestEntry* a, const ManifestEntry* b) { return a->idx < b->idx; });
  return docs;
}

AudioClip slice_span(const AudioClip& clip, double start_s, double end_s) {
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

std::vector<int> beam_decode(const StModel& model, const Tensor& enc, const Tensor& ctx,
                             int beam, int max_len) {
  NoGradGuard ng;
  auto scorer = [&](const std::vector<int>& prefix) {
    Tensor logits = model.decode(enc, prefix, ctx, nullptr).logits;
    const int t = logits.shape()[0], v = logits.shape()[1];
    std::vector<double> row(size_t(v), 0.0);
    for (int c = 0; c < v; ++c) row[size_t(c)] = logits.data()[size_t(t - 1) * v + c];
    return row;
  };
  return beam_search(scorer, beam, max_len);
}

std::vector<SegmentHypothesis> translate_manifest(const StModel& model, const TextModel& tm,
                                                  const SpeakerStatsTable& stats,
                                                  const std::vector<ManifestEntry>& entries,
                                                  const std::string& manifest_path,
                                                  const DecodeOptions& opt) {
  const std::string mode = model.config().context_mode;
  std::map<std::string, AudioClip> wavs;
  auto clip_of = [&](const ManifestEntry& e) -> const AudioClip& {
    const std::string path = resolve_audio_path(manifest_path, e.audio);
    auto it = wavs.find(path);
    if (it == wavs.end()) it = wavs.emplace(path, read_wav(path)).first;
    return it->second;
  };

  std::vector<SegmentHypothesis> out;
  out.reserve(entries.size());
  NoGradGuard ng;
  for (const auto& doc : group_by_doc(entries)) {
    std::vector<std::string> prev_gen;
    FeatureMatrix prev_feats;
    const ManifestEntry* prev_entry = nullptr;
    for (const ManifestEntry* e : doc) {
      FeatureMatrix feats = speaker_normalize(
          log_mel(slice_span(clip_of(*e), e->start_s, e->end_s)), stats.lookup(e->speaker));

      std::vector<std::string> hyp_words;
      if (feats.t >= 4) {
        Tensor ctx_t;
        if (mode == "text") {
          std::vector<std::string> ctx_words;
          if (opt.oracle_context) {
            if (prev_entry != nullptr)
              ctx_words = strip_overlap(normalize(prev_entry->tgt), normalize(e->tgt));
          } else {
            ctx_words = prev_gen;
          }
          ctx_t = model.encode_context_text(bpe_apply(ctx_words, tm.bpe, tm.vocab, false),
                                            nullptr);
        } else if (mode == "audio" && prev_entry != nullptr && prev_feats.t >= 4) {
          ctx_t = model.encode_context_audio(prev_feats, nullptr);
        }
        Tensor enc = model.encode_speech(feats, nullptr);
        hyp_words = bpe_decode(beam_decode(model, enc, ctx_t, opt.beam, opt.max_len), tm.vocab);
      }

      SegmentHypothesis h;
      h.doc_id = e->doc_id;
      h.idx = e->idx;
      h.text = join_words(hyp_words);
      out.push_back(std::move(h));

      prev_gen = hyp_words;
      prev_feats = feats;
      prev_entry = e;
    }
  }
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["bleu"] = bleu;
  j["precisions"] = {precisions[0], precisions[1], precisions[2], precisions[3]};
  j["brevity_penalty"] = brevity_penalty;
  j["ter"] = ter;
  j["segments"] = segments;
  j["hyp_tokens"] = hyp_tokens;
  j["ref_tokens"] = ref_tokens;
  return j.dump();
}

EvalReport EvalReport::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("eval report: ") + e.what());
  }
  EvalReport r;
  try {
    r.bleu = j.at("bleu").get<double>();
    for (int i = 0; i < 4; ++i) r.precisions[i] = j.at("precisions").at(size_t(i)).get<double>();
    r.brevity_penalty = j.at("brevity_penalty").get<double>();
    r.ter = j.at("ter").get<double>();
    r.segments = j.at("segments").get<long long>();
    r.hyp_tokens = j.at("hyp_tokens").get<long long>();
    r.ref_tokens = j.at("ref_tokens").get<long long>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("eval report: ") + e.what());
  }
  return r;
}

EvalResult evaluate_manifest(const StModel& model, const TextModel& tm,
                             const SpeakerStatsTable& stats, const std::string& manifest_path,
                             const EvalOptions& opt) {
  std::vector<ManifestEntry> entries = read_manifest(manifest_path);
  if (entries.empty()) throw UsageError("evaluate_manifest: empty manifest");
  if (opt.use_vad && opt.decode.oracle_context)
    throw UsageError("evaluate_manifest: oracle context needs per-segment references, "
                     "which a VAD segmentation does not have");

  EvalResult result;
  std::vector<std::vector<std::string>> hyp_tokens, ref_tokens;

  if (!opt.use_vad) {
    result.hypotheses = translate_manifest(model, tm, stats, entries, manifest_path, opt.decode);
    std::map<std::pair<std::string, int>, const ManifestEntry*> by_pos;
    for (const auto& e : entries) by_pos[{e.doc_id, e.idx}] = &e;
    for (const auto& h : result.hypotheses) {
      hyp_tokens.push_back(split_words(h.text));
      ref_tokens.push_back(normalize(by_pos.at({h.doc_id, h.idx})->tgt));
    }
  } else {
    // re-segment each document's audio, decode the fragments in order, and
    // score at document level (no per-fragment references exist)
    std::vector<ManifestEntry> fragments;
    std::vector<std::string> doc_order;
    std::map<std::string, std::vector<std::string>> doc_refs;
    for (const auto& doc : group_by_doc(entries)) {
      const ManifestEntry& head = *doc.front();
      doc_order.push_back(head.doc_id);
      std::vector<std::string>& ref = doc_refs[head.doc_id];
      for (const ManifestEntry* e : doc) {
        auto words = normalize(e->tgt);
        ref.insert(ref.end(), words.begin(), words.end());
      }
      AudioClip clip = read_wav(resolve_audio_path(manifest_path, head.audio));
      int idx = 0;
      for (const Segment& seg : segment_stream(clip, opt.vad)) {
        ManifestEntry f;
        f.audio = head.audio;
        f.start_s = seg.start_s;
        f.end_s = seg.end_s;
        f.doc_id = head.doc_id;
        f.idx = idx++;
        f.speaker = head.speaker;
        fragments.push_back(std::move(f));
      }
    }
    result.hypotheses =
        translate_manifest(model, tm, stats, fragments, manifest_path, opt.decode);
    std::map<std::string, std::vector<std::string>> doc_hyps;
    for (const auto& h : result.hypotheses) {
      auto words = split_words(h.text);
      auto& acc = doc_hyps[h.doc_id];
      acc.insert(acc.end(), words.begin(), words.end());
    }
    for (const std::string& d : doc_order) {
      hyp_tokens.push_back(doc_hyps[d]);  // empty when the VAD found nothing
      ref_tokens.push_back(doc_refs[d]);
    }
  }

  BleuReport b = bleu(hyp_tokens, ref_tokens);
  result.report.bleu = b.bleu;
  for (int i = 0; i < 4; ++i) result.report.precisions[i] = b.precisions[size_t(i)];
  result.report.brevity_penalty = b.brevity_penalty;
  result.report.ter = ter(hyp_tokens, ref_tokens);
  result.report.segments = (long long)result.hypotheses.size();
  result.report.hyp_tokens = b.hyp_tokens;
  result.report.ref_tokens = b.ref_tokens;
  return result;
}

EvalResult evaluate_checkpoint(const std::string& ckpt, const std::string& manifest_path,
                               const EvalOptions& opt) {
  StModel model = load_model(ckpt);
  TextModel tm;
  tm.bpe = load_merges(merges_path(ckpt));
  tm.vocab = Vocabulary::load(vocab_path(ckpt));
  if (tm.vocab.size() != model.config().vocab)
    throw FormatError("evaluate_checkpoint: vocabulary size " +
                      std::to_string(tm.vocab.size()) + " does not match the model (" +
                      std::to_string(model.config().vocab) + ")");
  SpeakerStatsTable stats = SpeakerStatsTable::load(stats_path(ckpt));
  return evaluate_manifest(model, tm, stats, manifest_path, opt);
}

void write_eval_outputs(const EvalResult& result, const std::string& report_path,
                        const std::string& hyps_path) {
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw FormatError("write_eval_outputs: cannot write " + report_path);
    out << result.report.to_json() << "\n";
  }
  if (!hyps_path.empty()) {
    std::ofstream out(hyps_path);
    if (!out) throw FormatError("write_eval_outputs: cannot write " + hyps_path);
    for (const auto& h : result.hypotheses) {
      nlohmann::json j;
      j["doc_id"] = h.doc_id;
      j["idx"] = h.idx;
      j["text"] = h.text;
      out << j.dump() << "\n";
    }
  }
}

}  // namespace srst
