#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "srst/decode.hpp"
#include "srst/errors.hpp"
#include "srst/experiment.hpp"
#include "srst/features.hpp"
#include "srst/resegment.hpp"
#include "srst/toy_corpus.hpp"
#include "srst/trainer.hpp"
#include "srst/vad.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw srst::UsageError("cannot read " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// default seed when neither --seed nor a config file supplies one
std::uint64_t env_seed() {
  const char* s = std::getenv("SRST_SEED");
  if (s == nullptr || *s == '\0') return 1;
  std::string text(s);
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &pos);
  } catch (const std::exception&) {
    throw srst::UsageError("SRST_SEED must be an unsigned integer, got '" + text + "'");
  }
  if (pos != text.size())
    throw srst::UsageError("SRST_SEED must be an unsigned integer, got '" + text + "'");
  return v;
}

// model config with defaults for missing keys; vocab may stay 0 for the
// trainer to fill in
srst::ModelConfig model_config_lenient(const json& jm) {
  json merged = json::parse(srst::ModelConfig{}.to_json());
  merged.update(jm);
  const int stored_vocab = merged.value("vocab", 0);
  if (stored_vocab == 0) merged["vocab"] = 5;
  srst::ModelConfig mc = srst::ModelConfig::from_json(merged.dump());
  mc.vocab = stored_vocab;
  return mc;
}

struct ToygenArgs {
  std::string spec_path, out;
  std::uint64_t seed = 1;
  int docs = 0;
};

void run_toygen(const ToygenArgs& a, bool seed_given) {
  srst::ToySpec spec;
  bool file_has_seed = false;
  if (!a.spec_path.empty()) {
    const std::string text = slurp(a.spec_path);
    spec = srst::ToySpec::from_json(text);
    file_has_seed = json::parse(text).count("seed") > 0;
  }
  if (a.docs > 0) spec.n_docs = a.docs;
  if (seed_given || !file_has_seed) spec.seed = a.seed;
  srst::ToyCorpus corpus = srst::gen_corpus(spec, a.out);
  json j;
  j["cmd"] = "toygen";
  j["out"] = a.out;
  j["docs"] = spec.n_docs;
  j["train"] = corpus.train.size();
  j["valid"] = corpus.valid.size();
  j["test"] = corpus.test.size();
  j["seed"] = spec.seed;
  std::cout << j.dump() << "\n";
}

struct FeaturesArgs {
  std::string in, out, stats, speaker;
};

void run_features(const FeaturesArgs& a) {
  srst::AudioClip clip = srst::read_wav(a.in);
  srst::FeatureMatrix f = srst::log_mel(clip);
  if (!a.stats.empty()) {
    srst::SpeakerStatsTable table = srst::SpeakerStatsTable::load(a.stats);
    f = srst::speaker_normalize(f, table.lookup(a.speaker));
  }
  json j;
  j["audio"] = a.in;
  j["frames"] = f.t;
  j["dim"] = f.d;
  json rows = json::array();
  for (int t = 0; t < f.t; ++t) {
    json row = json::array();
    for (int k = 0; k < f.d; ++k) row.push_back(f.at(t, k));
    rows.push_back(std::move(row));
  }
  j["features"] = std::move(rows);
  std::ofstream out(a.out);
  if (!out) throw srst::FormatError("features: cannot write " + a.out);
  out << j.dump() << "\n";
  json log;
  log["cmd"] = "features";
  log["in"] = a.in;
  log["out"] = a.out;
  log["frames"] = f.t;
  log["dim"] = f.d;
  std::cout << log.dump() << "\n";
}

struct SegmentArgs {
  std::string in, out;
  int frame_ms = 20;
  int aggressiveness = 2;
  int hangover_ms = 300;
};

void run_segment(const SegmentArgs& a) {
  std::vector<std::string> clips;
  if (fs::is_directory(a.in)) {
    for (const auto& entry : fs::directory_iterator(a.in))
      if (entry.is_regular_file() && entry.path().extension() == ".wav")
        clips.push_back(entry.path().string());
    std::sort(clips.begin(), clips.end());
    if (clips.empty()) throw srst::UsageError("segment: no .wav files in " + a.in);
  } else if (fs::exists(a.in)) {
    clips.push_back(a.in);
  } else {
    throw srst::UsageError("segment: no such file or directory: " + a.in);
  }

  srst::VadConfig cfg;
  cfg.frame_ms = a.frame_ms;
  cfg.aggressiveness = a.aggressiveness;
  if (a.hangover_ms < 0) throw srst::UsageError("segment: negative --hangover-ms");
  cfg.hangover_frames = a.hangover_ms / a.frame_ms;

  std::ofstream out(a.out);
  if (!out) throw srst::FormatError("segment: cannot write " + a.out);
  std::size_t total = 0;
  for (const std::string& clip_path : clips) {
    srst::AudioClip clip = srst::read_wav(clip_path);
    for (const srst::Segment& seg : srst::segment_stream(clip, cfg)) {
      json j;
      j["clip"] = clip_path;
      j["start_s"] = seg.start_s;
      j["end_s"] = seg.end_s;
      out << j.dump() << "\n";
      ++total;
    }
  }
  json log;
  log["cmd"] = "segment";
  log["clips"] = clips.size();
  log["segments"] = total;
  log["out"] = a.out;
  std::cout << log.dump() << "\n";
}

struct ResegmentArgs {
  std::string in, out;
  std::uint64_t seed = 1;
};

void run_resegment(const ResegmentArgs& a) {
  srst::ResegmentStats stats = srst::resegment_manifest(a.in, a.out, a.seed);
  json log;
  log["cmd"] = "resegment";
  log["in"] = a.in;
  log["out"] = a.out;
  log["documents"] = stats.documents;
  log["fragments"] = stats.fragments;
  log["samples"] = stats.samples;
  log["discarded"] = stats.discarded;
  log["seed"] = a.seed;
  std::cout << log.dump() << "\n";
}

struct TrainArgs {
  std::string config, data, manifest, init, out;
  bool freeze_encoder = false;
  std::uint64_t seed = 1;
};

void run_train(const TrainArgs& a, bool seed_given) {
  if (a.data.empty() == a.manifest.empty())
    throw srst::UsageError("train: give exactly one of --data or --manifest");

  srst::TrainJob job;
  bool config_has_seed = false;
  bool config_has_alpha = false;
  if (!a.config.empty()) {
    json j;
    try {
      j = json::parse(slurp(a.config));
    } catch (const json::exception& e) {
      throw srst::FormatError(std::string("train config: ") + e.what());
    }
    if (j.count("model")) job.model_cfg = model_config_lenient(j.at("model"));
    if (j.count("train")) {
      job.train_cfg = srst::TrainConfig::from_json(j.at("train").dump());
      config_has_seed = j.at("train").count("seed") > 0;
      config_has_alpha = j.at("train").count("alpha") > 0;
    }
    job.bpe_merges = j.value("bpe_merges", job.bpe_merges);
  }
  // the gate penalty only applies to gated (context) models; default it off
  // for plain ones unless the config insists
  if (!job.model_cfg.has_context() && !config_has_alpha) job.train_cfg.alpha = 0.0;
  job.manifest =
      a.manifest.empty() ? (fs::path(a.data) / "train.jsonl").string() : a.manifest;
  job.init_ckpt = a.init;
  job.out_ckpt = a.out;
  if (a.freeze_encoder) job.train_cfg.freeze_encoder = true;
  if (seed_given || !config_has_seed) job.train_cfg.seed = a.seed;

  srst::TrainResult r = srst::run_training(job);
  json log;
  log["cmd"] = "train";
  log["ckpt"] = a.out;
  log["steps"] = r.steps;
  log["dropped_long"] = r.dropped_long;
  log["l"] = r.last.l;
  log["l_prime"] = r.last.l_prime;
  log["log"] = srst::train_log_path(a.out);
  std::cout << log.dump() << "\n";
}

struct EvaluateArgs {
  std::string ckpt, manifest, context, report, hyps;
  int beam = 4;
  int max_len = 200;
  bool use_vad = false;
  int frame_ms = 20;
  int aggressiveness = 2;
  int hangover_ms = 300;
  bool oracle_context = false;
};

void run_evaluate(const EvaluateArgs& a) {
  if (!a.context.empty()) {
    srst::StModel probe = srst::load_model(a.ckpt);
    if (probe.config().context_mode != a.context)
      throw srst::UsageError("evaluate: --context " + a.context +
                             " does not match the checkpoint (" +
                             probe.config().context_mode + ")");
  }
  srst::EvalOptions opt;
  opt.decode.beam = a.beam;
  opt.decode.max_len = a.max_len;
  opt.decode.oracle_context = a.oracle_context;
  opt.use_vad = a.use_vad;
  opt.vad.frame_ms = a.frame_ms;
  opt.vad.aggressiveness = a.aggressiveness;
  if (a.hangover_ms < 0) throw srst::UsageError("evaluate: negative --hangover-ms");
  opt.vad.hangover_frames = a.hangover_ms / a.frame_ms;

  srst::EvalResult res = srst::evaluate_checkpoint(a.ckpt, a.manifest, opt);
  std::string hyps_path = a.hyps;
  if (hyps_path.empty() && !a.report.empty()) hyps_path = a.report + ".hyps.jsonl";
  srst::write_eval_outputs(res, a.report, hyps_path);

  json log;
  log["cmd"] = "evaluate";
  log["ckpt"] = a.ckpt;
  log["manifest"] = a.manifest;
  log["report"] = json::parse(res.report.to_json());
  if (!a.report.empty()) log["report_path"] = a.report;
  if (!hyps_path.empty()) log["hyps_path"] = hyps_path;
  std::cout << log.dump() << "\n";
}

srst::ExperimentPlan resolve_plan(const std::string& arg) {
  if (arg == "paper-grid") return srst::paper_grid_plan();
  if (fs::exists(arg)) return srst::ExperimentPlan::from_json(slurp(arg));
  throw srst::UsageError("unknown plan '" + arg + "' (built-in: paper-grid, or a JSON file)");
}

struct ExperimentArgs {
  std::string plan = "paper-grid";
  std::string out;
  std::uint64_t seed = 1;
};

void run_experiment_cmd(const ExperimentArgs& a) {
  srst::ExperimentPlan plan = resolve_plan(a.plan);
  const std::string out = a.out.empty() ? "runs/" + srst::slugify(plan.name) : a.out;
  std::vector<srst::CellResult> cells = srst::run_experiment(plan, out, a.seed);
  json log;
  log["cmd"] = "experiment";
  log["plan"] = plan.name;
  log["out"] = out;
  log["cells"] = cells.size();
  log["seed"] = a.seed;
  log["table"] = (fs::path(out) / "results_table.txt").string();
  log["csv"] = (fs::path(out) / "results_table.csv").string();
  std::cout << log.dump() << "\n";
}

struct ReportArgs {
  std::string dir, plan, text, csv;
};

void run_report(const ReportArgs& a) {
  srst::ExperimentPlan plan = a.plan.empty()
                                  ? srst::ExperimentPlan::from_json(
                                        slurp((fs::path(a.dir) / "plan.json").string()))
                                  : resolve_plan(a.plan);
  std::vector<std::string> missing;
  std::vector<srst::CellResult> cells = srst::load_cells(plan, a.dir, &missing);
  if (!missing.empty()) {
    std::cerr << "missing cells:\n";
    for (const auto& m : missing) std::cerr << "  - " << m << "\n";
    throw srst::LookupError("report: " + std::to_string(missing.size()) +
                            " of the plan's cells are missing");
  }
  const std::string text = srst::render_table_text(plan, cells);
  std::cout << text;
  if (!a.text.empty()) {
    std::ofstream out(a.text);
    if (!out) throw srst::FormatError("report: cannot write " + a.text);
    out << text;
  }
  if (!a.csv.empty()) {
    std::ofstream out(a.csv);
    if (!out) throw srst::FormatError("report: cannot write " + a.csv);
    out << srst::render_table_csv(plan, cells);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segmentation-robust direct speech translation toolkit"};
  app.require_subcommand(1);

  try {
    const std::uint64_t seed_default = env_seed();

    ToygenArgs toygen;
    toygen.seed = seed_default;
    auto* sub_toygen = app.add_subcommand("toygen", "generate the synthetic corpus");
    sub_toygen->add_option("--spec", toygen.spec_path, "corpus spec JSON file");
    sub_toygen->add_option("--out", toygen.out, "output directory")->required();
    sub_toygen->add_option("--docs", toygen.docs, "override the document count");
    auto* toygen_seed = sub_toygen->add_option("--seed", toygen.seed, "corpus seed");
    sub_toygen->callback([&] { run_toygen(toygen, toygen_seed->count() > 0); });

    FeaturesArgs features;
    std::uint64_t features_seed = seed_default;
    auto* sub_features = app.add_subcommand("features", "compute log-mel features for a wav");
    sub_features->add_option("--in", features.in, "input wav")->required();
    sub_features->add_option("--out", features.out, "output JSON file")->required();
    sub_features->add_option("--stats", features.stats, "speaker statistics file");
    sub_features->add_option("--speaker", features.speaker,
                             "speaker id for normalization (with --stats)");
    sub_features->add_option("--seed", features_seed, "unused; accepted for uniformity");
    sub_features->callback([&] { run_features(features); });

    SegmentArgs segment;
    std::uint64_t segment_seed = seed_default;
    auto* sub_segment = app.add_subcommand("segment", "detect speech segments with the VAD");
    sub_segment->add_option("--in", segment.in, "wav file or directory of wavs")->required();
    sub_segment->add_option("--out", segment.out, "output manifest (JSONL)")->required();
    sub_segment->add_option("--frame-ms", segment.frame_ms, "frame size")
        ->check(CLI::IsMember({10, 20, 30}));
    sub_segment->add_option("--aggressiveness", segment.aggressiveness, "filter level")
        ->check(CLI::Range(0, 3));
    sub_segment->add_option("--hangover-ms", segment.hangover_ms,
                            "silence tolerated inside a segment");
    sub_segment->add_option("--seed", segment_seed, "unused; accepted for uniformity");
    sub_segment->callback([&] { run_segment(segment); });

    ResegmentArgs resegment;
    resegment.seed = seed_default;
    auto* sub_resegment =
        app.add_subcommand("resegment", "cut a manifest at random non-boundary words");
    sub_resegment->add_option("--in", resegment.in, "input manifest")->required();
    sub_resegment->add_option("--out", resegment.out, "output manifest")->required();
    sub_resegment->add_option("--seed", resegment.seed, "split seed");
    sub_resegment->callback([&] { run_resegment(resegment); });

    TrainArgs train;
    train.seed = seed_default;
    auto* sub_train = app.add_subcommand("train", "train a model");
    sub_train->add_option("--config", train.config,
                          "JSON config {\"model\": {...}, \"train\": {...}, \"bpe_merges\": n}");
    sub_train->add_option("--data", train.data, "directory containing train.jsonl");
    sub_train->add_option("--manifest", train.manifest, "training manifest (alternative)");
    sub_train->add_option("--init", train.init, "warm-start checkpoint");
    sub_train->add_flag("--freeze-encoder", train.freeze_encoder, "do not update the encoder");
    sub_train->add_option("--out", train.out, "output checkpoint")->required();
    auto* train_seed = sub_train->add_option("--seed", train.seed, "training seed");
    sub_train->callback([&] { run_train(train, train_seed->count() > 0); });

    EvaluateArgs evaluate;
    std::uint64_t evaluate_seed = seed_default;
    auto* sub_evaluate = app.add_subcommand("evaluate", "decode a test manifest and score it");
    sub_evaluate->add_option("--ckpt", evaluate.ckpt, "model checkpoint")->required();
    sub_evaluate->add_option("--manifest", evaluate.manifest, "test manifest")->required();
    sub_evaluate->add_option("--beam", evaluate.beam, "beam size")->check(CLI::Range(1, 1000));
    sub_evaluate->add_option("--max-len", evaluate.max_len, "maximum generated tokens")
        ->check(CLI::Range(1, 100000));
    sub_evaluate->add_option("--context", evaluate.context,
                             "assert the checkpoint's context mode")
        ->check(CLI::IsMember({"none", "text", "audio"}));
    sub_evaluate->add_option("--report", evaluate.report, "report JSON output path");
    sub_evaluate->add_option("--hyps", evaluate.hyps,
                             "hypotheses JSONL path (default: <report>.hyps.jsonl)");
    sub_evaluate->add_flag("--use-vad", evaluate.use_vad,
                           "re-segment the audio with the VAD and score per document");
    sub_evaluate->add_option("--frame-ms", evaluate.frame_ms, "VAD frame size")
        ->check(CLI::IsMember({10, 20, 30}));
    sub_evaluate->add_option("--aggressiveness", evaluate.aggressiveness, "VAD filter level")
        ->check(CLI::Range(0, 3));
    sub_evaluate->add_option("--hangover-ms", evaluate.hangover_ms,
                             "VAD silence tolerated inside a segment");
    sub_evaluate->add_flag("--oracle-context", evaluate.oracle_context,
                           "feed overlap-stripped reference context (diagnostic)");
    sub_evaluate->add_option("--seed", evaluate_seed, "unused; accepted for uniformity");
    sub_evaluate->callback([&] { run_evaluate(evaluate); });

    ExperimentArgs experiment;
    experiment.seed = seed_default;
    auto* sub_experiment = app.add_subcommand("experiment", "run a comparison grid");
    sub_experiment->add_option("--plan", experiment.plan,
                               "built-in plan name or plan JSON file");
    sub_experiment->add_option("--out", experiment.out, "run directory (default runs/<plan>)");
    sub_experiment->add_option("--seed", experiment.seed, "grid seed");
    sub_experiment->callback([&] { run_experiment_cmd(experiment); });

    ReportArgs report;
    std::uint64_t report_seed = seed_default;
    auto* sub_report = app.add_subcommand("report", "render the results table of a grid run");
    sub_report->add_option("--dir", report.dir, "experiment run directory")->required();
    sub_report->add_option("--plan", report.plan, "plan name or JSON (default: <dir>/plan.json)");
    sub_report->add_option("--text", report.text, "also write the text table here");
    sub_report->add_option("--csv", report.csv, "also write the CSV table here");
    sub_report->add_option("--seed", report_seed, "unused; accepted for uniformity");
    sub_report->callback([&] { run_report(report); });

    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  } catch (const srst::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const srst::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
