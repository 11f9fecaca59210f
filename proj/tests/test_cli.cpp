// End-to-end tests that drive the installed command-line binary.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "srst/experiment.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(bool(in));
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Runs the binary with a shell argument string; optional env prefix like
// "SRST_SEED=4".
CliResult run_cli(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const fs::path dir = testutil::tmp_dir();
  const fs::path out_path = dir / ("cli_out_" + std::to_string(counter) + ".txt");
  const fs::path err_path = dir / ("cli_err_" + std::to_string(counter) + ".txt");
  ++counter;
  std::string cmd = env.empty() ? "" : env + " ";
  cmd += std::string(SRST_CLI_PATH) + " " + args + " > " + out_path.string() + " 2> " +
         err_path.string();
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  CliResult r;
  r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

json last_line_json(const std::string& text) {
  std::size_t end = text.find_last_not_of('\n');
  REQUIRE(end != std::string::npos);
  std::size_t start = text.find_last_of('\n', end);
  start = (start == std::string::npos) ? 0 : start + 1;
  return json::parse(text.substr(start, end - start + 1));
}

std::vector<json> parse_jsonl(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(bool(in));
  std::vector<json> rows;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(json::parse(line));
  return rows;
}

}  // namespace

TEST_CASE("cli help and exit codes") {
  CliResult help = run_cli("--help");
  CHECK(help.code == 0);
  CHECK(help.out.find("toygen") != std::string::npos);
  CHECK(help.out.find("evaluate") != std::string::npos);

  // no subcommand and unknown subcommand are usage errors with usage text
  CHECK(run_cli("").code == 2);
  CliResult unknown = run_cli("frobnicate");
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("Usage") != std::string::npos);

  // missing required option
  CHECK(run_cli("toygen").code == 2);
  // constrained option values
  CHECK(run_cli("segment --in x.wav --out y.jsonl --frame-ms 15").code == 2);
  CHECK(run_cli("segment --in x.wav --out y.jsonl --aggressiveness 7").code == 2);
  // runtime failure: input that does not exist
  CHECK(run_cli("resegment --in /nonexistent.jsonl --out /tmp/x.jsonl").code == 1);
}

TEST_CASE("cli toygen determinism and seed sources") {
  const fs::path dir = testutil::tmp_dir() / "cli_toygen";
  fs::remove_all(dir);

  CliResult a = run_cli("toygen --out " + (dir / "a").string() + " --docs 4 --seed 9");
  CHECK(a.code == 0);
  json log = last_line_json(a.out);
  CHECK(log.at("cmd") == "toygen");
  CHECK(log.at("docs") == 4);
  CHECK(log.at("seed") == 9);

  CliResult b = run_cli("toygen --out " + (dir / "b").string() + " --docs 4 --seed 9");
  CHECK(b.code == 0);
  CHECK(slurp(dir / "a" / "train.jsonl") == slurp(dir / "b" / "train.jsonl"));

  // the environment seed fills in when --seed is absent
  CliResult c = run_cli("toygen --out " + (dir / "c").string() + " --docs 4", "SRST_SEED=9");
  CHECK(c.code == 0);
  CHECK(slurp(dir / "a" / "train.jsonl") == slurp(dir / "c" / "train.jsonl"));

  // a different seed changes the corpus
  CliResult d = run_cli("toygen --out " + (dir / "d").string() + " --docs 4 --seed 10");
  CHECK(d.code == 0);
  CHECK(slurp(dir / "a" / "train.jsonl") != slurp(dir / "d" / "train.jsonl"));

  // an unparseable environment seed is a usage error
  CHECK(run_cli("toygen --out " + (dir / "e").string(), "SRST_SEED=bogus").code == 2);

  // a spec file drives generation; the flag overrides its seed
  std::ofstream(dir / "spec.json") << R"({"n_docs": 4, "seed": 9})";
  CliResult e = run_cli("toygen --spec " + (dir / "spec.json").string() + " --out " +
                        (dir / "f").string());
  CHECK(e.code == 0);
  CHECK(slurp(dir / "a" / "train.jsonl") == slurp(dir / "f" / "train.jsonl"));
  CliResult f = run_cli("toygen --spec " + (dir / "spec.json").string() + " --out " +
                        (dir / "g").string() + " --seed 10");
  CHECK(f.code == 0);
  CHECK(slurp(dir / "d" / "train.jsonl") == slurp(dir / "g" / "train.jsonl"));
}

TEST_CASE("cli audio pipeline subcommands") {
  const fs::path dir = testutil::tmp_dir() / "cli_audio";
  fs::remove_all(dir);
  REQUIRE(run_cli("toygen --out " + (dir / "corpus").string() + " --docs 4 --seed 9").code == 0);

  std::string wav;
  for (const auto& entry : fs::directory_iterator(dir / "corpus" / "audio")) {
    wav = entry.path().string();
    break;
  }
  REQUIRE(!wav.empty());

  CliResult feats = run_cli("features --in " + wav + " --out " + (dir / "f.json").string());
  CHECK(feats.code == 0);
  json fj = json::parse(slurp(dir / "f.json"));
  CHECK(fj.at("dim") == 40);
  CHECK(fj.at("frames").get<int>() > 0);
  CHECK(fj.at("features").size() == fj.at("frames").get<std::size_t>());
  CHECK(fj.at("features").at(0).size() == 40);

  CliResult segs = run_cli("segment --in " + (dir / "corpus" / "audio").string() +
                           " --frame-ms 20 --aggressiveness 2 --hangover-ms 300 --out " +
                           (dir / "segs.jsonl").string());
  CHECK(segs.code == 0);
  json slog = last_line_json(segs.out);
  CHECK(slog.at("clips") == 4);
  std::vector<json> rows = parse_jsonl(dir / "segs.jsonl");
  CHECK(rows.size() == slog.at("segments").get<std::size_t>());
  REQUIRE(!rows.empty());
  for (const json& r : rows) {
    CHECK(r.count("clip") == 1);
    CHECK(r.at("start_s").get<double>() < r.at("end_s").get<double>());
  }

  CliResult reseg = run_cli("resegment --in " + (dir / "corpus" / "train.jsonl").string() +
                            " --seed 5 --out " + (dir / "reseg.jsonl").string());
  CHECK(reseg.code == 0);
  json rlog = last_line_json(reseg.out);
  CHECK(rlog.at("documents").get<int>() > 0);
  CHECK(rlog.at("fragments").get<int>() >= rlog.at("documents").get<int>());
  CHECK(rlog.at("discarded") == 0);
  CHECK(parse_jsonl(dir / "reseg.jsonl").size() == rlog.at("samples").get<std::size_t>());
}

TEST_CASE("cli train and evaluate") {
  const fs::path dir = testutil::tmp_dir() / "cli_train";
  fs::remove_all(dir);
  fs::create_directories(dir);
  REQUIRE(run_cli("toygen --out " + (dir / "corpus").string() + " --docs 6 --seed 11").code == 0);

  std::ofstream(dir / "cfg.json") << R"({
    "model": {"n_enc": 1, "n_dec": 1, "d_model": 8, "heads": 2, "d_ff": 16,
               "conv_channels": 2, "dropout": 0.1, "vocab": 0},
    "train": {"warmup_steps": 2, "batch_pairs": 4, "max_steps": 2},
    "bpe_merges": 50
  })";

  // exactly one of --data / --manifest
  CHECK(run_cli("train --out " + (dir / "m.ckpt").string()).code == 2);
  CHECK(run_cli("train --data " + (dir / "corpus").string() + " --manifest x.jsonl --out " +
                (dir / "m.ckpt").string())
            .code == 2);

  CliResult tr = run_cli("train --config " + (dir / "cfg.json").string() + " --data " +
                         (dir / "corpus").string() + " --out " + (dir / "m.ckpt").string() +
                         " --seed 3");
  CHECK(tr.code == 0);
  json tlog = last_line_json(tr.out);
  CHECK(tlog.at("steps") == 2);
  CHECK(fs::exists(dir / "m.ckpt"));
  CHECK(fs::exists(dir / "m.ckpt.vocab"));
  CHECK(fs::exists(dir / "m.ckpt.merges"));
  CHECK(fs::exists(dir / "m.ckpt.stats"));
  CHECK(parse_jsonl(dir / "m.ckpt.log.jsonl").size() == 2);

  CliResult ev = run_cli("evaluate --ckpt " + (dir / "m.ckpt").string() + " --manifest " +
                         (dir / "corpus" / "test.jsonl").string() +
                         " --beam 2 --max-len 8 --context none --report " +
                         (dir / "report.json").string());
  CHECK(ev.code == 0);
  json rep_json = json::parse(slurp(dir / "report.json"));
  CHECK(rep_json.count("bleu") == 1);
  CHECK(rep_json.count("ter") == 1);
  std::vector<json> hyps = parse_jsonl(dir / "report.json.hyps.jsonl");
  CHECK(hyps.size() == rep_json.at("segments").get<std::size_t>());
  for (const json& h : hyps) {
    CHECK(h.count("doc_id") == 1);
    CHECK(h.count("idx") == 1);
    CHECK(h.count("text") == 1);
  }

  // asserting the wrong context mode is a usage error
  CHECK(run_cli("evaluate --ckpt " + (dir / "m.ckpt").string() + " --manifest " +
                (dir / "corpus" / "test.jsonl").string() + " --context text")
            .code == 2);
}

TEST_CASE("cli experiment and report") {
  const fs::path dir = testutil::tmp_dir() / "cli_grid";
  fs::remove_all(dir);
  fs::create_directories(dir);

  srst::ExperimentPlan plan;
  plan.name = "cli mini";
  plan.systems = {{"BASE", "none", "sequential", 0.0, false, false, false},
                  {"TGT PAR+REG", "text", "parallel", 0.04, true, true, true}};
  plan.segmentations = {{"CLEAN", false, {20, 2, 15}}, {"VAD", true, {20, 3, 15}}};
  plan.corpus.n_docs = 8;
  plan.corpus.n_speakers = 4;
  plan.corpus.min_sentences = 2;
  plan.corpus.max_sentences = 3;
  plan.corpus.min_sentence_len = 3;
  plan.corpus.max_sentence_len = 5;
  plan.model.n_enc = 1;
  plan.model.n_dec = 1;
  plan.model.d_model = 8;
  plan.model.heads = 2;
  plan.model.d_ff = 16;
  plan.model.conv_channels = 2;
  plan.model.dropout = 0.1;
  plan.train.warmup_steps = 2;
  plan.train.batch_pairs = 4;
  plan.train.max_steps = 3;
  plan.fine_tune_steps = 2;
  plan.bpe_merges = 50;
  plan.decode.beam = 2;
  plan.decode.max_len = 8;
  std::ofstream(dir / "plan.json") << plan.to_json();

  CliResult a = run_cli("experiment --plan " + (dir / "plan.json").string() + " --seed 4 --out " +
                        (dir / "run_a").string());
  CHECK(a.code == 0);
  json alog = last_line_json(a.out);
  CHECK(alog.at("cells") == 4);

  // the same plan and seed in a fresh directory gives byte-identical tables
  CliResult b = run_cli("experiment --plan " + (dir / "plan.json").string() + " --seed 4 --out " +
                        (dir / "run_b").string());
  CHECK(b.code == 0);
  CHECK(slurp(dir / "run_a" / "results_table.txt") == slurp(dir / "run_b" / "results_table.txt"));
  CHECK(slurp(dir / "run_a" / "results_table.csv") == slurp(dir / "run_b" / "results_table.csv"));

  // report re-renders the stored cells
  CliResult rep = run_cli("report --dir " + (dir / "run_a").string() + " --csv " +
                          (dir / "rt.csv").string());
  CHECK(rep.code == 0);
  CHECK(rep.out.find("system") != std::string::npos);
  CHECK(rep.out.find("BLEU") != std::string::npos);
  CHECK(rep.out == slurp(dir / "run_a" / "results_table.txt"));
  CHECK(slurp(dir / "rt.csv") == slurp(dir / "run_a" / "results_table.csv"));

  // an unknown plan name is a usage error
  CHECK(run_cli("experiment --plan no-such-plan --out " + (dir / "run_c").string()).code == 2);

  // a missing cell fails the report and is named on stderr
  fs::remove(dir / "run_a" / "results" / "tgt-par-reg__vad.json");
  CliResult miss = run_cli("report --dir " + (dir / "run_a").string());
  CHECK(miss.code == 1);
  CHECK(miss.err.find("TGT PAR+REG / VAD") != std::string::npos);
}
