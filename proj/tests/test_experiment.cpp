#include "srst/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "srst/errors.hpp"
#include "test_util.hpp"

using namespace srst;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// a grid small enough for a unit test: baseline, fine-tune, one gated system
ExperimentPlan micro_plan() {
  ExperimentPlan p;
  p.name = "micro";
  p.systems.push_back({"BASE", "none", "sequential", 0.0, false, false, false});
  p.systems.push_back({"FINE-TUNE", "none", "sequential", 0.0, true, true, false});
  p.systems.push_back({"TGT PAR+REG", "text", "parallel", 0.04, true, true, true});
  p.segmentations.push_back({"CLEAN", false, VadConfig{}});
  p.segmentations.push_back({"VAD agg3 20ms", true, VadConfig{20, 3, 15}});

  p.corpus.n_docs = 8;
  p.corpus.n_speakers = 4;
  p.corpus.min_sentences = 2;
  p.corpus.max_sentences = 3;
  p.corpus.min_sentence_len = 3;
  p.corpus.max_sentence_len = 5;

  p.model.n_enc = 1;
  p.model.n_dec = 1;
  p.model.n_ctx = 1;
  p.model.d_model = 8;
  p.model.heads = 2;
  p.model.d_ff = 16;
  p.model.conv_channels = 2;
  p.model.vocab = 0;
  p.model.dropout = 0.1;

  p.train.warmup_steps = 2;
  p.train.batch_pairs = 4;
  p.train.max_steps = 3;
  p.fine_tune_steps = 2;
  p.bpe_merges = 50;
  p.decode.beam = 2;
  p.decode.max_len = 8;
  return p;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::string line;
  std::istringstream in(text);
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("slugify keeps alphanumerics and collapses the rest") {
  CHECK(slugify("TGT PAR+REG") == "tgt-par-reg");
  CHECK(slugify("VAD agg3 30ms") == "vad-agg3-30ms");
  CHECK(slugify("  weird--Name! ") == "weird-name");
  CHECK(slugify("BASE") == "base");
  CHECK(slugify("++") == "");
  CHECK(cell_path("/tmp/x", "BASE", "CLEAN") == "/tmp/x/results/base__clean.json");
}

TEST_CASE("plan validation rejects malformed grids") {
  ExperimentPlan good = paper_grid_plan();
  CHECK_NOTHROW(good.validate());
  CHECK(good.systems.size() == 10);
  CHECK(good.segmentations.size() == 4);
  CHECK(good.systems.front().name == "BASE");
  CHECK_FALSE(good.systems.front().warm_start);

  ExperimentPlan p = micro_plan();
  CHECK_NOTHROW(p.validate());

  ExperimentPlan warm_first = p;
  warm_first.systems.front().warm_start = true;
  CHECK_THROWS_AS(warm_first.validate(), UsageError);

  ExperimentPlan dup = p;
  dup.systems.push_back(dup.systems.back());
  CHECK_THROWS_AS(dup.validate(), UsageError);

  ExperimentPlan comma = p;
  comma.segmentations[1].name = "VAD 3, 20ms";
  CHECK_THROWS_AS(comma.validate(), UsageError);

  ExperimentPlan reg_base = p;
  reg_base.systems[1].alpha = 0.04;  // FINE-TUNE has no gates
  CHECK_THROWS_AS(reg_base.validate(), UsageError);

  ExperimentPlan no_sys = p;
  no_sys.systems.clear();
  CHECK_THROWS_AS(no_sys.validate(), UsageError);

  ExperimentPlan tiny = p;
  tiny.corpus.n_docs = 1;
  CHECK_THROWS_AS(tiny.validate(), UsageError);
}

TEST_CASE("plan json roundtrip") {
  ExperimentPlan p = paper_grid_plan();
  ExperimentPlan back = ExperimentPlan::from_json(p.to_json());
  CHECK(back.name == p.name);
  REQUIRE(back.systems.size() == p.systems.size());
  for (size_t i = 0; i < p.systems.size(); ++i) {
    CHECK(back.systems[i].name == p.systems[i].name);
    CHECK(back.systems[i].context_mode == p.systems[i].context_mode);
    CHECK(back.systems[i].integration == p.systems[i].integration);
    CHECK(back.systems[i].alpha == p.systems[i].alpha);
    CHECK(back.systems[i].warm_start == p.systems[i].warm_start);
    CHECK(back.systems[i].resegmented_data == p.systems[i].resegmented_data);
    CHECK(back.systems[i].freeze_encoder == p.systems[i].freeze_encoder);
  }
  REQUIRE(back.segmentations.size() == p.segmentations.size());
  for (size_t i = 0; i < p.segmentations.size(); ++i) {
    CHECK(back.segmentations[i].name == p.segmentations[i].name);
    CHECK(back.segmentations[i].use_vad == p.segmentations[i].use_vad);
    CHECK(back.segmentations[i].vad.frame_ms == p.segmentations[i].vad.frame_ms);
    CHECK(back.segmentations[i].vad.aggressiveness == p.segmentations[i].vad.aggressiveness);
  }
  CHECK(back.corpus.n_docs == p.corpus.n_docs);
  CHECK(back.corpus.max_sentences == p.corpus.max_sentences);
  CHECK(back.model.d_model == p.model.d_model);
  CHECK(back.model.heads == p.model.heads);
  CHECK(back.train.max_steps == p.train.max_steps);
  CHECK(back.train.warmup_steps == p.train.warmup_steps);
  CHECK(back.fine_tune_steps == p.fine_tune_steps);
  CHECK(back.bpe_merges == p.bpe_merges);
  CHECK(back.decode.beam == p.decode.beam);
  CHECK(back.decode.max_len == p.decode.max_len);

  CHECK_THROWS_AS(ExperimentPlan::from_json("{nope"), FormatError);
  CHECK_THROWS_AS(ExperimentPlan::from_json("{}"), FormatError);  // no systems
}

TEST_CASE("table rendering marks the best per column and the csv roundtrips") {
  ExperimentPlan p;
  p.name = "render";
  p.systems.push_back({"A", "none", "sequential", 0.0, false, false, false});
  p.systems.push_back({"B", "none", "sequential", 0.0, false, false, false});
  p.segmentations.push_back({"g1", false, VadConfig{}});
  p.segmentations.push_back({"g2", false, VadConfig{}});

  auto cell = [](const std::string& s, const std::string& g, double bleu, double ter) {
    CellResult c;
    c.system = s;
    c.segmentation = g;
    c.report.bleu = bleu;
    c.report.ter = ter;
    return c;
  };
  // g1: A best bleu, B best ter; g2: B best in both
  std::vector<CellResult> cells = {cell("A", "g1", 12.5, 60.75), cell("A", "g2", 10.25, 52.5),
                                   cell("B", "g1", 11.0, 50.5), cell("B", "g2", 30.75, 40.0)};

  const std::string text = render_table_text(p, cells);
  auto rows = lines_of(text);
  REQUIRE(rows.size() == 5);  // two header rows, a rule, two system rows
  CHECK(rows[0].find("system") == 0);
  CHECK(rows[0].find("g1") != std::string::npos);
  CHECK(rows[3].find("A") == 0);
  CHECK(rows[4].find("B") == 0);
  CHECK(rows[3].find("12.50*") != std::string::npos);
  CHECK(rows[4].find("50.50*") != std::string::npos);
  CHECK(rows[4].find("30.75*") != std::string::npos);
  CHECK(rows[4].find("40.00*") != std::string::npos);
  size_t stars = 0;
  for (char ch : text) stars += ch == '*';
  CHECK(stars == 4);  // one bleu and one ter mark per segmentation

  const std::string csv = render_table_csv(p, cells);
  auto csv_rows = lines_of(csv);
  REQUIRE(csv_rows.size() == 3);
  CHECK(csv_rows[0] == "system,g1 bleu,g1 ter,g2 bleu,g2 ter");
  // parsing a value back yields exactly the stored double
  auto fields = [](const std::string& line) {
    std::vector<std::string> out;
    std::string f;
    std::istringstream in(line);
    while (std::getline(in, f, ',')) out.push_back(f);
    return out;
  };
  auto fa = fields(csv_rows[1]);
  REQUIRE(fa.size() == 5);
  CHECK(fa[0] == "A");
  CHECK(std::stod(fa[1]) == 12.5);
  CHECK(std::stod(fa[2]) == 60.75);
  auto fb = fields(csv_rows[2]);
  CHECK(std::stod(fb[3]) == 30.75);
  CHECK(std::stod(fb[4]) == 40.0);

  // single-cell plan renders a one-row table
  ExperimentPlan one;
  one.name = "one";
  one.systems.push_back({"A", "none", "sequential", 0.0, false, false, false});
  one.segmentations.push_back({"g1", false, VadConfig{}});
  auto single = lines_of(render_table_text(one, {cell("A", "g1", 1.0, 2.0)}));
  REQUIRE(single.size() == 4);
  CHECK(single[3].find("A") == 0);

  // a missing cell renders as '-'
  std::vector<CellResult> partial = {cell("A", "g1", 12.5, 60.75)};
  const std::string ptext = render_table_text(p, partial);
  CHECK(ptext.find("-") != std::string::npos);
}

TEST_CASE("experiment grid is resumable and byte-identical across reruns") {
  auto dir = testutil::tmp_dir() / "experiment";
  fs::remove_all(dir);
  ExperimentPlan plan = micro_plan();

  const std::string run_a = (dir / "a").string();
  const std::string run_b = (dir / "b").string();
  std::vector<CellResult> cells = run_experiment(plan, run_a, 7);
  REQUIRE(cells.size() == plan.systems.size() * plan.segmentations.size());
  for (const auto& c : cells) {
    CHECK(std::isfinite(c.report.bleu));
    CHECK(std::isfinite(c.report.ter));
    CHECK(c.report.segments > 0);
  }
  CHECK(fs::exists(fs::path(run_a) / "ckpt" / "base.ckpt"));
  CHECK(fs::exists(fs::path(run_a) / "ckpt" / "tgt-par-reg.ckpt.done"));
  CHECK(fs::exists(fs::path(run_a) / "results_table.txt"));
  CHECK(fs::exists(fs::path(run_a) / "results_table.csv"));

  // an identical run in a fresh directory reproduces every result byte for byte
  run_experiment(plan, run_b, 7);
  CHECK(slurp(run_a + "/results_table.txt") == slurp(run_b + "/results_table.txt"));
  CHECK(slurp(run_a + "/results_table.csv") == slurp(run_b + "/results_table.csv"));
  for (const auto& sys : plan.systems)
    for (const auto& seg : plan.segmentations)
      CHECK(slurp(cell_path(run_a, sys.name, seg.name)) ==
            slurp(cell_path(run_b, sys.name, seg.name)));
  CHECK(slurp(run_a + "/ckpt/base.ckpt") == slurp(run_b + "/ckpt/base.ckpt"));

  // resuming re-creates deleted cells without retraining anything
  const std::string victim = cell_path(run_a, "FINE-TUNE", "CLEAN");
  fs::remove(victim);
  fs::remove(fs::path(run_a) / "results_table.txt");
  std::vector<fs::file_time_type> stamps;
  for (const auto& sys : plan.systems)
    stamps.push_back(fs::last_write_time(fs::path(run_a) / "ckpt" / (slugify(sys.name) +
                                                                     ".ckpt")));
  run_experiment(plan, run_a, 7);
  CHECK(slurp(victim) == slurp(cell_path(run_b, "FINE-TUNE", "CLEAN")));
  CHECK(slurp(run_a + "/results_table.txt") == slurp(run_b + "/results_table.txt"));
  size_t i = 0;
  for (const auto& sys : plan.systems)
    CHECK(stamps[i++] == fs::last_write_time(fs::path(run_a) / "ckpt" / (slugify(sys.name) +
                                                                         ".ckpt")));

  // missing cells are reported by name
  fs::remove(victim);
  std::vector<std::string> missing;
  load_cells(plan, run_a, &missing);
  REQUIRE(missing.size() == 1);
  CHECK(missing[0] == "FINE-TUNE / CLEAN");
  CHECK_THROWS_AS(load_cells(plan, run_a), LookupError);
}
