#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "srst/decode.hpp"
#include "srst/model.hpp"
#include "srst/toy_corpus.hpp"
#include "srst/trainer.hpp"
#include "srst/vad.hpp"

namespace srst {

// One training recipe (table row) in a comparison grid.
struct SystemSpec {
  std::string name;                  // row label, e.g. "TGT PAR+REG"
  std::string context_mode = "none";
  std::string integration = "sequential";
  double alpha = 0.0;                // gate regularization weight
  bool warm_start = false;           // initialize from the first (baseline) system
  bool resegmented_data = false;     // train on the resegmented manifest
  bool freeze_encoder = false;
};

// One evaluation condition (table column pair).
struct SegmentationSpec {
  std::string name;       // column label; must not contain commas (CSV header)
  bool use_vad = false;   // false: score the gold test segments one-to-one
  VadConfig vad;
};

// A full grid: systems x segmentations, plus everything needed to build the
// corpus, train each system, and decode. The run seed overrides corpus.seed
// and train.seed.
struct ExperimentPlan {
  std::string name = "paper-grid";
  std::vector<SystemSpec> systems;
  std::vector<SegmentationSpec> segmentations;
  ToySpec corpus;
  ModelConfig model;        // context fields and alpha overridden per system
  TrainConfig train;        // alpha/freeze/seed overridden per system
  int fine_tune_steps = 0;  // step budget for warm-started systems; 0 = train.max_steps
  int bpe_merges = 200;
  DecodeOptions decode;

  // First system is the baseline every warm start initializes from: it must
  // not itself be warm-started. Names must be unique and yield unique slugs.
  void validate() const;
  std::string to_json() const;
  static ExperimentPlan from_json(const std::string& text);
};

// The built-in comparison grid: {BASE, FINE-TUNE} plus {SRC, TGT} x {SEQ, PAR}
// x {, +REG} rows, evaluated on the gold segmentation and three energy-VAD
// settings, at a scale small enough for a laptop run.
ExperimentPlan paper_grid_plan();

struct CellResult {
  std::string system;
  std::string segmentation;
  EvalReport report;
};

// File-name slug for a row/column label: lowercase alphanumerics, runs of
// anything else collapsed to '-'.
std::string slugify(const std::string& name);

// <out_dir>/results/<system-slug>__<segmentation-slug>.json
std::string cell_path(const std::string& out_dir, const std::string& system,
                      const std::string& segmentation);

// Runs every training and evaluation cell of the plan under out_dir, then
// writes results_table.txt and results_table.csv there. Work whose outputs
// already exist is skipped, so an interrupted grid resumes where it stopped;
// all randomness is derived from (seed, cell), so a rerun in a fresh
// directory reproduces every output byte for byte. Returns the cells in plan
// order (systems outer, segmentations inner).
std::vector<CellResult> run_experiment(const ExperimentPlan& plan, const std::string& out_dir,
                                       std::uint64_t seed);

// Reads the plan's cell files from out_dir. Missing cells are appended to
// *missing when given (and the returned list holds only the cells found);
// with missing == nullptr a missing cell throws LookupError.
std::vector<CellResult> load_cells(const ExperimentPlan& plan, const std::string& out_dir,
                                   std::vector<std::string>* missing = nullptr);

// Aligned text table: one row per system, BLEU and TER per segmentation, the
// best value in each column (max BLEU, min TER) marked with '*'.
std::string render_table_text(const ExperimentPlan& plan, const std::vector<CellResult>& cells);

// Machine-readable table, full-precision values (parsing a cell back yields
// exactly the stored double).
std::string render_table_csv(const ExperimentPlan& plan, const std::vector<CellResult>& cells);

}  // namespace srst
