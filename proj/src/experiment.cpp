#include "srst/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "srst/errors.hpp"
#include "srst/resegment.hpp"

namespace srst {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string slurp_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("experiment: cannot read " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// atomic-enough write: a reader never sees a half-written file
void write_file(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError("experiment: cannot write " + tmp);
    out << content;
  }
  fs::rename(tmp, path);
}

std::string fmt_fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string fmt_exact(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::string slugify(const std::string& name) {
  std::string out;
  bool pending_dash = false;
  for (char ch : name) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      if (pending_dash && !out.empty()) out.push_back('-');
      pending_dash = false;
      out.push_back(char(std::tolower(static_cast<unsigned char>(ch))));
    } else {
      pending_dash = true;
    }
  }
  return out;
}

void ExperimentPlan::validate() const {
  if (name.empty()) throw UsageError("experiment plan: empty name");
  if (systems.empty()) throw UsageError("experiment plan: no systems");
  if (segmentations.empty()) throw UsageError("experiment plan: no segmentations");
  if (systems.front().warm_start)
    throw UsageError("experiment plan: the first system is the baseline and "
                     "cannot warm-start from itself");
  std::vector<std::string> slugs;
  for (const auto& s : systems) {
    if (s.name.empty() || slugify(s.name).empty())
      throw UsageError("experiment plan: system name must contain alphanumerics");
    if (s.context_mode != "none" && s.context_mode != "text" && s.context_mode != "audio")
      throw UsageError("experiment plan: bad context mode in " + s.name);
    if (s.integration != "sequential" && s.integration != "parallel")
      throw UsageError("experiment plan: bad integration in " + s.name);
    if (s.alpha < 0.0) throw UsageError("experiment plan: negative alpha in " + s.name);
    if (s.alpha > 0.0 && s.context_mode == "none")
      throw UsageError("experiment plan: regularization needs a gated context model in " +
                       s.name);
    slugs.push_back(slugify(s.name));
  }
  for (const auto& g : segmentations) {
    if (g.name.empty() || slugify(g.name).empty())
      throw UsageError("experiment plan: segmentation name must contain alphanumerics");
    if (g.name.find(',') != std::string::npos)
      throw UsageError("experiment plan: segmentation name must not contain commas: " + g.name);
    slugs.push_back("seg-" + slugify(g.name));
  }
  std::sort(slugs.begin(), slugs.end());
  if (std::adjacent_find(slugs.begin(), slugs.end()) != slugs.end())
    throw UsageError("experiment plan: duplicate row or column names");

  ModelConfig mc = model;
  if (mc.vocab == 0) mc.vocab = 5;  // filled in by training
  mc.validate();
  train.validate();
  if (fine_tune_steps < 0) throw UsageError("experiment plan: negative fine_tune_steps");
  if (bpe_merges < 1) throw UsageError("experiment plan: bpe_merges must be >= 1");
  if (decode.beam < 1 || decode.max_len < 1)
    throw UsageError("experiment plan: decode needs beam >= 1 and max_len >= 1");
  if (corpus.n_docs < 2) throw UsageError("experiment plan: need at least 2 documents");
}

std::string ExperimentPlan::to_json() const {
  json j;
  j["name"] = name;
  j["systems"] = json::array();
  for (const auto& s : systems) {
    json js;
    js["name"] = s.name;
    js["context_mode"] = s.context_mode;
    js["integration"] = s.integration;
    js["alpha"] = s.alpha;
    js["warm_start"] = s.warm_start;
    js["resegmented_data"] = s.resegmented_data;
    js["freeze_encoder"] = s.freeze_encoder;
    j["systems"].push_back(js);
  }
  j["segmentations"] = json::array();
  for (const auto& g : segmentations) {
    json jg;
    jg["name"] = g.name;
    jg["use_vad"] = g.use_vad;
    jg["frame_ms"] = g.vad.frame_ms;
    jg["aggressiveness"] = g.vad.aggressiveness;
    jg["hangover_frames"] = g.vad.hangover_frames;
    j["segmentations"].push_back(jg);
  }
  j["corpus"] = json::parse(corpus.to_json());
  j["model"] = json::parse(model.to_json());
  j["train"] = json::parse(train.to_json());
  j["fine_tune_steps"] = fine_tune_steps;
  j["bpe_merges"] = bpe_merges;
  j["beam"] = decode.beam;
  j["max_len"] = decode.max_len;
  j["oracle_context"] = decode.oracle_context;
  return j.dump(2);
}

ExperimentPlan ExperimentPlan::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("experiment plan: ") + e.what());
  }
  ExperimentPlan p;
  try {
    p.name = j.value("name", p.name);
    p.systems.clear();
    for (const auto& js : j.at("systems")) {
      SystemSpec s;
      s.name = js.at("name").get<std::string>();
      s.context_mode = js.value("context_mode", s.context_mode);
      s.integration = js.value("integration", s.integration);
      s.alpha = js.value("alpha", s.alpha);
      s.warm_start = js.value("warm_start", s.warm_start);
      s.resegmented_data = js.value("resegmented_data", s.resegmented_data);
      s.freeze_encoder = js.value("freeze_encoder", s.freeze_encoder);
      p.systems.push_back(std::move(s));
    }
    p.segmentations.clear();
    for (const auto& jg : j.at("segmentations")) {
      SegmentationSpec g;
      g.name = jg.at("name").get<std::string>();
      g.use_vad = jg.value("use_vad", g.use_vad);
      g.vad.frame_ms = jg.value("frame_ms", g.vad.frame_ms);
      g.vad.aggressiveness = jg.value("aggressiveness", g.vad.aggressiveness);
      g.vad.hangover_frames = jg.value("hangover_frames", g.vad.hangover_frames);
      p.segmentations.push_back(std::move(g));
    }
    if (j.count("corpus")) p.corpus = ToySpec::from_json(j.at("corpus").dump());
    if (j.count("model")) {
      // vocab 0 means "filled in by training" and would fail model validation
      json jm = j.at("model");
      const int stored_vocab = jm.value("vocab", 0);
      if (stored_vocab == 0) jm["vocab"] = 5;
      p.model = ModelConfig::from_json(jm.dump());
      p.model.vocab = stored_vocab;
    }
    if (j.count("train")) p.train = TrainConfig::from_json(j.at("train").dump());
    p.fine_tune_steps = j.value("fine_tune_steps", p.fine_tune_steps);
    p.bpe_merges = j.value("bpe_merges", p.bpe_merges);
    p.decode.beam = j.value("beam", p.decode.beam);
    p.decode.max_len = j.value("max_len", p.decode.max_len);
    p.decode.oracle_context = j.value("oracle_context", p.decode.oracle_context);
  } catch (const json::exception& e) {
    throw FormatError(std::string("experiment plan: ") + e.what());
  }
  p.validate();
  return p;
}

ExperimentPlan paper_grid_plan() {
  ExperimentPlan p;
  p.name = "paper-grid";

  p.systems.push_back({"BASE", "none", "sequential", 0.0, false, false, false});
  p.systems.push_back({"FINE-TUNE", "none", "sequential", 0.0, true, true, false});
  for (const std::string ctx : {"SRC", "TGT"})
    for (const std::string mode : {"SEQ", "PAR"})
      for (double alpha : {0.0, 0.04}) {
        SystemSpec s;
        s.name = ctx + " " + mode + (alpha > 0.0 ? "+REG" : "");
        s.context_mode = ctx == "SRC" ? "audio" : "text";
        s.integration = mode == "SEQ" ? "sequential" : "parallel";
        s.alpha = alpha;
        s.warm_start = true;
        s.resegmented_data = true;
        s.freeze_encoder = true;
        p.systems.push_back(std::move(s));
      }

  p.segmentations.push_back({"CLEAN", false, VadConfig{}});
  p.segmentations.push_back({"VAD agg3 30ms", true, VadConfig{30, 3, 15}});
  p.segmentations.push_back({"VAD agg2 20ms", true, VadConfig{20, 2, 15}});
  p.segmentations.push_back({"VAD agg3 20ms", true, VadConfig{20, 3, 15}});

  p.corpus.n_docs = 24;
  p.corpus.n_speakers = 4;
  p.corpus.min_sentences = 2;
  p.corpus.max_sentences = 4;
  p.corpus.min_sentence_len = 3;
  p.corpus.max_sentence_len = 6;

  p.model.n_enc = 2;
  p.model.n_dec = 2;
  p.model.n_ctx = 1;
  p.model.d_model = 16;
  p.model.heads = 4;
  p.model.d_ff = 32;
  p.model.conv_channels = 4;
  p.model.vocab = 0;
  p.model.dropout = 0.1;

  p.train.warmup_steps = 10;
  p.train.batch_pairs = 8;
  p.train.max_steps = 60;
  p.fine_tune_steps = 40;
  p.bpe_merges = 120;
  p.decode.beam = 4;
  p.decode.max_len = 24;
  return p;
}

std::string cell_path(const std::string& out_dir, const std::string& system,
                      const std::string& segmentation) {
  return (fs::path(out_dir) / "results" / (slugify(system) + "__" + slugify(segmentation) +
                                           ".json"))
      .string();
}

std::vector<CellResult> run_experiment(const ExperimentPlan& plan, const std::string& out_dir,
                                       std::uint64_t seed) {
  plan.validate();
  const fs::path root(out_dir);
  fs::create_directories(root / "data");
  fs::create_directories(root / "ckpt");
  fs::create_directories(root / "results");
  // self-describing run directory, so the report command knows the grid
  write_file((root / "plan.json").string(), plan.to_json() + "\n");

  const std::string train_manifest = (root / "data" / "train.jsonl").string();
  const std::string reseg_manifest = (root / "data" / "train_reseg.jsonl").string();
  const std::string test_manifest = (root / "data" / "test.jsonl").string();

  const std::string data_marker = (root / "data" / ".done").string();
  if (!fs::exists(data_marker)) {
    ToySpec spec = plan.corpus;
    spec.seed = seed;
    gen_corpus(spec, (root / "data").string());
    resegment_manifest(train_manifest, reseg_manifest, Rng::mix(seed, fnv1a64("resegment")));
    write_file(data_marker, "ok\n");
  }

  const std::string base_ckpt = (root / "ckpt" / (slugify(plan.systems.front().name) +
                                                  ".ckpt"))
                                    .string();
  for (const SystemSpec& sys : plan.systems) {
    const std::string ckpt = (root / "ckpt" / (slugify(sys.name) + ".ckpt")).string();
    if (!fs::exists(ckpt + ".done")) {
      TrainJob job;
      job.manifest = sys.resegmented_data ? reseg_manifest : train_manifest;
      if (sys.warm_start) job.init_ckpt = base_ckpt;
      job.out_ckpt = ckpt;
      job.model_cfg = plan.model;
      job.model_cfg.context_mode = sys.context_mode;
      job.model_cfg.integration = sys.integration;
      job.model_cfg.alpha = sys.alpha;
      job.train_cfg = plan.train;
      job.train_cfg.alpha = sys.alpha;
      job.train_cfg.freeze_encoder = sys.freeze_encoder;
      job.train_cfg.seed = Rng::mix(seed, fnv1a64(sys.name));
      if (sys.warm_start && plan.fine_tune_steps > 0)
        job.train_cfg.max_steps = plan.fine_tune_steps;
      job.bpe_merges = plan.bpe_merges;
      run_training(job);
      write_file(ckpt + ".done", "ok\n");
    }

    for (const SegmentationSpec& seg : plan.segmentations) {
      const std::string cfile = cell_path(out_dir, sys.name, seg.name);
      if (fs::exists(cfile)) continue;
      EvalOptions eo;
      eo.decode = plan.decode;
      eo.use_vad = seg.use_vad;
      eo.vad = seg.vad;
      EvalResult res = evaluate_checkpoint(ckpt, test_manifest, eo);

      json j;
      j["system"] = sys.name;
      j["segmentation"] = seg.name;
      j["report"] = json::parse(res.report.to_json());
      write_file(cfile, j.dump(2) + "\n");

      std::ostringstream hyps;
      for (const auto& h : res.hypotheses) {
        json jh;
        jh["doc_id"] = h.doc_id;
        jh["idx"] = h.idx;
        jh["text"] = h.text;
        hyps << jh.dump() << "\n";
      }
      write_file(cfile + ".hyps.jsonl", hyps.str());
    }
  }

  std::vector<CellResult> cells = load_cells(plan, out_dir);
  write_file((root / "results_table.txt").string(), render_table_text(plan, cells));
  write_file((root / "results_table.csv").string(), render_table_csv(plan, cells));
  return cells;
}

std::vector<CellResult> load_cells(const ExperimentPlan& plan, const std::string& out_dir,
                                   std::vector<std::string>* missing) {
  std::vector<CellResult> cells;
  for (const SystemSpec& sys : plan.systems)
    for (const SegmentationSpec& seg : plan.segmentations) {
      const std::string cfile = cell_path(out_dir, sys.name, seg.name);
      if (!fs::exists(cfile)) {
        if (missing == nullptr)
          throw LookupError("experiment results: missing cell " + sys.name + " / " + seg.name);
        missing->push_back(sys.name + " / " + seg.name);
        continue;
      }
      json j;
      try {
        j = json::parse(slurp_file(cfile));
      } catch (const json::exception& e) {
        throw FormatError("experiment results: " + cfile + ": " + e.what());
      }
      CellResult c;
      try {
        c.system = j.at("system").get<std::string>();
        c.segmentation = j.at("segmentation").get<std::string>();
        c.report = EvalReport::from_json(j.at("report").dump());
      } catch (const json::exception& e) {
        throw FormatError("experiment results: " + cfile + ": " + e.what());
      }
      if (c.system != sys.name || c.segmentation != seg.name)
        throw FormatError("experiment results: " + cfile + " labels mismatch its file name");
      cells.push_back(std::move(c));
    }
  return cells;
}

namespace {

const CellResult* find_cell(const std::vector<CellResult>& cells, const std::string& sys,
                            const std::string& seg) {
  for (const auto& c : cells)
    if (c.system == sys && c.segmentation == seg) return &c;
  return nullptr;
}

}  // namespace

std::string render_table_text(const ExperimentPlan& plan, const std::vector<CellResult>& cells) {
  // a column pair per segmentation; '*' marks the best completed value
  std::size_t name_w = std::string("system").size();
  for (const auto& s : plan.systems) name_w = std::max(name_w, s.name.size());

  const int num_w = 8;
  const std::size_t pair_w = 2 * num_w + 3;  // two numbers, marker slots, gap

  std::vector<double> best_bleu(plan.segmentations.size(), -1.0);
  std::vector<double> best_ter(plan.segmentations.size(), 0.0);
  std::vector<bool> any(plan.segmentations.size(), false);
  for (std::size_t gi = 0; gi < plan.segmentations.size(); ++gi)
    for (const auto& s : plan.systems)
      if (const CellResult* c = find_cell(cells, s.name, plan.segmentations[gi].name)) {
        if (!any[gi] || c->report.bleu > best_bleu[gi]) best_bleu[gi] = c->report.bleu;
        if (!any[gi] || c->report.ter < best_ter[gi]) best_ter[gi] = c->report.ter;
        any[gi] = true;
      }

  std::ostringstream os;
  auto pad_right = [](const std::string& s, std::size_t w) {
    return s + std::string(w > s.size() ? w - s.size() : 0, ' ');
  };
  auto pad_left = [](const std::string& s, std::size_t w) {
    return std::string(w > s.size() ? w - s.size() : 0, ' ') + s;
  };

  os << pad_right("system", name_w);
  for (const auto& g : plan.segmentations) os << " | " << pad_right(g.name, pair_w);
  os << "\n";
  os << std::string(name_w, ' ');
  for (std::size_t gi = 0; gi < plan.segmentations.size(); ++gi)
    os << " | " << pad_left("BLEU", num_w) << " " << pad_left("TER", num_w) << "  ";
  os << "\n";
  os << std::string(name_w, '-');
  for (std::size_t gi = 0; gi < plan.segmentations.size(); ++gi)
    os << "-+-" << std::string(pair_w, '-');
  os << "\n";

  for (const auto& s : plan.systems) {
    os << pad_right(s.name, name_w);
    for (std::size_t gi = 0; gi < plan.segmentations.size(); ++gi) {
      const CellResult* c = find_cell(cells, s.name, plan.segmentations[gi].name);
      os << " | ";
      if (c == nullptr) {
        os << pad_left("-", num_w) << " " << pad_left("-", num_w) << "  ";
        continue;
      }
      const bool bb = c->report.bleu == best_bleu[gi];
      const bool bt = c->report.ter == best_ter[gi];
      os << pad_left(fmt_fixed(c->report.bleu), num_w) << (bb ? "*" : " ")
         << pad_left(fmt_fixed(c->report.ter), num_w) << (bt ? "*" : " ");
    }
    os << "\n";
  }
  return os.str();
}

std::string render_table_csv(const ExperimentPlan& plan, const std::vector<CellResult>& cells) {
  std::ostringstream os;
  os << "system";
  for (const auto& g : plan.segmentations) os << "," << g.name << " bleu," << g.name << " ter";
  os << "\n";
  for (const auto& s : plan.systems) {
    os << s.name;
    for (const auto& g : plan.segmentations) {
      const CellResult* c = find_cell(cells, s.name, g.name);
      if (c == nullptr)
        os << ",,";
      else
        os << "," << fmt_exact(c->report.bleu) << "," << fmt_exact(c->report.ter);
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace srst
