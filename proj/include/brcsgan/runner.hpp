#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "brcsgan/config.hpp"
#include "brcsgan/trainer.hpp"

namespace brcsgan {

// High-level run orchestration shared by the command line tool and the
// acceptance suite. One run = one directory; a fresh run never reuses an
// existing directory.

namespace fs = std::filesystem;

inline void require_exists(const std::string& path, const std::string& phase_hint) {
  if (!fs::exists(path))
    throw std::runtime_error("missing " + path + " (run `" + phase_hint + "` first)");
}

inline void create_run_dir(const std::string& dir, bool allow_existing = false) {
  if (fs::exists(dir)) {
    if (!allow_existing)
      throw std::runtime_error("run directory already exists: " + dir +
                               " (runs are never overwritten)");
  } else {
    fs::create_directories(dir);
  }
}

inline void write_run_config(const ExperimentConfig& cfg, const std::string& dir) {
  write_config(cfg, dir + "/config.cfg");
}

// ---- gen-data --------------------------------------------------------------

inline GeneratedCorpus run_gen_data(const ExperimentConfig& cfg, const std::string& dir) {
  GeneratedCorpus corpus = generate_corpus(cfg.corpus);
  corpus.vocab.save(paths::vocab(dir));
  write_parallel(corpus.train, corpus.vocab, dir + "/train.src", dir + "/train.tgt");
  write_parallel(corpus.dev, corpus.vocab, dir + "/dev.src", dir + "/dev.tgt");
  write_parallel(corpus.test, corpus.vocab, dir + "/test.src", dir + "/test.tgt");
  return corpus;
}

inline GeneratedCorpus load_corpus_dir(const std::string& dir) {
  require_exists(paths::vocab(dir), "gen-data");
  GeneratedCorpus corpus;
  corpus.vocab = Vocab::load(paths::vocab(dir));
  corpus.train = read_parallel(dir + "/train.src", dir + "/train.tgt", corpus.vocab);
  corpus.dev = read_parallel(dir + "/dev.src", dir + "/dev.tgt", corpus.vocab);
  corpus.test = read_parallel(dir + "/test.src", dir + "/test.tgt", corpus.vocab);
  return corpus;
}

// ---- pretraining -------------------------------------------------------------

inline double run_pretrain_gen(const ExperimentConfig& cfg, const std::string& dir,
                               const GeneratedCorpus& corpus, MetricsWriter& metrics) {
  GruAttentionGenerator gen(cfg.generator_config());
  return pretrain_generator(gen, corpus, cfg.train, dir, metrics);
}

inline DiscPretrainResult run_pretrain_disc(const ExperimentConfig& cfg, const std::string& dir,
                                            const GeneratedCorpus& corpus, MetricsWriter& metrics,
                                            std::optional<double> gate = std::nullopt) {
  require_exists(paths::gen_pretrained(dir), "pretrain-gen");
  GruAttentionGenerator gen(cfg.generator_config());
  load_checkpoint(gen.params(), paths::gen_pretrained(dir));

  TrainConfig tcfg = cfg.train;
  if (gate) tcfg.xi = *gate;
  const std::vector<SentencePair> fakes =
      generate_negatives(gen, corpus.train, tcfg.disc_pool, tcfg.seed, /*round=*/0);

  CnnDiscriminator disc(cfg.discriminator_config());
  DiscPretrainResult res = pretrain_discriminator(disc, corpus.train, fakes, tcfg, metrics);
  save_checkpoint(disc.params(), paths::disc_pretrained(dir));
  if (!res.reached_gate)
    std::cerr << "warning: discriminator pretraining stopped at accuracy "
              << format_double(res.accuracy) << " below the gate " << format_double(tcfg.xi)
              << " after " << res.steps << " steps\n";
  return res;
}

// ---- adversarial and mrt -----------------------------------------------------

// Loads the pretrained pair and runs the adversarial loop inside `dir`.
// `from_dir` holds the pretrained checkpoints (defaults to `dir` itself).
inline AdversarialResult run_train_gan(const ExperimentConfig& cfg, const std::string& dir,
                                       const GeneratedCorpus& corpus, MetricsWriter& metrics,
                                       bool resume = false, std::string from_dir = "") {
  if (from_dir.empty()) from_dir = dir;
  GruAttentionGenerator gen(cfg.generator_config());
  CnnDiscriminator disc(cfg.discriminator_config());
  if (!resume) {
    require_exists(paths::gen_pretrained(from_dir), "pretrain-gen");
    require_exists(paths::disc_pretrained(from_dir), "pretrain-disc");
    load_checkpoint(gen.params(), paths::gen_pretrained(from_dir));
    load_checkpoint(disc.params(), paths::disc_pretrained(from_dir));
  }
  return adversarial_loop(gen, disc, corpus, cfg.train, dir, metrics, resume);
}

inline MrtResult run_train_mrt(const ExperimentConfig& cfg, const std::string& dir,
                               const GeneratedCorpus& corpus, MetricsWriter& metrics,
                               std::string from_dir = "") {
  if (from_dir.empty()) from_dir = dir;
  require_exists(paths::gen_pretrained(from_dir), "pretrain-gen");
  GruAttentionGenerator gen(cfg.generator_config());
  load_checkpoint(gen.params(), paths::gen_pretrained(from_dir));
  return mrt_baseline(gen, corpus, cfg.train, dir, metrics);
}

// ---- sweeps -------------------------------------------------------------------

struct SweepPoint {
  double value = 0.0;
  double best_dev_bleu = -1.0;
  std::size_t steps = 0;
  std::string dir;
};

inline void write_sweep_summary(const std::string& kind, const std::vector<SweepPoint>& points,
                                const std::string& dir) {
  std::ofstream os(dir + "/summary.csv");
  os << kind << ",best_dev_bleu,steps,dir\n";
  for (const auto& p : points)
    os << format_double(p.value) << ',' << format_double(p.best_dev_bleu) << ',' << p.steps << ','
       << p.dir << '\n';
}

// Runs the adversarial loop once per grid point, each point starting from
// the same pretrained checkpoints. kind "xi" varies the discriminator
// pretraining gate; kind "n" varies the Monte Carlo rollout count, with
// N = 0 standing for the untouched pretrained generator.
inline std::vector<SweepPoint> run_sweep(const ExperimentConfig& cfg, const std::string& dir,
                                         const GeneratedCorpus& corpus, const std::string& kind,
                                         const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("run_sweep: empty grid");
  if (kind != "xi" && kind != "n") throw std::invalid_argument("run_sweep: kind must be xi or n");

  // shared pretrained generator for every grid point
  {
    MetricsWriter metrics(paths::metrics(dir));
    if (!fs::exists(paths::gen_pretrained(dir))) run_pretrain_gen(cfg, dir, corpus, metrics);
    if (kind == "n" && !fs::exists(paths::disc_pretrained(dir)))
      run_pretrain_disc(cfg, dir, corpus, metrics);
  }

  std::vector<SweepPoint> points;
  for (double value : grid) {
    SweepPoint point;
    point.value = value;
    std::ostringstream name;
    name << kind << "_" << value;
    point.dir = dir + "/" + name.str();

    if (kind == "n" && value == 0.0) {
      // the pretrained generator itself
      GruAttentionGenerator gen(cfg.generator_config());
      load_checkpoint(gen.params(), paths::gen_pretrained(dir));
      point.best_dev_bleu = evaluate_corpus_bleu(gen, corpus.dev);
      point.steps = 0;
      points.push_back(point);
      continue;
    }

    create_run_dir(point.dir);
    ExperimentConfig pcfg = cfg;
    if (kind == "xi") pcfg.train.xi = value;
    if (kind == "n") pcfg.train.rollouts = static_cast<std::size_t>(value);
    write_run_config(pcfg, point.dir);
    MetricsWriter metrics(paths::metrics(point.dir));

    if (kind == "xi") {
      run_pretrain_disc(pcfg, point.dir, corpus, metrics, value);
      fs::copy_file(paths::gen_pretrained(dir), paths::gen_pretrained(point.dir));
    } else {
      fs::copy_file(paths::gen_pretrained(dir), paths::gen_pretrained(point.dir));
      fs::copy_file(paths::disc_pretrained(dir), paths::disc_pretrained(point.dir));
    }
    AdversarialResult res = run_train_gan(pcfg, point.dir, corpus, metrics);
    point.best_dev_bleu = res.state.best_dev_bleu;
    point.steps = res.state.step;
    points.push_back(point);
  }
  write_sweep_summary(kind, points, dir);
  return points;
}

// ---- decode / evaluate ---------------------------------------------------------

inline void run_decode(const ExperimentConfig& cfg, const std::string& dir,
                       const std::string& src_path, const std::string& out_path,
                       const std::string& checkpoint = "") {
  std::string ckpt = checkpoint;
  if (ckpt.empty()) {
    ckpt = fs::exists(paths::gen_best(dir)) ? paths::gen_best(dir) : paths::gen_pretrained(dir);
    require_exists(ckpt, "pretrain-gen");
  }
  require_exists(paths::vocab(dir), "gen-data");
  const Vocab vocab = Vocab::load(paths::vocab(dir));
  GruAttentionGenerator gen(cfg.generator_config());
  load_checkpoint(gen.params(), ckpt);

  std::ifstream is(src_path);
  if (!is) throw std::runtime_error("decode: cannot open " + src_path);
  std::ofstream os(out_path);
  if (!os) throw std::runtime_error("decode: cannot write " + out_path);
  std::string line;
  while (std::getline(is, line)) {
    std::vector<int> ids;
    for (const auto& tok : split_tokens(line)) ids.push_back(vocab.id_of(tok));
    if (ids.empty()) {
      os << '\n';
      continue;
    }
    const std::vector<int> out = gen.beam_search(ids, cfg.eval_beam, cfg.eval_length_penalty);
    bool first = true;
    for (int id : out) {
      if (id == kEos) break;
      if (!first) os << ' ';
      os << vocab.token_of(id);
      first = false;
    }
    os << '\n';
  }
}

// Corpus BLEU between two token files; the vocabulary is induced from the
// files themselves.
inline double run_evaluate(const std::string& hyp_path, const std::string& ref_path) {
  std::ifstream hyp(hyp_path), ref(ref_path);
  if (!hyp) throw std::runtime_error("evaluate: cannot open " + hyp_path);
  if (!ref) throw std::runtime_error("evaluate: cannot open " + ref_path);
  Vocab vocab;
  auto read_ids = [&vocab](std::istream& is) {
    std::vector<std::vector<int>> out;
    std::string line;
    while (std::getline(is, line)) {
      std::vector<int> ids;
      for (const auto& tok : split_tokens(line)) ids.push_back(vocab.add(tok));
      out.push_back(std::move(ids));
    }
    return out;
  };
  const auto hyps = read_ids(hyp);
  const auto refs = read_ids(ref);
  if (hyps.size() != refs.size())
    throw std::runtime_error("evaluate: hypothesis/reference line counts differ");
  return corpus_bleu(hyps, refs);
}

// ---- report ---------------------------------------------------------------------

// Renders metrics.csv (and sweep summary.csv when present) into report.txt
// and report.csv: best dev BLEU per phase plus per-grid-point tables.
// Regeneration is idempotent.
inline void emit_report(const std::string& dir) {
  const std::string metrics_path = paths::metrics(dir);
  const std::string summary_path = dir + "/summary.csv";
  if (!fs::exists(metrics_path) && !fs::exists(summary_path))
    throw std::runtime_error("emit_report: no metrics.csv or summary.csv in " + dir);

  std::ostringstream txt, csv;
  csv << "section,key,best_dev_bleu\n";

  if (fs::exists(metrics_path)) {
    std::ifstream is(metrics_path);
    std::string line;
    std::getline(is, line);  // header
    std::map<std::string, double> best;
    while (std::getline(is, line)) {
      std::vector<std::string> cells;
      std::string cell;
      std::istringstream ls(line);
      while (std::getline(ls, cell, ',')) cells.push_back(cell);
      if (cells.size() < 6 || cells[5].empty()) continue;
      const double bleu = std::stod(cells[5]);
      auto [it, fresh] = best.try_emplace(cells[1], bleu);
      if (!fresh && bleu > it->second) it->second = bleu;
    }
    txt << "best dev BLEU per phase\n";
    for (const auto& [phase, bleu] : best) {
      txt << "  " << phase << ": " << format_double(bleu) << "\n";
      csv << "phase," << phase << ',' << format_double(bleu) << '\n';
    }
  }

  if (fs::exists(summary_path)) {
    std::ifstream is(summary_path);
    std::string line;
    std::getline(is, line);
    const std::string kind = line.substr(0, line.find(','));
    txt << "sweep over " << kind << "\n";
    while (std::getline(is, line)) {
      std::vector<std::string> cells;
      std::string cell;
      std::istringstream ls(line);
      while (std::getline(ls, cell, ',')) cells.push_back(cell);
      if (cells.size() < 2) continue;
      txt << "  " << kind << " = " << cells[0] << ": best dev BLEU " << cells[1] << "\n";
      csv << "sweep-" << kind << ',' << cells[0] << ',' << cells[1] << '\n';
    }
  }

  std::ofstream(dir + "/report.txt") << txt.str();
  std::ofstream(dir + "/report.csv") << csv.str();
}

}  // namespace brcsgan
