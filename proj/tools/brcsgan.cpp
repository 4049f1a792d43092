#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "brcsgan/brcsgan.hpp"

namespace {

using namespace brcsgan;

std::string resolve_out_dir(const std::string& out_flag, const ExperimentConfig& cfg) {
  if (!out_flag.empty()) return out_flag;
  if (!cfg.run_dir.empty()) {
    if (cfg.run_dir.front() == '/') return cfg.run_dir;
    const char* root = std::getenv("BRCSGAN_RUN_ROOT");
    return std::string(root ? root : "runs") + "/" + cfg.run_dir;
  }
  throw std::runtime_error("no output directory: pass --out or set run.dir in the config");
}

ExperimentConfig config_of_run(const std::string& run_dir) {
  return parse_config(run_dir + "/config.cfg");
}

std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> out;
  std::string cell;
  std::istringstream is(csv);
  while (std::getline(is, cell, ',')) out.push_back(std::stod(cell));
  if (out.empty()) throw std::runtime_error("empty grid");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BLEU-reinforced conditional sequence GAN for toy translation tasks"};
  app.require_subcommand(1);

  std::string config_path, out_dir, run_dir, in_path, outfile, hyp_path, ref_path, ckpt, grid;
  bool resume = false;

  auto* gen_data = app.add_subcommand("gen-data", "generate a synthetic parallel corpus");
  gen_data->add_option("--config", config_path, "experiment config file")->required();
  gen_data->add_option("--out", out_dir, "run directory to create");

  auto* pre_gen = app.add_subcommand("pretrain-gen", "maximum-likelihood generator pretraining");
  pre_gen->add_option("--run", run_dir, "run directory")->required();

  auto* pre_disc = app.add_subcommand("pretrain-disc", "accuracy-gated discriminator pretraining");
  pre_disc->add_option("--run", run_dir, "run directory")->required();

  auto* gan = app.add_subcommand("train-gan", "adversarial training loop");
  gan->add_option("--run", run_dir, "run directory")->required();
  gan->add_flag("--resume", resume, "continue from the saved state");

  auto* mrt = app.add_subcommand("train-mrt", "minimum-risk fine-tuning baseline");
  mrt->add_option("--run", run_dir, "run directory holding the pretrained generator")->required();
  mrt->add_option("--out", out_dir, "output directory (default <run>/mrt)");

  auto* sweep_xi = app.add_subcommand("sweep-xi", "discriminator-gate sweep");
  sweep_xi->add_option("--run", run_dir, "run directory with corpus data")->required();
  sweep_xi->add_option("--out", out_dir, "output directory (default <run>/sweep_xi)");
  sweep_xi->add_option("--grid", grid, "comma-separated gate values");

  auto* sweep_n = app.add_subcommand("sweep-n", "Monte Carlo rollout-count sweep");
  sweep_n->add_option("--run", run_dir, "run directory with corpus data")->required();
  sweep_n->add_option("--out", out_dir, "output directory (default <run>/sweep_n)");
  sweep_n->add_option("--grid", grid, "comma-separated rollout counts (0 = pretrained)");

  auto* decode = app.add_subcommand("decode", "translate a source file with beam search");
  decode->add_option("--run", run_dir, "run directory")->required();
  decode->add_option("--in", in_path, "source text file")->required();
  decode->add_option("--outfile", outfile, "target text file to write")->required();
  decode->add_option("--ckpt", ckpt, "checkpoint override");

  auto* evaluate = app.add_subcommand("evaluate", "corpus BLEU of a hypothesis file");
  evaluate->add_option("--hyp", hyp_path, "hypothesis file")->required();
  evaluate->add_option("--ref", ref_path, "reference file")->required();

  auto* report = app.add_subcommand("report", "summarize a run directory");
  report->add_option("--run", run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_data->parsed()) {
      ExperimentConfig cfg = parse_config(config_path);
      const std::string dir = resolve_out_dir(out_dir, cfg);
      create_run_dir(dir);
      write_run_config(cfg, dir);
      GeneratedCorpus corpus = run_gen_data(cfg, dir);
      std::cout << "wrote " << corpus.train.size() << " train / " << corpus.dev.size()
                << " dev / " << corpus.test.size() << " test pairs to " << dir << "\n";
    } else if (pre_gen->parsed()) {
      ExperimentConfig cfg = config_of_run(run_dir);
      GeneratedCorpus corpus = load_corpus_dir(run_dir);
      MetricsWriter metrics(paths::metrics(run_dir),
                            std::filesystem::exists(paths::metrics(run_dir)));
      const double best = run_pretrain_gen(cfg, run_dir, corpus, metrics);
      std::cout << "pretrained generator, best dev BLEU " << format_double(best) << "\n";
    } else if (pre_disc->parsed()) {
      ExperimentConfig cfg = config_of_run(run_dir);
      GeneratedCorpus corpus = load_corpus_dir(run_dir);
      MetricsWriter metrics(paths::metrics(run_dir),
                            std::filesystem::exists(paths::metrics(run_dir)));
      DiscPretrainResult res = run_pretrain_disc(cfg, run_dir, corpus, metrics);
      std::cout << "pretrained discriminator, accuracy " << format_double(res.accuracy)
                << (res.reached_gate ? " (gate reached)" : " (gate NOT reached)") << "\n";
    } else if (gan->parsed()) {
      ExperimentConfig cfg = config_of_run(run_dir);
      GeneratedCorpus corpus = load_corpus_dir(run_dir);
      MetricsWriter metrics(paths::metrics(run_dir),
                            std::filesystem::exists(paths::metrics(run_dir)));
      AdversarialResult res = run_train_gan(cfg, run_dir, corpus, metrics, resume);
      std::cout << "adversarial training done at step " << res.state.step << ", best dev BLEU "
                << format_double(res.state.best_dev_bleu) << " (step " << res.state.best_step
                << ")\n";
    } else if (mrt->parsed()) {
      ExperimentConfig cfg = config_of_run(run_dir);
      GeneratedCorpus corpus = load_corpus_dir(run_dir);
      const std::string dir = out_dir.empty() ? run_dir + "/mrt" : out_dir;
      create_run_dir(dir);
      write_run_config(cfg, dir);
      MetricsWriter metrics(paths::metrics(dir));
      MrtResult res = run_train_mrt(cfg, dir, corpus, metrics, run_dir);
      std::cout << "mrt training done at step " << res.state.step << ", best dev BLEU "
                << format_double(res.best_dev_bleu) << "\n";
    } else if (sweep_xi->parsed() || sweep_n->parsed()) {
      const bool is_xi = sweep_xi->parsed();
      ExperimentConfig cfg = config_of_run(run_dir);
      GeneratedCorpus corpus = load_corpus_dir(run_dir);
      const std::string dir =
          out_dir.empty() ? run_dir + (is_xi ? "/sweep_xi" : "/sweep_n") : out_dir;
      create_run_dir(dir);
      std::vector<double> values;
      if (!grid.empty()) values = parse_grid(grid);
      else if (is_xi) values = {0.6, 0.7, 0.8, 0.9, 0.95};
      else values = {0, 5, 10, 15, 20, 25, 30};
      auto points = run_sweep(cfg, dir, corpus, is_xi ? "xi" : "n", values);
      for (const auto& p : points)
        std::cout << (is_xi ? "xi" : "N") << " = " << p.value << ": best dev BLEU "
                  << format_double(p.best_dev_bleu) << "\n";
    } else if (decode->parsed()) {
      ExperimentConfig cfg = config_of_run(run_dir);
      run_decode(cfg, run_dir, in_path, outfile, ckpt);
      std::cout << "decoded " << in_path << " -> " << outfile << "\n";
    } else if (evaluate->parsed()) {
      std::cout << "corpus BLEU = " << format_double(run_evaluate(hyp_path, ref_path)) << "\n";
    } else if (report->parsed()) {
      emit_report(run_dir);
      std::cout << "wrote " << run_dir << "/report.txt and report.csv\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
