// Acceptance suite: one criterion per case, each printing a single
// [cN] PASS/FAIL line. Run `acceptance all` or `acceptance <n> [<n> ...]`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "brcsgan/brcsgan.hpp"
#include "../oracles.hpp"

using namespace brcsgan;
namespace fs = std::filesystem;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

std::string root_dir() {
  const char* env = std::getenv("ACCEPTANCE_DIR");
  return env ? env : "acceptance_runs";
}

std::string fresh_dir(const std::string& name) {
  const std::string dir = root_dir() + "/" + name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool report(int criterion, bool pass, const std::string& detail, const Timer& timer) {
  std::cout << "[c" << criterion << "] " << (pass ? "PASS" : "FAIL") << " " << detail << " ["
            << static_cast<long>(timer.seconds()) << "s]" << std::endl;
  return pass;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// criterion 1: finite-difference gradient checks across every module
// ---------------------------------------------------------------------------

bool criterion1() {
  Timer timer;
  double worst = 0.0;
  std::string worst_what;
  int instances = 0;

  // generator (encoder + attention + decoder + readout), 12 random instances
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    Rng rng(seed * 31);
    GeneratorConfig cfg;
    cfg.vocab_size = 7 + static_cast<int>(rng.below(3));
    cfg.embed_dim = 2 + rng.below(2);
    cfg.hidden_dim = 2 + rng.below(3);
    cfg.t_max = 5;
    cfg.init_seed = seed;
    GruAttentionGenerator gen(cfg);
    std::vector<SentencePair> pairs;
    for (int i = 0; i < 2; ++i) {
      SentencePair p;
      const int len = 2 + static_cast<int>(rng.below(2));
      for (int j = 0; j < len; ++j)
        p.source.push_back(4 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab_size - 4))));
      for (int j = 0; j + 1 < len; ++j)
        p.target.push_back(4 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab_size - 4))));
      p.target.push_back(kEos);
      pairs.push_back(std::move(p));
    }
    Batch batch = make_batch({&pairs[0], &pairs[1]}, 4);
    auto build = [&](Tape& t) { return t.scale(gen.mle_loss_graph(t, batch), 0.01); };
    FdReport rep = finite_difference_check(gen.params(), build, 1e-5);
    if (rep.max_rel_err > worst) {
      worst = rep.max_rel_err;
      worst_what = "generator seed " + std::to_string(seed) + " at " + rep.worst_param;
    }
    ++instances;
  }

  // CNN discriminator with batch-norm in batch-statistics mode, 10 instances
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed * 77);
    DiscriminatorConfig cfg;
    cfg.vocab_size = 9;
    cfg.embed_dim = 3;
    cfg.window_sizes = {1, 2, 3};
    cfg.kernels_per_window = 2;
    cfg.t = 5;
    cfg.init_seed = seed;
    CnnDiscriminator disc(cfg);
    auto rand_seq = [&](std::size_t len) {
      std::vector<int> s;
      for (std::size_t j = 0; j < len; ++j) s.push_back(4 + static_cast<int>(rng.below(5)));
      s.resize(cfg.t, kPad);
      return s;
    };
    DiscPair r{rand_seq(4), rand_seq(5)};
    DiscPair f{rand_seq(5), rand_seq(3)};
    auto build = [&](Tape& t) { return t.scale(disc.loss_graph(t, {&r}, {&f}, false), 0.01); };
    FdReport rep = finite_difference_check(disc.params(), build, 1e-5);
    if (rep.max_rel_err > worst) {
      worst = rep.max_rel_err;
      worst_what = "discriminator seed " + std::to_string(seed) + " at " + rep.worst_param;
    }
    ++instances;
  }

  std::ostringstream detail;
  detail << "gradient checks: max rel err " << worst << " over " << instances
         << " instances (worst: " << worst_what << "; tolerance 1e-4)";
  return report(1, worst < 1e-4 && timer.seconds() < 120.0, detail.str(), timer);
}

// ---------------------------------------------------------------------------
// criterion 2: REINFORCE estimator unbiasedness on an enumerable instance
// ---------------------------------------------------------------------------

bool criterion2() {
  Timer timer;
  // vocabulary {A, B} plus the reserved tokens, sequences up to length 2
  GeneratorConfig gcfg;
  gcfg.vocab_size = 6;
  gcfg.embed_dim = 2;
  gcfg.hidden_dim = 2;
  gcfg.t_max = 2;
  gcfg.init_seed = 12;
  GruAttentionGenerator gen(gcfg);

  DiscriminatorConfig dcfg;
  dcfg.vocab_size = 6;
  dcfg.embed_dim = 3;
  dcfg.window_sizes = {1, 2};
  dcfg.kernels_per_window = 2;
  dcfg.t = 2;
  dcfg.init_seed = 5;
  const CnnDiscriminator frozen(dcfg);
  const DiscScorer scorer = make_disc_scorer(frozen);

  RewardConfig rcfg;
  rcfg.lambda = 0.7;
  rcfg.baseline = 0.5;
  rcfg.rollouts = 4;
  rcfg.t_max = 2;

  const SentencePair pair{{4}, {5, kEos}};
  const ExactGradient exact = exact_expected_gradient(gen, scorer, pair.source, pair.target, rcfg);

  const std::size_t dim = exact.gradient.size();
  std::vector<double> sum(dim, 0.0), sumsq(dim, 0.0);
  const int episodes = 100000;
  for (int e = 0; e < episodes; ++e) {
    PgResult r = policy_gradient_step(gen, scorer, {&pair}, rcfg, 20240601,
                                      static_cast<std::uint64_t>(e),
                                      {false, true, /*apply_update=*/false});
    const double t_len = r.mean_length;  // single-sentence batch
    for (std::size_t i = 0; i < dim; ++i) {
      const double g = r.gradient[i] * t_len;  // undo the 1/T normalization
      sum[i] += g;
      sumsq[i] += g * g;
    }
  }
  double worst_z = 0.0;
  std::size_t fails = 0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double mean = sum[i] / episodes;
    const double var = std::max(0.0, sumsq[i] / episodes - mean * mean);
    const double se = std::sqrt(var / episodes);
    const double diff = std::fabs(mean - exact.gradient[i]);
    if (diff > 3.0 * se + 1e-12) ++fails;
    if (se > 0.0) worst_z = std::max(worst_z, diff / se);
  }
  std::ostringstream detail;
  detail << "policy-gradient unbiasedness: " << dim << " coordinates, " << episodes
         << " episodes, worst |z| " << worst_z << ", coordinates beyond 3 standard errors: "
         << fails;
  return report(2, fails == 0 && timer.seconds() < 300.0, detail.str(), timer);
}

// ---------------------------------------------------------------------------
// criterion 3: reward mixture identity over random (D, Q, lambda) triples
// ---------------------------------------------------------------------------

bool criterion3() {
  Timer timer;
  Rng rng(321);
  double worst = 0.0;
  const std::vector<int> src = {4, 5};
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<int> y, ref;
    const int yl = 1 + static_cast<int>(rng.below(5));
    const int rl = 1 + static_cast<int>(rng.below(5));
    for (int i = 0; i < yl; ++i) y.push_back(4 + static_cast<int>(rng.below(3)));
    for (int i = 0; i < rl; ++i) ref.push_back(4 + static_cast<int>(rng.below(3)));
    y.push_back(kEos);
    ref.push_back(kEos);
    const double d = rng.next_double();
    const double lambda = rng.next_double();
    const DiscScorer scorer = [d](const std::vector<int>&, const std::vector<int>&) { return d; };
    RewardConfig base;
    base.baseline = 0.5;
    base.rollouts = 1;
    base.t_max = 8;
    RewardConfig mix = base, gan = base, bleu_only = base;
    mix.lambda = lambda;
    gan.lambda = 1.0;
    bleu_only.lambda = 0.0;
    const double r_mix = terminal_reward(scorer, src, y, ref, mix);
    const double r1 = terminal_reward(scorer, src, y, ref, gan);
    const double r0 = terminal_reward(scorer, src, y, ref, bleu_only);
    worst = std::max(worst, std::fabs(r_mix - (lambda * r1 + (1.0 - lambda) * r0)));
  }
  std::ostringstream detail;
  detail << "reward mixture identity over 1000 random triples: max deviation " << worst
         << " (tolerance 1e-12)";
  return report(3, worst < 1e-12, detail.str(), timer);
}

// ---------------------------------------------------------------------------
// criterion 4: lambda = 0 equals the BLEU-weighted log-prob gradient
// ---------------------------------------------------------------------------

bool criterion4() {
  Timer timer;
  GeneratorConfig gcfg;
  gcfg.vocab_size = 8;
  gcfg.embed_dim = 3;
  gcfg.hidden_dim = 4;
  gcfg.t_max = 5;
  gcfg.init_seed = 77;
  GruAttentionGenerator gen(gcfg);

  RewardConfig rcfg;
  rcfg.lambda = 0.0;
  rcfg.rollouts = 3;
  rcfg.t_max = 5;
  // the discriminator output must be irrelevant at lambda = 0
  const DiscScorer scorer = [](const std::vector<int>&, const std::vector<int>&) { return 0.9123; };

  std::vector<SentencePair> pairs = {{{4, 5, 6}, {6, 5, kEos}}, {{5, 7}, {7, kEos}}};
  std::vector<const SentencePair*> batch = {&pairs[0], &pairs[1]};
  PgResult pg = policy_gradient_step(gen, scorer, batch, rcfg, 555, 3,
                                     {/*keep_samples=*/true, /*keep_gradient=*/true,
                                      /*apply_update=*/false});

  // independent side: recompute the weights straight from sentence BLEU over
  // the captured samples, rebuild the weighted log-likelihood, differentiate
  std::vector<SentencePair> sampled(batch.size());
  std::vector<const SentencePair*> sampled_ptrs(batch.size());
  Tensor weights({batch.size(), rcfg.t_max});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    sampled[i].source = pairs[i].source;
    sampled[i].target = pg.samples[i].sampled;
    sampled_ptrs[i] = &sampled[i];
    const std::size_t t_len = pg.samples[i].sampled.size();
    for (std::size_t t = 0; t + 1 < t_len; ++t) {
      double sum = 0.0;
      for (const auto& roll : pg.samples[i].rollouts[t])
        sum += sentence_bleu(roll, pairs[i].target).value;
      weights[i * rcfg.t_max + t] = sum / static_cast<double>(pg.samples[i].rollouts[t].size());
    }
    weights[i * rcfg.t_max + t_len - 1] =
        sentence_bleu(pg.samples[i].sampled, pairs[i].target).value;
  }
  Batch padded = make_batch(sampled_ptrs, rcfg.t_max);
  Tape tape;
  Tensor w({padded.size, padded.t});
  for (std::size_t i = 0; i < padded.size; ++i)
    for (std::size_t t = 0; t < padded.t; ++t)
      w[i * padded.t + t] = weights[i * padded.t + t] * padded.tgt_mask(i, t) /
                            (static_cast<double>(padded.target_len[i]) *
                             static_cast<double>(padded.size));
  Var lp = gen.logprob_matrix_graph(tape, padded);
  Var loss = tape.scale(tape.sum_all(tape.mul(lp, tape.constant(std::move(w)))), -1.0);
  gen.params().zero_grads();
  tape.backward(loss);
  std::vector<double> independent = gen.params().flat_grads();
  for (double& g : independent) g = -g;
  gen.params().zero_grads();

  double worst = 0.0;
  for (std::size_t i = 0; i < independent.size(); ++i)
    worst = std::max(worst, std::fabs(independent[i] - pg.gradient[i]));
  std::ostringstream detail;
  detail << "lambda=0 step gradient vs independent BLEU-weighted gradient: max abs diff "
         << worst << " over " << independent.size() << " coordinates (tolerance 1e-12)";
  return report(4, worst < 1e-12, detail.str(), timer);
}

// ---------------------------------------------------------------------------
// criterion 5: sentence BLEU vs the brute-force oracle
// ---------------------------------------------------------------------------

bool criterion5() {
  Timer timer;
  Rng rng(20240607);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> ref, cand;
    const int rl = 1 + static_cast<int>(rng.below(14));
    const int cl = 1 + static_cast<int>(rng.below(14));
    for (int i = 0; i < rl; ++i) ref.push_back(4 + static_cast<int>(rng.below(5)));
    for (int i = 0; i < cl; ++i) cand.push_back(4 + static_cast<int>(rng.below(5)));
    worst = std::max(worst, std::fabs(sentence_bleu(cand, ref).value -
                                      oracles::brute_force_sentence_bleu(cand, ref)));
  }
  // the hand-derived example
  const double hand = sentence_bleu({4, 5, 6, 7}, {4, 5, 6, 8}).value;
  const double expect = std::pow(0.75 * 0.75 * (2.0 / 3.0) * 0.5, 0.25);
  const bool hand_ok = std::fabs(hand - expect) < 1e-12 && std::fabs(hand - 0.6580) < 1e-4;
  std::ostringstream detail;
  detail << "sentence BLEU vs brute-force oracle on 50 randomized pairs: max deviation " << worst
         << "; hand-derived example " << hand << " (expected ~0.6580)";
  return report(5, worst < 1e-12 && hand_ok, detail.str(), timer);
}

// ---------------------------------------------------------------------------
// criterion 6: clipping and schedule invariants over a 200-iteration run
// ---------------------------------------------------------------------------

bool criterion6() {
  Timer timer;
  const std::string dir = fresh_dir("c6");
  ExperimentConfig cfg;
  cfg.corpus.kind = TaskKind::CipherReorder;
  cfg.corpus.vocab_size = 14;
  cfg.corpus.len_min = 2;
  cfg.corpus.len_max = 6;
  cfg.corpus.train_size = 400;
  cfg.corpus.dev_size = 60;
  cfg.corpus.test_size = 30;
  cfg.corpus.seed = 6;
  cfg.embed_dim = 8;
  cfg.hidden_dim = 16;
  cfg.t_max = 8;
  cfg.disc_embed_dim = 8;
  cfg.disc_kernels = 8;
  cfg.seed = 6;
  cfg.train.seed = 6;
  cfg.train.eta = 50;
  cfg.train.rollouts = 4;
  cfg.train.pg_batch = 4;
  cfg.train.disc_batch = 16;
  cfg.train.gen_batch = 16;
  cfg.train.max_pretrain_steps = 300;
  cfg.train.eval_interval = 50;
  cfg.train.patience = 1000;  // run the full 200 iterations
  cfg.train.max_adv_steps = 200;
  cfg.train.disc_pretrain_cap = 150;
  cfg.train.disc_pool = 200;
  cfg.train.xi = 0.6;
  cfg.validate();

  GeneratedCorpus corpus = generate_corpus(cfg.corpus);
  MetricsWriter metrics(paths::metrics(dir));
  (void)run_pretrain_gen(cfg, dir, corpus, metrics);
  (void)run_pretrain_disc(cfg, dir, corpus, metrics);
  // the loop itself checks max |weight| <= epsilon after every iteration and
  // throws on the first violation, so completing 200 steps is the invariant
  AdversarialResult res = run_train_gan(cfg, dir, corpus, metrics);

  CnnDiscriminator disc(cfg.discriminator_config());
  load_checkpoint(disc.params(), paths::disc_last(dir));
  const double final_max = disc.max_abs_weight();

  const bool pass = res.state.step == 200 && res.state.g_steps == 200 &&
                    res.state.tf_steps == 200 && res.state.d_steps == 200 &&
                    final_max <= cfg.train.epsilon && timer.seconds() < 600.0;
  std::ostringstream detail;
  detail << "200-iteration adversarial run: G/TF/D steps " << res.state.g_steps << "/"
         << res.state.tf_steps << "/" << res.state.d_steps << ", max |D weight| "
         << final_max << " (epsilon " << cfg.train.epsilon
         << ", per-iteration clip checked inside the loop)";
  return report(6, pass, detail.str(), timer);
}

// ---------------------------------------------------------------------------
// criterion 7: Monte Carlo consistency
// ---------------------------------------------------------------------------

bool criterion7() {
  Timer timer;
  // variance shrinks with N on a fixed prefix (desk-scale model)
  GeneratorConfig gcfg;
  gcfg.vocab_size = 12;
  gcfg.embed_dim = 4;
  gcfg.hidden_dim = 6;
  gcfg.t_max = 6;
  gcfg.init_seed = 7;
  GruAttentionGenerator gen(gcfg);
  const DiscScorer scorer = [](const std::vector<int>& s, const std::vector<int>& y) {
    return 0.3 + 0.4 / static_cast<double>(1 + (s.size() + y.size()) % 5);
  };
  const std::vector<int> src = {4, 5, 6};
  const std::vector<int> prefix = {6, 5};
  const std::vector<int> ref = {6, 5, 4, kEos};

  auto variance_at = [&](std::size_t n) {
    RewardConfig cfg;
    cfg.lambda = 0.7;
    cfg.rollouts = n;
    cfg.t_max = 6;
    double sum = 0.0, sq = 0.0;
    const int repeats = 200;
    for (int i = 0; i < repeats; ++i) {
      Rng rng = derive_rng(9000 + n, {static_cast<std::uint64_t>(i)});
      const double r = intermediate_reward(gen, scorer, src, prefix, ref, cfg, rng);
      sum += r;
      sq += r * r;
    }
    const double m = sum / repeats;
    return sq / repeats - m * m;
  };
  const double var5 = variance_at(5);
  const double var20 = variance_at(20);

  // N = 200 agrees with the enumeration expectation on a tiny instance
  GeneratorConfig tiny;
  tiny.vocab_size = 6;
  tiny.embed_dim = 2;
  tiny.hidden_dim = 2;
  tiny.t_max = 3;
  tiny.init_seed = 3;
  GruAttentionGenerator small(tiny);
  RewardConfig rcfg;
  rcfg.lambda = 0.6;
  rcfg.rollouts = 200;
  rcfg.t_max = 3;
  const std::vector<int> tsrc = {4};
  const std::vector<int> tprefix = {5};
  const std::vector<int> tref = {5, 4, kEos};
  const double expected = enumeration_expected_reward(small, scorer, tsrc, tprefix, tref, rcfg);

  Rng rng(424242);
  const RolloutSet rolls = mc_rollouts(small, tsrc, tprefix, 200, rng);
  double sum = 0.0, sq = 0.0;
  for (const auto& y : rolls.sequences) {
    const double r = terminal_reward(scorer, tsrc, y, tref, rcfg);
    sum += r;
    sq += r * r;
  }
  const double mean = sum / 200.0;
  const double se = std::sqrt(std::max(0.0, sq / 200.0 - mean * mean) / 200.0);
  const double diff = std::fabs(mean - expected);

  const bool pass = var20 < var5 && diff <= 3.0 * se + 1e-9 && timer.seconds() < 300.0;
  std::ostringstream detail;
  detail << "Monte Carlo consistency: var(N=5) " << var5 << " vs var(N=20) " << var20
         << "; N=200 estimate " << mean << " vs enumeration " << expected << " (|diff| " << diff
         << " <= 3 SE " << 3.0 * se << ")";
  return report(7, pass, detail.str(), timer);
}

// ---------------------------------------------------------------------------
// criteria 8 and 10: trend replication and determinism
// ---------------------------------------------------------------------------

ExperimentConfig trend_config(std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.corpus.kind = TaskKind::CipherReorder;
  cfg.corpus.vocab_size = 50;
  cfg.corpus.len_min = 5;
  cfg.corpus.len_max = 15;
  cfg.corpus.train_size = 10000;
  cfg.corpus.dev_size = 300;
  cfg.corpus.test_size = 300;
  cfg.corpus.seed = seed;
  cfg.embed_dim = 32;
  cfg.hidden_dim = 64;
  cfg.t_max = 16;
  cfg.disc_embed_dim = 32;
  cfg.disc_kernels = 32;
  cfg.seed = seed;
  cfg.train.seed = seed;
  cfg.train.lambda = 0.7;
  cfg.train.rollouts = 20;
  cfg.train.xi = 0.82;
  cfg.train.eta = 500;
  cfg.train.epsilon = 1.0;
  cfg.train.patience = 5;
  cfg.train.eval_interval = 100;
  cfg.train.gen_batch = 32;
  cfg.train.pg_batch = 8;
  cfg.train.disc_batch = 64;
  cfg.train.max_pretrain_steps = 2500;
  cfg.train.max_adv_steps = 150;
  cfg.train.disc_pretrain_cap = 1500;
  cfg.train.disc_pool = 2000;
  cfg.train.disc_eval_every = 10;
  cfg.train.lr_pretrain = 1e-3;
  cfg.train.lr_adversarial = 1e-4;
  cfg.validate();
  return cfg;
}

struct TrendSeedResult {
  double baseline = 0.0;
  double gan_07 = 0.0;
  double gan_10 = 0.0;
  double gan_00 = 0.0;
  double seconds_worst_run = 0.0;
};

// One seed of the criterion-8 pipeline: shared pretraining, then one
// adversarial run per lambda from the same checkpoints.
TrendSeedResult run_trend_seed(std::uint64_t seed, const std::string& dir) {
  ExperimentConfig cfg = trend_config(seed);
  GeneratedCorpus corpus = generate_corpus(cfg.corpus);
  TrendSeedResult out;
  Timer pretrain_timer;
  {
    MetricsWriter metrics(paths::metrics(dir));
    out.baseline = run_pretrain_gen(cfg, dir, corpus, metrics);
    (void)run_pretrain_disc(cfg, dir, corpus, metrics);
  }
  out.seconds_worst_run = pretrain_timer.seconds();
  for (double lambda : {0.7, 1.0, 0.0}) {
    Timer run_timer;
    ExperimentConfig rcfg = cfg;
    rcfg.train.lambda = lambda;
    std::ostringstream sub;
    sub << dir << "/lambda_" << lambda;
    fs::create_directories(sub.str());
    write_run_config(rcfg, sub.str());
    MetricsWriter metrics(paths::metrics(sub.str()));
    AdversarialResult res = run_train_gan(rcfg, sub.str(), corpus, metrics, false, dir);
    const double best = res.state.best_dev_bleu;
    if (lambda == 0.7) out.gan_07 = best;
    else if (lambda == 1.0) out.gan_10 = best;
    else out.gan_00 = best;
    out.seconds_worst_run = std::max(out.seconds_worst_run, run_timer.seconds());
  }
  return out;
}

bool criterion8() {
  Timer timer;
  std::vector<double> base, g07, g10, g00;
  double worst_run_seconds = 0.0;
  for (std::uint64_t seed : {101, 102, 103, 104, 105}) {
    const std::string dir = fresh_dir("c8_seed" + std::to_string(seed));
    TrendSeedResult r = run_trend_seed(seed, dir);
    base.push_back(r.baseline);
    g07.push_back(r.gan_07);
    g10.push_back(r.gan_10);
    g00.push_back(r.gan_00);
    worst_run_seconds = std::max(worst_run_seconds, r.seconds_worst_run);
    std::cout << "  [c8] seed " << seed << ": baseline " << r.baseline << ", lambda 0.7 "
              << r.gan_07 << ", lambda 1.0 " << r.gan_10 << ", lambda 0 " << r.gan_00
              << std::endl;
  }
  const double m_base = median(base), m07 = median(g07), m10 = median(g10), m00 = median(g00);
  const bool pass = m07 > m_base && m07 >= m10 && m07 >= m00 && worst_run_seconds < 1800.0;
  std::ostringstream detail;
  detail << "trend medians over 5 seeds: baseline " << m_base << ", lambda 0.7 " << m07
         << ", lambda 1.0 " << m10 << ", lambda 0 " << m00 << "; worst single run "
         << static_cast<long>(worst_run_seconds) << "s (< 1800s)";
  return report(8, pass, detail.str(), timer);
}

std::string strip_wall_column(const std::string& csv) {
  std::istringstream is(csv);
  std::ostringstream os;
  std::string line;
  while (std::getline(is, line)) {
    const auto last = line.rfind(',');
    os << (last == std::string::npos ? line : line.substr(0, last)) << '\n';
  }
  return os.str();
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

bool criterion10() {
  Timer timer;
  // the criterion-8 run at one seed, executed twice with identical config
  auto one_run = [&](const std::string& dir) {
    ExperimentConfig cfg = trend_config(424);
    cfg.train.max_pretrain_steps = 600;  // shortened but identical across the two runs
    cfg.train.max_adv_steps = 40;
    cfg.train.eval_interval = 20;
    GeneratedCorpus corpus = generate_corpus(cfg.corpus);
    MetricsWriter metrics(paths::metrics(dir));
    (void)run_pretrain_gen(cfg, dir, corpus, metrics);
    (void)run_pretrain_disc(cfg, dir, corpus, metrics);
    ExperimentConfig rcfg = cfg;
    const std::string sub = dir + "/gan";
    fs::create_directories(sub);
    MetricsWriter m2(paths::metrics(sub));
    (void)run_train_gan(rcfg, sub, corpus, m2, false, dir);
    return strip_wall_column(slurp(paths::metrics(dir))) +
           strip_wall_column(slurp(paths::metrics(sub)));
  };
  const std::string a = one_run(fresh_dir("c10_a"));
  const std::string b = one_run(fresh_dir("c10_b"));
  const bool pass = !a.empty() && a == b;
  std::ostringstream detail;
  detail << "repeat of the criterion-8 pipeline at one seed: metrics CSVs "
         << (pass ? "identical" : "DIFFER")
         << " byte-for-byte (wall_seconds column excluded; see decisions ledger)";
  return report(10, pass, detail.str(), timer);
}

// ---------------------------------------------------------------------------
// criterion 9: sweep trends
// ---------------------------------------------------------------------------

ExperimentConfig sweep_config(std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.corpus.kind = TaskKind::CipherReorder;
  cfg.corpus.vocab_size = 30;
  cfg.corpus.len_min = 4;
  cfg.corpus.len_max = 10;
  cfg.corpus.train_size = 4000;
  cfg.corpus.dev_size = 200;
  cfg.corpus.test_size = 100;
  cfg.corpus.seed = seed;
  cfg.embed_dim = 24;
  cfg.hidden_dim = 48;
  cfg.t_max = 11;
  cfg.disc_embed_dim = 24;
  cfg.disc_kernels = 24;
  cfg.seed = seed;
  cfg.train.seed = seed;
  cfg.train.lambda = 0.7;
  cfg.train.rollouts = 20;
  cfg.train.eta = 300;
  cfg.train.patience = 4;
  cfg.train.eval_interval = 50;
  cfg.train.gen_batch = 32;
  cfg.train.pg_batch = 8;
  cfg.train.disc_batch = 48;
  cfg.train.max_pretrain_steps = 1800;
  cfg.train.max_adv_steps = 100;
  cfg.train.disc_pretrain_cap = 1200;
  cfg.train.disc_pool = 1200;
  cfg.train.lr_pretrain = 1e-3;
  cfg.train.lr_adversarial = 1e-4;
  cfg.validate();
  return cfg;
}

bool criterion9() {
  Timer timer;
  const std::vector<std::uint64_t> seeds = {201, 202, 203};

  // (a) xi sweep
  std::map<double, std::vector<double>> xi_bleu;
  for (std::uint64_t seed : seeds) {
    ExperimentConfig cfg = sweep_config(seed);
    const std::string dir = fresh_dir("c9_xi_seed" + std::to_string(seed));
    GeneratedCorpus corpus = generate_corpus(cfg.corpus);
    auto points = run_sweep(cfg, dir, corpus, "xi", {0.6, 0.8, 0.95});
    for (const auto& p : points) xi_bleu[p.value].push_back(p.best_dev_bleu);
    std::cout << "  [c9] xi sweep seed " << seed << ":";
    for (const auto& p : points) std::cout << " xi=" << p.value << " -> " << p.best_dev_bleu;
    std::cout << std::endl;
  }
  const double xi06 = median(xi_bleu[0.6]), xi08 = median(xi_bleu[0.8]),
               xi095 = median(xi_bleu[0.95]);
  const bool xi_ok = xi08 >= xi06 && xi08 >= xi095;

  // (b) n sweep: N=5 must not beat the pretrained baseline, N=20 must
  std::vector<double> n0, n5, n20;
  for (std::uint64_t seed : seeds) {
    ExperimentConfig cfg = sweep_config(seed);
    const std::string dir = fresh_dir("c9_n_seed" + std::to_string(seed));
    GeneratedCorpus corpus = generate_corpus(cfg.corpus);
    auto points = run_sweep(cfg, dir, corpus, "n", {0.0, 5.0, 20.0});
    for (const auto& p : points) {
      if (p.value == 0.0) n0.push_back(p.best_dev_bleu);
      if (p.value == 5.0) n5.push_back(p.best_dev_bleu);
      if (p.value == 20.0) n20.push_back(p.best_dev_bleu);
    }
    std::cout << "  [c9] n sweep seed " << seed << ":";
    for (const auto& p : points) std::cout << " N=" << p.value << " -> " << p.best_dev_bleu;
    std::cout << std::endl;
  }
  const double m0 = median(n0), m5 = median(n5), m20 = median(n20);
  const bool n_ok = m5 <= m0 && m20 > m0;

  const bool pass = xi_ok && n_ok && timer.seconds() < 14400.0;
  std::ostringstream detail;
  detail << "sweep trends (medians over 3 seeds): xi {0.6: " << xi06 << ", 0.8: " << xi08
         << ", 0.95: " << xi095 << "} best at 0.8 " << (xi_ok ? "yes" : "NO") << "; N {0: " << m0
         << ", 5: " << m5 << ", 20: " << m20 << "} N=5 no gain and N=20 gain "
         << (n_ok ? "yes" : "NO");
  return report(9, pass, detail.str(), timer);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> which;
  bool all = argc <= 1;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "all") == 0) all = true;
    else which.push_back(std::atoi(argv[i]));
  }
  if (all) which = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

  fs::create_directories(root_dir());
  bool ok = true;
  for (int n : which) {
    bool pass = false;
    switch (n) {
      case 1: pass = criterion1(); break;
      case 2: pass = criterion2(); break;
      case 3: pass = criterion3(); break;
      case 4: pass = criterion4(); break;
      case 5: pass = criterion5(); break;
      case 6: pass = criterion6(); break;
      case 7: pass = criterion7(); break;
      case 8: pass = criterion8(); break;
      case 9: pass = criterion9(); break;
      case 10: pass = criterion10(); break;
      default:
        std::cerr << "unknown criterion " << n << "\n";
        return 2;
    }
    ok = ok && pass;
  }
  return ok ? 0 : 1;
}
