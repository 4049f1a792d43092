#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "brcsgan/checkpoint.hpp"
#include "brcsgan/corpus.hpp"
#include "brcsgan/discriminator.hpp"
#include "brcsgan/generator.hpp"
#include "brcsgan/reward.hpp"

namespace brcsgan {

struct TrainConfig {
  // adversarial constants; reference values xi=0.82, eta=5000, eps=1.0, N=20
  double xi = 0.82;
  std::size_t eta = 500;  // desk-scale default; 5000 at reference scale
  double epsilon = 1.0;
  double lambda = 0.7;
  std::size_t rollouts = 20;
  double baseline = 0.5;
  // loop control
  std::size_t patience = 10;
  std::size_t eval_interval = 50;
  std::size_t gen_batch = 32;
  std::size_t pg_batch = 8;
  std::size_t disc_batch = 64;  // half real, half machine
  std::size_t max_pretrain_steps = 3000;
  std::size_t max_adv_steps = 300;
  std::size_t disc_pretrain_cap = 5000;
  std::size_t disc_pool = 2000;
  std::size_t disc_eval_every = 10;
  double lr_pretrain = 1e-3;
  double lr_adversarial = 1e-4;
  std::size_t mrt_sample_size = 8;
  double divergence_guard = 10.0;  // abort when mean |reward| passes this
  std::uint64_t seed = 1;

  void validate() const {
    if (!(xi > 0.5 && xi < 1.0)) throw std::invalid_argument("TrainConfig: xi must be in (0.5, 1)");
    if (eta < 1) throw std::invalid_argument("TrainConfig: eta must be >= 1");
    if (!(epsilon > 0.0)) throw std::invalid_argument("TrainConfig: epsilon must be > 0");
    if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
    if (!(lambda >= 0.0 && lambda <= 1.0))
      throw std::invalid_argument("TrainConfig: lambda must be in [0,1]");
    if (rollouts < 1) throw std::invalid_argument("TrainConfig: rollouts must be >= 1");
    if (eval_interval < 1) throw std::invalid_argument("TrainConfig: eval_interval must be >= 1");
  }

  RewardConfig reward_config(std::size_t t_max) const {
    RewardConfig r;
    r.lambda = lambda;
    r.baseline = baseline;
    r.rollouts = rollouts;
    r.t_max = t_max;
    return r;
  }
};

struct TrainState {
  std::string phase = "gen-pretrain";
  std::size_t step = 0;
  double best_dev_bleu = -1.0;
  std::size_t best_step = 0;
  std::size_t evals_since_improvement = 0;
  std::size_t g_steps = 0;
  std::size_t tf_steps = 0;
  std::size_t d_steps = 0;
};

namespace paths {
inline std::string metrics(const std::string& dir) { return dir + "/metrics.csv"; }
inline std::string vocab(const std::string& dir) { return dir + "/vocab.txt"; }
inline std::string gen_pretrained(const std::string& dir) { return dir + "/gen_pretrained.ckpt"; }
inline std::string disc_pretrained(const std::string& dir) { return dir + "/disc_pretrained.ckpt"; }
inline std::string gen_best(const std::string& dir) { return dir + "/gen_best.ckpt"; }
inline std::string gen_last(const std::string& dir) { return dir + "/gen_last.ckpt"; }
inline std::string disc_last(const std::string& dir) { return dir + "/disc_last.ckpt"; }
inline std::string gen_opt(const std::string& dir) { return dir + "/gen_opt.ckpt"; }
inline std::string disc_opt(const std::string& dir) { return dir + "/disc_opt.ckpt"; }
inline std::string state(const std::string& dir) { return dir + "/train_state.txt"; }
}  // namespace paths

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Appends rows to the run's metrics.csv. Cells that do not apply to a row
// stay empty. Every numeric cell is printed with full precision so reruns
// can be compared byte for byte (wall_seconds excepted, by nature).
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path, bool append = false)
      : os_(path, append ? std::ios::app : std::ios::trunc),
        start_(std::chrono::steady_clock::now()) {
    if (!os_) throw std::runtime_error("MetricsWriter: cannot open " + path);
    if (!append) os_ << "step,phase,mean_reward,reward_variance,disc_accuracy,dev_bleu,wall_seconds\n";
  }

  void row(std::size_t step, const std::string& phase, std::optional<double> mean_reward,
           std::optional<double> reward_variance, std::optional<double> disc_accuracy,
           std::optional<double> dev_bleu) {
    auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    os_ << step << ',' << phase << ',' << cell(mean_reward) << ',' << cell(reward_variance)
        << ',' << cell(disc_accuracy) << ',' << cell(dev_bleu) << ',' << format_double(wall)
        << '\n';
    os_.flush();
  }

 private:
  std::ofstream os_;
  std::chrono::steady_clock::time_point start_;
};

inline void save_train_state(const TrainState& s, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_train_state: cannot open " + path);
  os << "phase=" << s.phase << "\n";
  os << "step=" << s.step << "\n";
  os << "best_dev_bleu=" << format_double(s.best_dev_bleu) << "\n";
  os << "best_step=" << s.best_step << "\n";
  os << "evals_since_improvement=" << s.evals_since_improvement << "\n";
  os << "g_steps=" << s.g_steps << "\n";
  os << "tf_steps=" << s.tf_steps << "\n";
  os << "d_steps=" << s.d_steps << "\n";
}

inline TrainState load_train_state(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_train_state: cannot open " + path);
  TrainState s;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "phase") s.phase = val;
    else if (key == "step") s.step = std::stoull(val);
    else if (key == "best_dev_bleu") s.best_dev_bleu = std::stod(val);
    else if (key == "best_step") s.best_step = std::stoull(val);
    else if (key == "evals_since_improvement") s.evals_since_improvement = std::stoull(val);
    else if (key == "g_steps") s.g_steps = std::stoull(val);
    else if (key == "tf_steps") s.tf_steps = std::stoull(val);
    else if (key == "d_steps") s.d_steps = std::stoull(val);
  }
  return s;
}

// Greedy corpus BLEU of the generator on a pair list, decoded in chunks.
inline double evaluate_corpus_bleu(const GruAttentionGenerator& gen,
                                   const std::vector<SentencePair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("evaluate_corpus_bleu: empty set");
  std::vector<std::vector<int>> hyps, refs;
  for (std::size_t at = 0; at < pairs.size(); at += 256) {
    const std::size_t end = std::min(pairs.size(), at + 256);
    std::vector<const std::vector<int>*> chunk;
    for (std::size_t i = at; i < end; ++i) chunk.push_back(&pairs[i].source);
    for (auto& h : gen.greedy_decode_many(chunk)) hyps.push_back(std::move(h));
  }
  for (const auto& p : pairs) refs.push_back(p.target);
  return corpus_bleu(hyps, refs);
}

// Maximum-likelihood pretraining with periodic dev evaluation and patience
// stopping; the best checkpoint is saved and reloaded before returning.
inline double pretrain_generator(GruAttentionGenerator& gen, const GeneratedCorpus& corpus,
                                 const TrainConfig& cfg, const std::string& run_dir,
                                 MetricsWriter& metrics) {
  cfg.validate();
  if (corpus.dev.empty()) throw std::invalid_argument("pretrain_generator: empty dev set");
  gen.optimizer().set_lr(cfg.lr_pretrain);
  const std::size_t t = gen.t_max();
  double best = -1.0;
  std::size_t since = 0, step = 0;
  bool stop = false;
  for (std::uint64_t epoch = 0; !stop; ++epoch) {
    for (const Batch& batch :
         make_batches(corpus.train, cfg.gen_batch, t, derive_rng(cfg.seed, {stream::kShuffle, epoch}).state())) {
      (void)gen.mle_step(batch);
      ++step;
      if (step % cfg.eval_interval == 0) {
        const double bleu = evaluate_corpus_bleu(gen, corpus.dev);
        metrics.row(step, "gen-pretrain", std::nullopt, std::nullopt, std::nullopt, bleu);
        if (bleu > best) {
          best = bleu;
          since = 0;
          save_checkpoint(gen.params(), paths::gen_pretrained(run_dir));
        } else if (++since >= cfg.patience) {
          stop = true;
          break;
        }
      }
      if (step >= cfg.max_pretrain_steps) {
        stop = true;
        break;
      }
    }
  }
  if (best < 0.0) {  // never evaluated: evaluate and save once
    best = evaluate_corpus_bleu(gen, corpus.dev);
    metrics.row(step, "gen-pretrain", std::nullopt, std::nullopt, std::nullopt, best);
    save_checkpoint(gen.params(), paths::gen_pretrained(run_dir));
  }
  load_checkpoint(gen.params(), paths::gen_pretrained(run_dir));
  return best;
}

// Greedy machine translations of eta sources drawn without replacement
// (cycling when the pool is smaller than eta).
inline std::vector<SentencePair> generate_negatives(const GruAttentionGenerator& gen,
                                                    const std::vector<SentencePair>& pairs,
                                                    std::size_t eta, std::uint64_t seed,
                                                    std::uint64_t round) {
  if (pairs.empty()) throw std::invalid_argument("generate_negatives: no sources");
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = derive_rng(seed, {stream::kNegatives, round});
  rng.shuffle(order);

  std::vector<const std::vector<int>*> sources;
  sources.reserve(eta);
  for (std::size_t i = 0; i < eta; ++i) sources.push_back(&pairs[order[i % order.size()]].source);

  std::vector<SentencePair> out;
  out.reserve(eta);
  for (std::size_t at = 0; at < sources.size(); at += 256) {
    const std::size_t end = std::min(sources.size(), at + 256);
    std::vector<const std::vector<int>*> chunk(sources.begin() + static_cast<long>(at),
                                               sources.begin() + static_cast<long>(end));
    auto decoded = gen.greedy_decode_many(chunk);
    for (std::size_t i = 0; i < decoded.size(); ++i)
      out.push_back(SentencePair{*chunk[i], std::move(decoded[i])});
  }
  return out;
}

inline DiscScorer make_disc_scorer(const CnnDiscriminator& disc) {
  const std::size_t t = disc.config().t;
  return [&disc, t](const std::vector<int>& src, const std::vector<int>& tgt) {
    std::vector<int> ps = src, pt = tgt;
    if (ps.size() > t || pt.size() > t)
      throw std::invalid_argument("disc scorer: sequence longer than T");
    ps.resize(t, kPad);
    pt.resize(t, kPad);
    return disc.predict_prob(ps, pt, DiscMode::Eval);
  };
}

inline DiscPair pad_disc_pair(const SentencePair& p, std::size_t t) {
  const PaddedPair padded = pad_to_fixed(p, t);
  return DiscPair{padded.source, padded.target};
}

struct DiscPretrainResult {
  double accuracy = 0.0;
  bool reached_gate = false;
  std::size_t steps = 0;
};

// Balanced-batch training until the held-out accuracy reaches the gate or
// the step cap; hitting the cap is reported, not silent.
inline DiscPretrainResult pretrain_discriminator(CnnDiscriminator& disc,
                                                 const std::vector<SentencePair>& real_pool,
                                                 const std::vector<SentencePair>& fake_pool,
                                                 const TrainConfig& cfg,
                                                 MetricsWriter& metrics) {
  cfg.validate();
  if (real_pool.empty() || fake_pool.empty())
    throw std::invalid_argument("pretrain_discriminator: empty pool");
  const std::size_t t = disc.config().t;

  // held-out balanced split regenerated from the pools
  auto split = [&](const std::vector<SentencePair>& pool, std::uint64_t salt) {
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = derive_rng(cfg.seed, {stream::kDiscBatch, salt});
    rng.shuffle(order);
    const std::size_t held = std::max<std::size_t>(1, std::min<std::size_t>(200, pool.size() / 10));
    return std::make_pair(std::vector<std::size_t>(order.begin(), order.begin() + static_cast<long>(held)),
                          std::vector<std::size_t>(order.begin() + static_cast<long>(held), order.end()));
  };
  auto [real_held, real_train] = split(real_pool, 1);
  auto [fake_held, fake_train] = split(fake_pool, 2);
  if (real_train.empty() || fake_train.empty())
    throw std::invalid_argument("pretrain_discriminator: pool too small");

  std::vector<LabeledDiscPair> held_out;
  const std::size_t held_n = std::min(real_held.size(), fake_held.size());
  for (std::size_t i = 0; i < held_n; ++i) {
    held_out.push_back({pad_disc_pair(real_pool[real_held[i]], t), true});
    held_out.push_back({pad_disc_pair(fake_pool[fake_held[i]], t), false});
  }

  DiscPretrainResult res;
  const std::size_t half = std::max<std::size_t>(1, cfg.disc_batch / 2);
  for (std::size_t step = 1; step <= cfg.disc_pretrain_cap; ++step) {
    Rng rng = derive_rng(cfg.seed, {stream::kDiscBatch, 100 + step});
    std::vector<DiscPair> rb, fb;
    for (std::size_t i = 0; i < half; ++i) {
      rb.push_back(pad_disc_pair(real_pool[real_train[rng.below(real_train.size())]], t));
      fb.push_back(pad_disc_pair(fake_pool[fake_train[rng.below(fake_train.size())]], t));
    }
    std::vector<const DiscPair*> rp, fp;
    for (const auto& p : rb) rp.push_back(&p);
    for (const auto& p : fb) fp.push_back(&p);
    (void)disc.disc_step(rp, fp);
    res.steps = step;
    if (step % cfg.disc_eval_every == 0 || step == cfg.disc_pretrain_cap) {
      res.accuracy = disc.accuracy(held_out);
      metrics.row(step, "disc-pretrain", std::nullopt, std::nullopt, res.accuracy, std::nullopt);
      if (res.accuracy >= cfg.xi) {
        res.reached_gate = true;
        break;
      }
    }
  }
  return res;
}

struct AdversarialResult {
  TrainState state;
  double final_dev_bleu = -1.0;
};

// The alternating loop: one policy-gradient generator update, one teacher
// forcing update, eta fresh negatives from the updated generator, one
// discriminator update with the weight clip, every iteration. Stops on dev
// patience or the step cap. All randomness is keyed by (seed, step), so a
// resumed run continues the exact stream.
inline AdversarialResult adversarial_loop(GruAttentionGenerator& gen, CnnDiscriminator& disc,
                                          const GeneratedCorpus& corpus, const TrainConfig& cfg,
                                          const std::string& run_dir, MetricsWriter& metrics,
                                          bool resume = false) {
  cfg.validate();
  if (corpus.dev.empty()) throw std::invalid_argument("adversarial_loop: empty dev set");
  if (disc.config().t != gen.t_max())
    throw std::invalid_argument("adversarial_loop: discriminator T differs from generator T_max");
  gen.optimizer().set_lr(cfg.lr_adversarial);
  disc.optimizer().set_lr(cfg.lr_adversarial);
  const std::size_t t = gen.t_max();
  const RewardConfig rcfg = cfg.reward_config(t);
  const DiscScorer scorer = make_disc_scorer(disc);

  TrainState state;
  state.phase = "adversarial";
  if (resume) {
    state = load_train_state(paths::state(run_dir));
    load_checkpoint(gen.params(), paths::gen_last(run_dir));
    load_checkpoint(disc.params(), paths::disc_last(run_dir));
    load_optimizer_state(gen.optimizer(), gen.params(), paths::gen_opt(run_dir));
    load_optimizer_state(disc.optimizer(), disc.params(), paths::disc_opt(run_dir));
  } else {
    save_checkpoint(gen.params(), paths::gen_best(run_dir));
    state.best_dev_bleu = evaluate_corpus_bleu(gen, corpus.dev);
    state.best_step = 0;
    metrics.row(0, "adversarial", std::nullopt, std::nullopt, std::nullopt, state.best_dev_bleu);
  }

  auto pick_pairs = [&](std::uint64_t purpose, std::uint64_t step, std::size_t count) {
    Rng rng = derive_rng(cfg.seed, {purpose, step});
    std::vector<const SentencePair*> out;
    for (std::size_t i = 0; i < count; ++i)
      out.push_back(&corpus.train[rng.below(corpus.train.size())]);
    return out;
  };

  const std::size_t half = std::max<std::size_t>(1, cfg.disc_batch / 2);
  while (state.step < cfg.max_adv_steps) {
    const std::uint64_t s = ++state.step;

    // 1. policy-gradient generator update
    PgResult pg = policy_gradient_step(gen, scorer, pick_pairs(stream::kBatchPick, s, cfg.pg_batch),
                                       rcfg, cfg.seed, s);
    ++state.g_steps;
    if (!std::isfinite(pg.mean_reward) || std::fabs(pg.mean_reward) > cfg.divergence_guard) {
      save_train_state(state, paths::state(run_dir));
      throw std::runtime_error("adversarial_loop: divergence at step " + std::to_string(s) +
                               " (mean reward " + format_double(pg.mean_reward) + ")");
    }

    // 2. one teacher-forcing update on a fresh true batch
    (void)teacher_forcing_step(gen, pick_pairs(stream::kTfBatch, s, cfg.pg_batch), t);
    ++state.tf_steps;

    // 3. eta fresh negatives from the updated generator
    const std::vector<SentencePair> negatives =
        generate_negatives(gen, corpus.train, cfg.eta, cfg.seed, s);

    // 4. one discriminator update (accuracy measured before the step)
    std::vector<DiscPair> rb, fb;
    {
      Rng rng = derive_rng(cfg.seed, {stream::kDiscBatch, s});
      for (std::size_t i = 0; i < half; ++i) {
        rb.push_back(pad_disc_pair(corpus.train[rng.below(corpus.train.size())], t));
        fb.push_back(pad_disc_pair(negatives[rng.below(negatives.size())], t));
      }
    }
    std::vector<LabeledDiscPair> labeled;
    for (const auto& p : rb) labeled.push_back({p, true});
    for (const auto& p : fb) labeled.push_back({p, false});
    const double disc_acc = disc.accuracy(labeled);
    std::vector<const DiscPair*> rp, fp;
    for (const auto& p : rb) rp.push_back(&p);
    for (const auto& p : fb) fp.push_back(&p);
    (void)disc.disc_step(rp, fp);
    ++state.d_steps;
    if (disc.max_abs_weight() > cfg.epsilon)
      throw std::logic_error("adversarial_loop: clip invariant violated");

    // 5. periodic dev evaluation with patience stopping
    std::optional<double> dev;
    if (s % cfg.eval_interval == 0) {
      dev = evaluate_corpus_bleu(gen, corpus.dev);
      if (*dev > state.best_dev_bleu) {
        state.best_dev_bleu = *dev;
        state.best_step = s;
        state.evals_since_improvement = 0;
        save_checkpoint(gen.params(), paths::gen_best(run_dir));
      } else {
        ++state.evals_since_improvement;
      }
    }
    metrics.row(s, "adversarial", pg.mean_reward, pg.reward_variance, disc_acc, dev);
    if (state.evals_since_improvement >= cfg.patience) break;
  }

  save_checkpoint(gen.params(), paths::gen_last(run_dir));
  save_checkpoint(disc.params(), paths::disc_last(run_dir));
  save_optimizer_state(gen.optimizer(), gen.params(), paths::gen_opt(run_dir));
  save_optimizer_state(disc.optimizer(), disc.params(), paths::disc_opt(run_dir));
  save_train_state(state, paths::state(run_dir));

  AdversarialResult res;
  res.state = state;
  res.final_dev_bleu = evaluate_corpus_bleu(gen, corpus.dev);
  return res;
}

struct MrtResult {
  TrainState state;
  double best_dev_bleu = -1.0;
};

// Minimum-risk fine-tuning: per source, sample a subset of translations,
// renormalize their probabilities within the subset, and descend the
// expected risk (1 - sentence BLEU), with the gradient flowing through the
// normalization.
inline MrtResult mrt_baseline(GruAttentionGenerator& gen, const GeneratedCorpus& corpus,
                              const TrainConfig& cfg, const std::string& run_dir,
                              MetricsWriter& metrics) {
  cfg.validate();
  if (cfg.mrt_sample_size < 2) throw std::invalid_argument("mrt_baseline: sample_size must be >= 2");
  if (corpus.dev.empty()) throw std::invalid_argument("mrt_baseline: empty dev set");
  gen.optimizer().set_lr(cfg.lr_adversarial);
  const std::size_t t = gen.t_max();

  TrainState state;
  state.phase = "mrt";
  state.best_dev_bleu = evaluate_corpus_bleu(gen, corpus.dev);
  save_checkpoint(gen.params(), paths::gen_best(run_dir));
  metrics.row(0, "mrt", std::nullopt, std::nullopt, std::nullopt, state.best_dev_bleu);

  while (state.step < cfg.max_adv_steps) {
    const std::uint64_t s = ++state.step;
    Rng pick = derive_rng(cfg.seed, {stream::kBatchPick, s});
    std::vector<const SentencePair*> batch;
    for (std::size_t i = 0; i < cfg.pg_batch; ++i)
      batch.push_back(&corpus.train[pick.below(corpus.train.size())]);

    // distinct sampled subsets per source
    std::vector<std::vector<std::vector<int>>> subsets(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (std::size_t j = 0; j < cfg.mrt_sample_size; ++j) {
        Rng rng = derive_rng(cfg.seed, {stream::kMrtSample, s, i, j});
        std::vector<int> y =
            gen.sample_sequence(batch[i]->source, SampleMode::Multinomial, t, rng);
        if (std::find(subsets[i].begin(), subsets[i].end(), y) == subsets[i].end())
          subsets[i].push_back(std::move(y));
      }
    }

    // one graph over all subsets
    std::vector<SentencePair> rows;
    for (std::size_t i = 0; i < batch.size(); ++i)
      for (const auto& y : subsets[i]) rows.push_back(SentencePair{batch[i]->source, y});
    std::vector<const SentencePair*> row_ptrs;
    for (const auto& r : rows) row_ptrs.push_back(&r);
    Batch padded = make_batch(row_ptrs, t);

    Tape tape;
    Var lp = gen.logprob_matrix_graph(tape, padded);
    Tensor mask({padded.size, padded.t});
    for (std::size_t i = 0; i < padded.size; ++i)
      for (std::size_t j = 0; j < padded.t; ++j) mask[i * padded.t + j] = padded.tgt_mask(i, j);
    Var seq_lp = tape.matmul(tape.mul(lp, tape.constant(std::move(mask))),
                             tape.constant(Tensor::full({padded.t, 1}, 1.0)));

    Var total_risk = tape.scalar(0.0);
    std::size_t at = 0;
    double reward_sum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const std::size_t n = subsets[i].size();
      Var lps = tape.reshape(tape.slice_rows(seq_lp, at, at + n), {1, n});
      Var weights = tape.softmax_rows(lps);
      Tensor delta({1, n});
      for (std::size_t j = 0; j < n; ++j)
        delta[j] = 1.0 - sentence_bleu(subsets[i][j], batch[i]->target).value;
      Var risk = tape.sum_all(tape.mul(weights, tape.constant(std::move(delta))));
      total_risk = tape.add(total_risk, risk);
      at += n;
      // diagnostics: expected BLEU of the subset under the renormalized policy
      reward_sum += 1.0 - tape.value(risk).item();
    }
    Var loss = tape.scale(total_risk, 1.0 / static_cast<double>(batch.size()));
    gen.params().zero_grads();
    tape.backward(loss);
    gen.optimizer().step(gen.params());
    ++state.g_steps;

    std::optional<double> dev;
    if (s % cfg.eval_interval == 0) {
      dev = evaluate_corpus_bleu(gen, corpus.dev);
      if (*dev > state.best_dev_bleu) {
        state.best_dev_bleu = *dev;
        state.best_step = s;
        state.evals_since_improvement = 0;
        save_checkpoint(gen.params(), paths::gen_best(run_dir));
      } else {
        ++state.evals_since_improvement;
      }
    }
    metrics.row(s, "mrt", reward_sum / static_cast<double>(batch.size()), std::nullopt,
                std::nullopt, dev);
    if (state.evals_since_improvement >= cfg.patience) break;
  }
  save_checkpoint(gen.params(), paths::gen_last(run_dir));
  save_train_state(state, paths::state(run_dir));
  MrtResult res;
  res.state = state;
  res.best_dev_bleu = state.best_dev_bleu;
  return res;
}

}  // namespace brcsgan
