#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "brcsgan/bleu.hpp"
#include "brcsgan/corpus.hpp"
#include "brcsgan/policy.hpp"
#include "brcsgan/rng.hpp"
#include "brcsgan/tape.hpp"

namespace brcsgan {

struct RewardConfig {
  double lambda = 0.7;      // discriminator weight in the mixture
  double baseline = 0.5;    // constant baseline b subtracted from D
  std::size_t rollouts = 20;  // N for the Monte Carlo search
  std::size_t t_max = 20;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0))
      throw std::invalid_argument("RewardConfig: lambda must be in [0,1]");
    if (rollouts < 1) throw std::invalid_argument("RewardConfig: rollouts must be >= 1");
  }
};

// Evaluation-mode conditional discriminator: D(X, Y) in (0,1). Kept as a
// function so the reward machinery has no architecture dependency.
using DiscScorer = std::function<double(const std::vector<int>&, const std::vector<int>&)>;

// N completed sequences continuing one prefix.
struct RolloutSet {
  std::vector<std::vector<int>> sequences;
};

// Per-position rewards R_t, t = 1..T, for one sampled sequence.
struct RewardMatrix {
  std::vector<double> values;
};

inline bool is_complete(const std::vector<int>& seq, std::size_t t_max) {
  return !seq.empty() && (seq.back() == kEos || seq.size() >= t_max);
}

// lambda (D(X,Y) - b) + (1 - lambda) Q(Y, Y*), for a finished Y.
inline double terminal_reward(const DiscScorer& disc, const std::vector<int>& source,
                              const std::vector<int>& y, const std::vector<int>& reference,
                              const RewardConfig& cfg) {
  cfg.validate();
  if (!is_complete(y, cfg.t_max))
    throw std::invalid_argument("terminal_reward: sequence is not complete");
  const double q = sentence_bleu(y, reference).value;
  const double d = cfg.lambda != 0.0 ? disc(source, y) : 0.0;
  const double r = cfg.lambda * (d - cfg.baseline) + (1.0 - cfg.lambda) * q;
  if (!std::isfinite(r)) throw std::runtime_error("terminal_reward: non-finite reward");
  return r;
}

// N-time Monte Carlo search: complete the prefix N times under the policy.
template <class P>
  requires SequencePolicy<P>
RolloutSet mc_rollouts(const P& policy, const std::vector<int>& source,
                       const std::vector<int>& prefix, std::size_t n, Rng& rng) {
  if (prefix.empty()) throw std::invalid_argument("mc_rollouts: empty prefix");
  if (is_complete(prefix, policy.t_max()))
    throw std::invalid_argument("mc_rollouts: prefix already complete");
  RolloutSet set;
  set.sequences.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    set.sequences.push_back(policy.continue_prefix(source, prefix, rng));
  return set;
}

// Action value of a prefix: the terminal reward if the prefix is finished,
// otherwise the mean mixture reward over N rollout completions (the BLEU
// term is evaluated per rollout, inside the average).
template <class P>
  requires SequencePolicy<P>
double intermediate_reward(const P& policy, const DiscScorer& disc,
                           const std::vector<int>& source, const std::vector<int>& prefix,
                           const std::vector<int>& reference, const RewardConfig& cfg,
                           Rng& rng) {
  cfg.validate();
  if (is_complete(prefix, cfg.t_max)) return terminal_reward(disc, source, prefix, reference, cfg);
  const RolloutSet rolls = mc_rollouts(policy, source, prefix, cfg.rollouts, rng);
  double sum = 0.0;
  for (const auto& y : rolls.sequences) sum += terminal_reward(disc, source, y, reference, cfg);
  return sum / static_cast<double>(rolls.sequences.size());
}

namespace detail {

// -(1/B) sum_i (1/T_i) sum_t w[i,t] log p(y_t); the shared REINFORCE /
// teacher-forcing / MLE loss form.
template <class P>
Var weighted_logprob_loss(const P& policy, Tape& tape, const Batch& batch,
                          const Tensor& pos_weights) {
  const std::size_t b = batch.size, t_len = batch.t;
  Tensor w({b, t_len});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < t_len; ++t)
      w[i * t_len + t] = pos_weights[i * t_len + t] * batch.tgt_mask(i, t) /
                         (static_cast<double>(batch.target_len[i]) * static_cast<double>(b));
  Var lp = policy.logprob_matrix_graph(tape, batch);
  return tape.scale(tape.sum_all(tape.mul(lp, tape.constant(std::move(w)))), -1.0);
}

}  // namespace detail

struct PgSample {
  std::vector<int> sampled;
  RewardMatrix rewards;
  std::vector<std::vector<std::vector<int>>> rollouts;  // [prefix position][rollout]
};

struct PgOptions {
  bool keep_samples = false;
  bool keep_gradient = false;
  bool apply_update = true;
};

struct PgResult {
  double loss = 0.0;
  double mean_reward = 0.0;      // over all per-position rewards in the batch
  double reward_variance = 0.0;  // population variance of the same
  double mean_length = 0.0;
  std::vector<PgSample> samples;
  std::vector<double> gradient;  // flat ascent gradient of the objective
};

// One REINFORCE update: sample a translation per source, score every prefix
// with the Monte Carlo action value, and ascend (1/T) sum_t R_t grad log p.
// Rewards are constants with respect to the policy parameters. All sampling
// is keyed by (seed, step, sentence, position, rollout), so the step is
// reproducible and resumable.
template <class P>
  requires SequencePolicy<P>
PgResult policy_gradient_step(P& policy, const DiscScorer& disc,
                              const std::vector<const SentencePair*>& batch,
                              const RewardConfig& cfg, std::uint64_t seed, std::uint64_t step,
                              const PgOptions& opts = {}) {
  cfg.validate();
  if (batch.empty()) throw std::invalid_argument("policy_gradient_step: empty batch");
  const std::size_t b = batch.size();

  std::vector<PgSample> samples(b);
  double reward_sum = 0.0, reward_sq = 0.0, len_sum = 0.0;
  std::size_t reward_count = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const auto& src = batch[i]->source;
    const auto& ref = batch[i]->target;
    Rng sample_rng = derive_rng(seed, {stream::kPgSample, step, i});
    std::vector<int> y = policy.sample_sequence(src, SampleMode::Multinomial, cfg.t_max, sample_rng);
    const std::size_t t_len = y.size();
    const std::uint64_t roll_seed = derive_rng(seed, {stream::kPgRollout, step, i}).state();
    auto rollsets = policy.all_prefix_continuations(src, y, cfg.rollouts, roll_seed);

    RewardMatrix rm;
    rm.values.resize(t_len, 0.0);
    for (std::size_t t = 0; t + 1 < t_len; ++t) {
      double sum = 0.0;
      for (const auto& roll : rollsets[t]) sum += terminal_reward(disc, src, roll, ref, cfg);
      rm.values[t] = sum / static_cast<double>(rollsets[t].size());
    }
    rm.values[t_len - 1] = terminal_reward(disc, src, y, ref, cfg);
    for (double r : rm.values) {
      reward_sum += r;
      reward_sq += r * r;
      ++reward_count;
    }
    len_sum += static_cast<double>(t_len);
    samples[i].sampled = std::move(y);
    samples[i].rewards = std::move(rm);
    if (opts.keep_samples) samples[i].rollouts = std::move(rollsets);
  }

  // one weighted log-likelihood graph over the sampled batch
  std::vector<SentencePair> sampled_pairs(b);
  std::vector<const SentencePair*> ptrs(b);
  for (std::size_t i = 0; i < b; ++i) {
    sampled_pairs[i].source = batch[i]->source;
    sampled_pairs[i].target = samples[i].sampled;
    ptrs[i] = &sampled_pairs[i];
  }
  Batch padded = make_batch(ptrs, cfg.t_max);
  Tensor weights({b, cfg.t_max});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < samples[i].sampled.size(); ++t)
      weights[i * cfg.t_max + t] = samples[i].rewards.values[t];

  Tape tape;
  Var loss = detail::weighted_logprob_loss(policy, tape, padded, weights);

  PgResult res;
  res.loss = tape.value(loss).item();
  res.mean_reward = reward_sum / static_cast<double>(reward_count);
  res.reward_variance =
      reward_sq / static_cast<double>(reward_count) - res.mean_reward * res.mean_reward;
  res.mean_length = len_sum / static_cast<double>(b);

  policy.params().zero_grads();
  tape.backward(loss);
  if (opts.keep_gradient) {
    res.gradient = policy.params().flat_grads();
    for (double& g : res.gradient) g = -g;  // ascent direction of the objective
  }
  if (opts.apply_update)
    policy.optimizer().step(policy.params());
  else
    policy.params().zero_grads();
  if (opts.keep_samples) res.samples = std::move(samples);
  return res;
}

// One reward-1.0 update on the true pairs (teacher forcing); identical in
// direction to a maximum-likelihood step. Returns the pre-step loss.
template <class P>
  requires SequencePolicy<P>
double teacher_forcing_step(P& policy, const std::vector<const SentencePair*>& batch,
                            std::size_t t_max, double reward = 1.0, bool apply_update = true) {
  if (batch.empty()) throw std::invalid_argument("teacher_forcing_step: empty batch");
  Batch padded = make_batch(batch, t_max);
  Tensor weights = Tensor::full({padded.size, padded.t}, reward);
  Tape tape;
  Var loss = detail::weighted_logprob_loss(policy, tape, padded, weights);
  const double value = tape.value(loss).item();
  policy.params().zero_grads();
  tape.backward(loss);
  if (apply_update)
    policy.optimizer().step(policy.params());
  else
    policy.params().zero_grads();
  return value;
}

// All complete sequences over the non-pad vocabulary: <eos>-terminated or
// cut at t_max. Throws once the space exceeds the cap.
inline std::vector<std::vector<int>> enumerate_complete_sequences(int vocab_size,
                                                                  std::size_t t_max,
                                                                  std::size_t cap = 20000) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  std::function<void()> rec = [&]() {
    if (!cur.empty() && (cur.back() == kEos || cur.size() == t_max)) {
      if (out.size() >= cap)
        throw std::invalid_argument("enumerate_complete_sequences: space too large");
      out.push_back(cur);
      return;
    }
    for (int tok = 0; tok < vocab_size; ++tok) {
      if (tok == kPad) continue;
      cur.push_back(tok);
      rec();
      cur.pop_back();
    }
  };
  rec();
  return out;
}

struct ExactGradient {
  double objective = 0.0;        // J = sum_Y p(Y) R(Y)
  std::vector<double> gradient;  // dJ/dtheta over trainable params, flat
};

// Exact policy-gradient oracle by full enumeration: J(theta) =
// sum over complete Y of p(Y|X) times its terminal reward, differentiated
// through the tape. Tractable only for tiny vocabularies.
template <class P>
  requires SequencePolicy<P>
ExactGradient exact_expected_gradient(P& policy, const DiscScorer& disc,
                                      const std::vector<int>& source,
                                      const std::vector<int>& reference,
                                      const RewardConfig& cfg, std::size_t cap = 20000) {
  cfg.validate();
  const std::vector<std::vector<int>> space =
      enumerate_complete_sequences(policy.vocab_size(), cfg.t_max, cap);

  std::vector<SentencePair> pairs(space.size());
  std::vector<const SentencePair*> ptrs(space.size());
  Tensor rewards({space.size(), 1});
  for (std::size_t i = 0; i < space.size(); ++i) {
    pairs[i].source = source;
    pairs[i].target = space[i];
    ptrs[i] = &pairs[i];
    rewards[i] = terminal_reward(disc, source, space[i], reference, cfg);
  }
  Batch batch = make_batch(ptrs, cfg.t_max);

  Tape tape;
  Var lp = policy.logprob_matrix_graph(tape, batch);
  Tensor mask({batch.size, batch.t});
  for (std::size_t i = 0; i < batch.size; ++i)
    for (std::size_t t = 0; t < batch.t; ++t) mask[i * batch.t + t] = batch.tgt_mask(i, t);
  Var seq_lp = tape.matmul(tape.mul(lp, tape.constant(std::move(mask))),
                           tape.constant(Tensor::full({batch.t, 1}, 1.0)));
  Var objective = tape.sum_all(tape.mul(tape.exp(seq_lp), tape.constant(rewards)));

  ExactGradient out;
  out.objective = tape.value(objective).item();
  policy.params().zero_grads();
  tape.backward(objective);
  out.gradient = policy.params().flat_grads();
  policy.params().zero_grads();
  return out;
}

// Enumeration value of the expected terminal reward given a prefix; the
// check target for Monte Carlo consistency.
template <class P>
  requires SequencePolicy<P>
double enumeration_expected_reward(P& policy, const DiscScorer& disc,
                                   const std::vector<int>& source,
                                   const std::vector<int>& prefix,
                                   const std::vector<int>& reference, const RewardConfig& cfg,
                                   std::size_t cap = 20000) {
  if (is_complete(prefix, cfg.t_max)) return terminal_reward(disc, source, prefix, reference, cfg);
  const std::vector<std::vector<int>> space =
      enumerate_complete_sequences(policy.vocab_size(), cfg.t_max, cap);

  // conditional probability of each completion given the prefix
  std::vector<SentencePair> pairs;
  std::vector<double> rewards;
  for (const auto& seq : space) {
    if (seq.size() < prefix.size()) continue;
    if (!std::equal(prefix.begin(), prefix.end(), seq.begin())) continue;
    pairs.push_back(SentencePair{source, seq});
    rewards.push_back(terminal_reward(disc, source, seq, reference, cfg));
  }
  std::vector<const SentencePair*> ptrs;
  for (auto& p : pairs) ptrs.push_back(&p);
  Batch batch = make_batch(ptrs, cfg.t_max);
  Tape tape;
  Var lp = policy.logprob_matrix_graph(tape, batch);
  const Tensor& lpv = tape.value(lp);

  double prefix_lp = 0.0;
  for (std::size_t t = 0; t < prefix.size(); ++t) prefix_lp += lpv.at(0, t);
  double expected = 0.0, mass = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    double full_lp = 0.0;
    for (std::size_t t = 0; t < pairs[i].target.size(); ++t) full_lp += lpv.at(i, t);
    const double cond = std::exp(full_lp - prefix_lp);
    expected += cond * rewards[i];
    mass += cond;
  }
  if (std::fabs(mass - 1.0) > 1e-6)
    throw std::logic_error("enumeration_expected_reward: conditional mass != 1");
  return expected;
}

}  // namespace brcsgan
