#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "brcsgan/generator.hpp"
#include "brcsgan/reward.hpp"

using namespace brcsgan;

namespace {

GeneratorConfig tiny_cfg(int vocab = 6, std::size_t k = 2, std::size_t h = 2,
                         std::size_t t_max = 3, std::uint64_t seed = 7) {
  GeneratorConfig cfg;
  cfg.vocab_size = vocab;
  cfg.embed_dim = k;
  cfg.hidden_dim = h;
  cfg.t_max = t_max;
  cfg.init_seed = seed;
  return cfg;
}

DiscScorer constant_scorer(double v) {
  return [v](const std::vector<int>&, const std::vector<int>&) { return v; };
}

RewardConfig reward_cfg(double lambda, std::size_t n, std::size_t t_max) {
  RewardConfig cfg;
  cfg.lambda = lambda;
  cfg.rollouts = n;
  cfg.t_max = t_max;
  return cfg;
}

}  // namespace

TEST_CASE("terminal reward follows the mixture formula", "[reward]") {
  const std::vector<int> src = {4, 5};
  const std::vector<int> ref = {4, 5, 4, 5, kEos};
  const std::vector<int> equal = ref;            // Q = 1
  const std::vector<int> disjoint = {1, 3, kEos};  // Q = 0 (no overlap)

  CHECK(terminal_reward(constant_scorer(0.9), src, equal, ref, reward_cfg(1.0, 1, 5)) ==
        Catch::Approx(0.4).margin(1e-15));
  CHECK(terminal_reward(constant_scorer(0.9), src, equal, ref, reward_cfg(0.0, 1, 5)) ==
        Catch::Approx(1.0).margin(1e-15));
  CHECK(terminal_reward(constant_scorer(0.9), src, disjoint, ref, reward_cfg(0.7, 1, 5)) ==
        Catch::Approx(0.7 * 0.4).margin(1e-15));
  // incomplete sequences are rejected
  CHECK_THROWS(terminal_reward(constant_scorer(0.5), src, {4, 5}, ref, reward_cfg(1.0, 1, 5)));
  // bad configs are rejected
  CHECK_THROWS(terminal_reward(constant_scorer(0.5), src, equal, ref, reward_cfg(1.5, 1, 5)));
  CHECK_THROWS(terminal_reward(constant_scorer(0.5), src, equal, ref, reward_cfg(0.5, 0, 5)));
}

TEST_CASE("reward bounds at the lambda endpoints", "[reward]") {
  Rng rng(3);
  const std::vector<int> src = {4, 5};
  const std::vector<int> ref = {5, 4, kEos};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> y;
    const int len = 1 + static_cast<int>(rng.below(4));
    for (int i = 0; i < len; ++i) y.push_back(4 + static_cast<int>(rng.below(2)));
    y.push_back(kEos);
    const double d = rng.next_double();
    const double r1 = terminal_reward(constant_scorer(d), src, y, ref, reward_cfg(1.0, 1, 6));
    CHECK(r1 >= -0.5);
    CHECK(r1 <= 0.5);
    const double r0 = terminal_reward(constant_scorer(d), src, y, ref, reward_cfg(0.0, 1, 6));
    CHECK(r0 >= 0.0);
    CHECK(r0 <= 1.0);
  }
}

TEST_CASE("reward mixture identity holds exactly", "[reward]") {
  Rng rng(9);
  const std::vector<int> src = {4, 5};
  const std::vector<int> ref = {5, 4, 5, kEos};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> y;
    const int len = 1 + static_cast<int>(rng.below(4));
    for (int i = 0; i < len; ++i) y.push_back(4 + static_cast<int>(rng.below(2)));
    y.push_back(kEos);
    const double d = rng.next_double();
    const double lambda = rng.next_double();
    const DiscScorer scorer = constant_scorer(d);
    const double r_mix = terminal_reward(scorer, src, y, ref, reward_cfg(lambda, 1, 6));
    const double r_gan = terminal_reward(scorer, src, y, ref, reward_cfg(1.0, 1, 6));
    const double r_bleu = terminal_reward(scorer, src, y, ref, reward_cfg(0.0, 1, 6));
    CHECK(std::fabs(r_mix - (lambda * r_gan + (1.0 - lambda) * r_bleu)) < 1e-12);
  }
}

TEST_CASE("monte carlo rollouts complete the prefix", "[reward]") {
  GruAttentionGenerator gen(tiny_cfg(7, 3, 3, 5, 23));
  const std::vector<int> src = {4, 5};
  Rng rng(5);
  RolloutSet set = mc_rollouts(gen, src, {4}, 20, rng);
  CHECK(set.sequences.size() == 20);  // the reference setting for N
  for (const auto& y : set.sequences) {
    CHECK(y[0] == 4);
    CHECK(is_complete(y, gen.t_max()));
  }
  CHECK_THROWS(mc_rollouts(gen, src, {}, 5, rng));
  CHECK_THROWS(mc_rollouts(gen, src, {4, kEos}, 5, rng));
}

TEST_CASE("near-deterministic policy gives identical rollouts", "[reward]") {
  GruAttentionGenerator gen(tiny_cfg(7, 3, 3, 4, 23));
  // pin the readout so one token dominates
  gen.params().value("out.W").fill(0.0);
  gen.params().value("out.b").fill(0.0);
  gen.params().value("out.b")[5] = 60.0;
  Rng rng(11);
  RolloutSet set = mc_rollouts(gen, {4}, {5}, 8, rng);
  for (const auto& y : set.sequences) CHECK(y == set.sequences[0]);

  // and the intermediate reward then equals the single terminal reward
  Rng rng2(11);
  const std::vector<int> ref = {5, 5, kEos};
  const RewardConfig cfg = reward_cfg(0.4, 8, 4);
  const double inter =
      intermediate_reward(gen, constant_scorer(0.8), {4}, {5}, ref, cfg, rng2);
  const double term =
      terminal_reward(constant_scorer(0.8), {4}, set.sequences[0], ref, cfg);
  CHECK(inter == Catch::Approx(term).margin(1e-12));
}

TEST_CASE("completed prefixes short-circuit to the terminal reward", "[reward]") {
  GruAttentionGenerator gen(tiny_cfg());
  const std::vector<int> ref = {4, 5, kEos};
  Rng rng(2);
  const RewardConfig cfg = reward_cfg(0.5, 4, 3);
  const std::vector<int> done = {5, kEos};
  CHECK(intermediate_reward(gen, constant_scorer(0.6), {4}, done, ref, cfg, rng) ==
        terminal_reward(constant_scorer(0.6), {4}, done, ref, cfg));
}

TEST_CASE("d equal to the baseline makes every lambda=1 reward zero", "[reward]") {
  GruAttentionGenerator gen(tiny_cfg());
  Rng rng(4);
  const RewardConfig cfg = reward_cfg(1.0, 6, 3);
  const std::vector<int> ref = {4, kEos};
  for (const std::vector<int> prefix : {std::vector<int>{4}, std::vector<int>{5}}) {
    const double r = intermediate_reward(gen, constant_scorer(0.5), {4}, prefix, ref, cfg, rng);
    CHECK(r == 0.0);
  }
}

TEST_CASE("zero rewards leave the parameters unchanged", "[reward]") {
  GruAttentionGenerator gen(tiny_cfg());
  const SentencePair pair{{4, 5}, {5, 4, kEos}};
  const std::vector<double> before = gen.params().flat_values();
  // lambda = 1 with D == b makes every reward exactly zero
  PgResult res = policy_gradient_step(gen, constant_scorer(0.5), {&pair},
                                      reward_cfg(1.0, 2, 3), 77, 0);
  CHECK(res.mean_reward == 0.0);
  CHECK(gen.params().flat_values() == before);
}

TEST_CASE("policy gradient step is reproducible", "[reward]") {
  const SentencePair pair{{4, 5}, {5, 4, kEos}};
  auto run = [&]() {
    GruAttentionGenerator gen(tiny_cfg(6, 2, 2, 3, 13));
    PgResult r = policy_gradient_step(gen, constant_scorer(0.7), {&pair},
                                      reward_cfg(0.7, 3, 3), 99, 5, {true, true, true});
    return std::make_pair(r, gen.params().flat_values());
  };
  auto [r1, p1] = run();
  auto [r2, p2] = run();
  CHECK(r1.loss == r2.loss);
  CHECK(r1.mean_reward == r2.mean_reward);
  CHECK(r1.gradient == r2.gradient);
  CHECK(p1 == p2);
  REQUIRE(r1.samples.size() == 1);
  CHECK(r1.samples[0].sampled == r2.samples[0].sampled);
}

TEST_CASE("teacher forcing matches the mle update exactly", "[reward]") {
  std::vector<SentencePair> pairs = {{{4, 5}, {5, 4, kEos}}, {{5}, {4, kEos}}};
  std::vector<const SentencePair*> ptrs = {&pairs[0], &pairs[1]};

  GeneratorConfig cfg = tiny_cfg(7, 3, 3, 4, 31);
  cfg.optimizer.rule = OptimizerConfig::Rule::Sgd;
  cfg.optimizer.lr = 0.1;

  GruAttentionGenerator by_mle(cfg);
  GruAttentionGenerator by_tf(cfg);
  const double mle_loss = by_mle.mle_step(make_batch(ptrs, 4));
  const double tf_loss = teacher_forcing_step(by_tf, ptrs, 4);
  CHECK(tf_loss == Catch::Approx(mle_loss).margin(1e-12));
  const auto a = by_mle.params().flat_values();
  const auto b = by_tf.params().flat_values();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::fabs(a[i] - b[i]) < 1e-12);
}

TEST_CASE("zero-reward teacher forcing is a no-op", "[reward]") {
  GruAttentionGenerator gen(tiny_cfg());
  const SentencePair pair{{4}, {5, kEos}};
  const auto before = gen.params().flat_values();
  (void)teacher_forcing_step(gen, {&pair}, 3, /*reward=*/0.0);
  CHECK(gen.params().flat_values() == before);
}

TEST_CASE("teacher forcing reduces the loss on a fixed batch", "[reward]") {
  GeneratorConfig cfg = tiny_cfg(8, 3, 4, 5, 37);
  cfg.optimizer.lr = 5e-3;
  GruAttentionGenerator gen(cfg);
  std::vector<SentencePair> pairs = {{{4, 5, 6}, {6, 5, kEos}}, {{6, 4}, {4, kEos}}};
  std::vector<const SentencePair*> ptrs = {&pairs[0], &pairs[1]};
  double first = teacher_forcing_step(gen, ptrs, 5);
  double last = first;
  for (int i = 0; i < 30; ++i) last = teacher_forcing_step(gen, ptrs, 5);
  CHECK(last < first);
}

TEST_CASE("exact expected gradient obeys the closed-form cases", "[reward]") {
  GruAttentionGenerator gen(tiny_cfg(6, 2, 2, 2, 41));
  const std::vector<int> src = {4};
  const std::vector<int> ref = {5, kEos};

  SECTION("constant reward gives a zero gradient") {
    // lambda=1, D == b + 0.3 everywhere: every sequence earns exactly 0.3
    RewardConfig cfg = reward_cfg(1.0, 1, 2);
    ExactGradient g = exact_expected_gradient(gen, constant_scorer(0.8), src, ref, cfg);
    CHECK(g.objective == Catch::Approx(0.3).margin(1e-9));
    for (double v : g.gradient) CHECK(std::fabs(v) < 1e-10);
  }
  SECTION("indicator reward isolates one sequence") {
    const std::vector<int> target = {5, 4};  // cut at t_max, a valid complete sequence
    DiscScorer indicator = [&](const std::vector<int>&, const std::vector<int>& y) {
      return y == target ? 1.5 : 0.5;
    };
    RewardConfig cfg = reward_cfg(1.0, 1, 2);
    ExactGradient g = exact_expected_gradient(gen, indicator, src, ref, cfg);
    // J = p(target); dJ = p(target) dlog p(target)
    const double p = std::exp(gen.forced_log_prob(src, target));
    CHECK(g.objective == Catch::Approx(p).margin(1e-9));

    SentencePair pair{src, target};
    Batch batch = make_batch({&pair}, 2);
    Tape tape;
    Var lp = gen.logprob_matrix_graph(tape, batch);
    Var total = tape.sum_all(lp);
    gen.params().zero_grads();
    tape.backward(total);
    const auto dlogp = gen.params().flat_grads();
    gen.params().zero_grads();
    REQUIRE(dlogp.size() == g.gradient.size());
    for (std::size_t i = 0; i < dlogp.size(); ++i)
      CHECK(g.gradient[i] == Catch::Approx(p * dlogp[i]).margin(1e-9));
  }
  SECTION("matches finite differences of the objective") {
    RewardConfig cfg = reward_cfg(0.6, 1, 2);
    const DiscScorer scorer = [](const std::vector<int>&, const std::vector<int>& y) {
      return 0.3 + 0.4 / static_cast<double>(1 + y.size());
    };
    ExactGradient g = exact_expected_gradient(gen, scorer, src, ref, cfg);
    auto objective_at = [&]() {
      return exact_expected_gradient(gen, scorer, src, ref, cfg).objective;
    };
    auto flat = gen.params().flat_values();
    std::size_t checked = 0;
    for (std::size_t i = 0; i < flat.size(); i += 7) {  // a spread of coordinates
      auto perturbed = flat;
      const double h = 1e-6;
      perturbed[i] += h;
      gen.params().set_flat_values(perturbed);
      const double up = objective_at();
      perturbed[i] -= 2 * h;
      gen.params().set_flat_values(perturbed);
      const double dn = objective_at();
      gen.params().set_flat_values(flat);
      const double fd = (up - dn) / (2 * h);
      CHECK(std::fabs(fd - g.gradient[i]) < 1e-6);
      ++checked;
    }
    CHECK(checked > 10);
  }
}

TEST_CASE("enumeration guard rejects oversized spaces", "[reward]") {
  CHECK_THROWS(enumerate_complete_sequences(50, 6, 1000));
  // <eos> alone, plus 4 non-terminal starters times 5 second tokens
  CHECK(enumerate_complete_sequences(6, 2).size() == 1 + 4 * 5);
}

TEST_CASE("sampled policy gradient points along the exact gradient", "[reward]") {
  GruAttentionGenerator gen(tiny_cfg(6, 2, 2, 2, 43));
  const SentencePair pair{{4}, {5, kEos}};
  RewardConfig cfg = reward_cfg(0.0, 2, 2);
  ExactGradient exact = exact_expected_gradient(gen, constant_scorer(0.5), pair.source,
                                                pair.target, cfg);
  std::vector<double> mean(exact.gradient.size(), 0.0);
  const int episodes = 4000;
  for (int e = 0; e < episodes; ++e) {
    PgResult r = policy_gradient_step(gen, constant_scorer(0.5), {&pair}, cfg, 1234,
                                      static_cast<std::uint64_t>(e),
                                      {false, true, /*apply_update=*/false});
    // undo the per-episode 1/T normalization to estimate dJ itself
    const double t_len = r.mean_length;
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += r.gradient[i] * t_len;
  }
  for (double& v : mean) v /= episodes;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    dot += mean[i] * exact.gradient[i];
    na += mean[i] * mean[i];
    nb += exact.gradient[i] * exact.gradient[i];
  }
  CHECK(dot / std::sqrt(na * nb) > 0.9);
}

TEST_CASE("monte carlo reward variance shrinks with n", "[reward]") {
  GruAttentionGenerator gen(tiny_cfg(6, 2, 2, 3, 47));
  const std::vector<int> src = {4, 5};
  const std::vector<int> prefix = {5};
  const std::vector<int> ref = {5, 4, kEos};
  const DiscScorer scorer = constant_scorer(0.8);

  auto variance_at = [&](std::size_t n, std::uint64_t salt) {
    RewardConfig cfg = reward_cfg(0.5, n, 3);
    double sum = 0.0, sq = 0.0;
    const int repeats = 200;
    for (int i = 0; i < repeats; ++i) {
      Rng rng = derive_rng(salt, {static_cast<std::uint64_t>(i)});
      const double r = intermediate_reward(gen, scorer, src, prefix, ref, cfg, rng);
      sum += r;
      sq += r * r;
    }
    const double m = sum / repeats;
    return sq / repeats - m * m;
  };
  CHECK(variance_at(20, 555) < variance_at(5, 555));

  // large-n estimates concentrate on the enumeration value
  RewardConfig cfg = reward_cfg(0.5, 200, 3);
  const double expected = enumeration_expected_reward(gen, scorer, src, prefix, ref, cfg);
  Rng rng(2024);
  const double estimate = intermediate_reward(gen, scorer, src, prefix, ref, cfg, rng);
  // 3 sigma of the mean of 200 rollout rewards, bounded by the reward range
  const double sigma = std::sqrt(variance_at(20, 777) * 20.0 / 200.0);
  CHECK(std::fabs(estimate - expected) <= 3.0 * std::max(sigma, 1e-3));
}
