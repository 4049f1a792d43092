#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "brcsgan/discriminator.hpp"

using namespace brcsgan;

namespace {

DiscriminatorConfig small_cfg(int vocab = 10, std::size_t k = 4, std::size_t c = 3,
                              std::size_t t = 6, std::uint64_t seed = 2) {
  DiscriminatorConfig cfg;
  cfg.vocab_size = vocab;
  cfg.embed_dim = k;
  cfg.kernels_per_window = c;
  cfg.window_sizes = {1, 2, 3};
  cfg.t = t;
  cfg.init_seed = seed;
  return cfg;
}

DiscPair padded_pair(std::vector<int> src, std::vector<int> tgt, std::size_t t) {
  src.resize(t, kPad);
  tgt.resize(t, kPad);
  return DiscPair{std::move(src), std::move(tgt)};
}

}  // namespace

TEST_CASE("embed_pair produces T x k matrices and validates lengths", "[discriminator]") {
  CnnDiscriminator d(small_cfg());
  DiscPair p = padded_pair({4, 5, 6}, {5, 4, kEos}, 6);
  PairMatrices m = d.embed_pair(p.source, p.target);
  CHECK(m.source.rows() == 6);
  CHECK(m.source.cols() == 4);
  CHECK(m.target.rows() == 6);
  CHECK_THROWS(d.embed_pair({4, 5}, p.target));

  // all-pad target embeds as T copies of the pad row
  DiscPair allpad = padded_pair({4}, {}, 6);
  PairMatrices mp = d.embed_pair(allpad.source, allpad.target);
  for (std::size_t r = 1; r < 6; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(mp.target.at(r, c) == mp.target.at(0, c));

  // determinism
  PairMatrices m2 = d.embed_pair(p.source, p.target);
  CHECK(m2.source.vec() == m.source.vec());
  CHECK(m2.target.vec() == m.target.vec());
}

TEST_CASE("identity-setup feature extraction reduces to max over time", "[discriminator]") {
  // one width-1 kernel of ones over a scalar embedding: feature maps are the
  // raw values, pooling picks the maximum.
  DiscriminatorConfig cfg;
  cfg.vocab_size = 8;
  cfg.embed_dim = 1;
  cfg.window_sizes = {1};
  cfg.kernels_per_window = 1;
  cfg.t = 3;
  CnnDiscriminator d(cfg);
  d.params().value("conv.src.l1.W").fill(1.0);
  d.params().value("conv.src.l1.b").fill(0.0);
  // eval mode with unit running stats bypasses the normalization
  Tensor m({3, 1}, {1.0, 2.0, 3.0});
  auto feats = d.extract_features(m, "src", DiscMode::Eval);
  REQUIRE(feats.size() == 1);
  CHECK(feats[0] == Catch::Approx(3.0).margin(1e-4));
}

TEST_CASE("feature vector length is the kernel count regardless of content", "[discriminator]") {
  CnnDiscriminator d(small_cfg());
  Rng rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    Tensor m = init_uniform(rng, {6, 4}, 1.0);
    auto f = d.extract_features(m, "tgt", DiscMode::Train);
    CHECK(f.size() == d.feature_dim());
  }
  Tensor too_small({2, 4});
  CHECK_THROWS(d.extract_features(too_small, "src", DiscMode::Train));
}

TEST_CASE("train-mode and eval-mode features differ when stats differ", "[discriminator]") {
  CnnDiscriminator d(small_cfg());
  Rng rng(7);
  Tensor m = init_uniform(rng, {6, 4}, 1.0);
  auto train_f = d.extract_features(m, "src", DiscMode::Train);
  auto eval_f = d.extract_features(m, "src", DiscMode::Eval);
  bool any_diff = false;
  for (std::size_t i = 0; i < train_f.size(); ++i)
    if (std::fabs(train_f[i] - eval_f[i]) > 1e-9) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("max-over-time pooling agrees with a direct scan", "[discriminator]") {
  DiscriminatorConfig cfg = small_cfg();
  cfg.window_sizes = {1};
  CnnDiscriminator d(cfg);
  Rng rng(11);
  Tensor m = init_uniform(rng, {6, 4}, 1.0);
  auto feats = d.extract_features(m, "src", DiscMode::Eval);
  // recompute by scanning every window position directly
  const Tensor& w = d.params().value("conv.src.l1.W");
  const Tensor& gamma = d.params().value("conv.src.l1.gamma");
  const Tensor& beta = d.params().value("conv.src.l1.beta");
  for (std::size_t j = 0; j < feats.size(); ++j) {
    double best = -1e300;
    for (std::size_t i = 0; i < 6; ++i) {
      double conv = 0.0;
      for (std::size_t c = 0; c < 4; ++c) conv += m.at(i, c) * w.at(c, j);
      const double bn = gamma[j] * conv / std::sqrt(1.0 + d.config().bn_eps) + beta[j];
      best = std::max(best, std::max(bn, 0.0));
    }
    CHECK(feats[j] == Catch::Approx(best).margin(1e-12));
  }
}

TEST_CASE("predict_prob stays strictly inside (0,1)", "[discriminator]") {
  CnnDiscriminator d(small_cfg());
  DiscPair p = padded_pair({4, 5, 6}, {6, 5, kEos}, 6);

  SECTION("zeroed head gives exactly one half") {
    d.params().value("final.V").fill(0.0);
    CHECK(d.predict_prob(p.source, p.target) == 0.5);
  }
  SECTION("random parameterizations stay in range") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      CnnDiscriminator dd(small_cfg(10, 4, 3, 6, seed));
      const double prob = dd.predict_prob(p.source, p.target, DiscMode::Train);
      CHECK(prob > 0.0);
      CHECK(prob < 1.0);
    }
  }
  SECTION("swapping the class columns flips the probability") {
    const double before = d.predict_prob(p.source, p.target);
    Tensor& v = d.params().value("final.V");
    for (std::size_t r = 0; r < v.rows(); ++r) std::swap(v.at(r, 0), v.at(r, 1));
    CHECK(d.predict_prob(p.source, p.target) == Catch::Approx(1.0 - before).margin(1e-12));
  }
}

TEST_CASE("kernel permutation permutes the feature vector identically", "[discriminator]") {
  DiscriminatorConfig cfg = small_cfg();
  cfg.window_sizes = {2};
  CnnDiscriminator a(cfg);
  CnnDiscriminator b(cfg);
  // permute the kernels (columns) of b by rotation
  const std::size_t c = cfg.kernels_per_window;
  auto rotate_cols = [&](const std::string& name, bool is_matrix) {
    const Tensor& src = a.params().value(name);
    Tensor& dst = b.params().value(name);
    const std::size_t rows = is_matrix ? src.rows() : 1;
    const std::size_t cols = src.numel() / rows;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < cols; ++j)
        dst[r * cols + (j + 1) % cols] = src[r * cols + j];
  };
  rotate_cols("conv.src.l2.W", true);
  for (const char* f : {".b", ".gamma", ".beta", ".mean", ".var"})
    rotate_cols(std::string("conv.src.l2") + f, false);

  Rng rng(13);
  Tensor m = init_uniform(rng, {6, 4}, 1.0);
  auto fa = a.extract_features(m, "src", DiscMode::Train);
  auto fb = b.extract_features(m, "src", DiscMode::Train);
  for (std::size_t j = 0; j < c; ++j) CHECK(fb[(j + 1) % c] == Catch::Approx(fa[j]).margin(1e-12));
}

TEST_CASE("batched training logits match across runs and update running stats", "[discriminator]") {
  CnnDiscriminator d(small_cfg());
  DiscPair p1 = padded_pair({4, 5, 6}, {6, 5, kEos}, 6);
  DiscPair p2 = padded_pair({7, 8}, {8, kEos}, 6);
  std::vector<const DiscPair*> batch = {&p1, &p2};
  Tensor before_mean = d.params().value("conv.src.l1.mean");
  {
    Tape t;
    Var logits = d.logits_graph(t, batch, /*update_running=*/false);
    CHECK(t.value(logits).rows() == 2);
    CHECK(t.value(logits).cols() == 2);
  }
  CHECK(d.params().value("conv.src.l1.mean").vec() == before_mean.vec());
  {
    Tape t;
    (void)d.logits_graph(t, batch, /*update_running=*/true);
  }
  CHECK(d.params().value("conv.src.l1.mean").vec() != before_mean.vec());
  for (double v : d.params().value("conv.src.l1.var").vec()) CHECK(v >= 0.0);
}

TEST_CASE("constant half probability gives loss 2 ln 2", "[discriminator]") {
  CnnDiscriminator d(small_cfg());
  d.params().value("final.V").fill(0.0);
  DiscPair r = padded_pair({4, 5}, {5, kEos}, 6);
  DiscPair f = padded_pair({6, 7}, {7, kEos}, 6);
  Tape t;
  Var loss = d.loss_graph(t, {&r}, {&f}, false);
  CHECK(t.value(loss).item() == Catch::Approx(2.0 * std::log(2.0)).margin(1e-12));
}

TEST_CASE("disc_step clips every weight into the box", "[discriminator]") {
  DiscriminatorConfig cfg = small_cfg();
  cfg.clip_epsilon = 0.05;  // tight box so the clip provably engages
  cfg.optimizer.lr = 0.5;
  CnnDiscriminator d(cfg);
  DiscPair r = padded_pair({4, 5, 6}, {6, 5, kEos}, 6);
  DiscPair f = padded_pair({4, 5, 6}, {8, 9, kEos}, 6);
  CHECK_THROWS(d.disc_step({}, {&f}));
  for (int i = 0; i < 3; ++i) {
    (void)d.disc_step({&r}, {&f});
    CHECK(d.max_abs_weight() <= cfg.clip_epsilon);
  }
}

TEST_CASE("discriminator gradients pass finite differences", "[discriminator]") {
  DiscriminatorConfig cfg = small_cfg(9, 3, 2, 5, 3);
  CnnDiscriminator d(cfg);
  DiscPair r1 = padded_pair({4, 5, 6}, {6, 5, kEos}, 5);
  DiscPair r2 = padded_pair({7, 8}, {8, kEos}, 5);
  DiscPair f1 = padded_pair({4, 5, 6}, {4, kEos}, 5);
  // fixed batch, batch-statistics mode, no running updates inside the check
  auto build = [&](Tape& t) {
    return t.scale(d.loss_graph(t, {&r1, &r2}, {&f1}, false), 0.01);
  };
  FdReport rep = finite_difference_check(d.params(), build, 1e-5);
  INFO("worst param " << rep.worst_param);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("a few steps separate an easy real/fake pool", "[discriminator]") {
  DiscriminatorConfig cfg = small_cfg(12, 6, 4, 6, 5);
  cfg.optimizer.lr = 5e-3;
  CnnDiscriminator d(cfg);
  // real pairs: target mirrors source; fakes: constant unrelated target
  std::vector<DiscPair> reals, fakes;
  Rng rng(17);
  for (int i = 0; i < 24; ++i) {
    std::vector<int> src;
    for (int j = 0; j < 4; ++j) src.push_back(4 + static_cast<int>(rng.below(8)));
    std::vector<int> tgt = src;
    tgt.push_back(kEos);
    reals.push_back(padded_pair(src, tgt, 6));
    fakes.push_back(padded_pair(src, {11, 11, 11, kEos}, 6));
  }
  std::vector<LabeledDiscPair> labeled;
  for (const auto& p : reals) labeled.push_back({p, true});
  for (const auto& p : fakes) labeled.push_back({p, false});
  CHECK_THROWS(d.accuracy({}));

  for (int step = 0; step < 50; ++step) {
    std::vector<const DiscPair*> rb, fb;
    for (int i = 0; i < 8; ++i) {
      rb.push_back(&reals[static_cast<std::size_t>((step * 8 + i) % 24)]);
      fb.push_back(&fakes[static_cast<std::size_t>((step * 8 + i) % 24)]);
    }
    (void)d.disc_step(rb, fb);
  }
  CHECK(d.accuracy(labeled) >= 0.9);
}
