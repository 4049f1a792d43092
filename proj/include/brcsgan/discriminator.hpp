#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "brcsgan/checkpoint.hpp"
#include "brcsgan/param_store.hpp"
#include "brcsgan/rng.hpp"
#include "brcsgan/tape.hpp"
#include "brcsgan/tensor.hpp"
#include "brcsgan/vocab.hpp"

namespace brcsgan {

enum class DiscMode { Train, Eval };

struct DiscriminatorConfig {
  int vocab_size = 0;
  std::size_t embed_dim = 32;
  std::vector<std::size_t> window_sizes = {1, 2, 3, 4};
  std::size_t kernels_per_window = 32;
  std::size_t t = 20;  // fixed pair length; sentences are padded up to here
  std::uint64_t init_seed = 2;
  OptimizerConfig optimizer{.rule = OptimizerConfig::Rule::Adam, .lr = 1e-3};
  double clip_epsilon = 1.0;
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;
};

struct PairMatrices {
  Tensor source;  // T x k
  Tensor target;  // T x k
};

// A padded (source, target) id pair as the discriminator consumes it.
struct DiscPair {
  std::vector<int> source;
  std::vector<int> target;
};

struct LabeledDiscPair {
  DiscPair pair;
  bool real = false;
};

// Conditional CNN classifier over embedded (source, target) matrices.
// Class 1 is "human", class 0 is "machine"; predict_prob returns the
// probability of class 1. Each side has its own embedding, kernel banks,
// and batch-norm statistics.
class CnnDiscriminator {
 public:
  explicit CnnDiscriminator(DiscriminatorConfig cfg) : cfg_(cfg), opt_(cfg.optimizer) {
    if (cfg.vocab_size <= kNumReserved)
      throw std::invalid_argument("discriminator: vocab too small");
    for (std::size_t l : cfg.window_sizes)
      if (l == 0 || l > cfg.t) throw std::invalid_argument("discriminator: window exceeds T");
    const auto v = static_cast<std::size_t>(cfg.vocab_size);
    const std::size_t k = cfg.embed_dim, c = cfg.kernels_per_window;
    Rng rng = derive_rng(cfg.init_seed, {stream::kInit, 0xD15C});
    for (const char* side : {"src", "tgt"}) {
      store_.add(std::string("emb.") + side, init_uniform(rng, {v, k}, 0.08));
      for (std::size_t l : cfg.window_sizes) {
        const std::string p = prefix(side, l);
        store_.add(p + ".W", init_matrix(rng, l * k, c));
        store_.add(p + ".b", Tensor::zeros({1, c}));
        store_.add(p + ".gamma", Tensor::full({1, c}, 1.0));
        store_.add(p + ".beta", Tensor::zeros({1, c}));
        store_.add(p + ".mean", Tensor::zeros({1, c}), /*trainable=*/false);
        store_.add(p + ".var", Tensor::full({1, c}, 1.0), /*trainable=*/false);
      }
    }
    store_.add("final.V", init_matrix(rng, 2 * feature_dim(), 2));
  }

  const DiscriminatorConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  Optimizer& optimizer() { return opt_; }
  std::size_t feature_dim() const {
    return cfg_.window_sizes.size() * cfg_.kernels_per_window;
  }

  // ---- inference ----------------------------------------------------------

  PairMatrices embed_pair(const std::vector<int>& source, const std::vector<int>& target) const {
    if (source.size() != cfg_.t || target.size() != cfg_.t)
      throw std::invalid_argument("embed_pair: inputs must have length T");
    PairMatrices m;
    m.source = embed_side(source, "src");
    m.target = embed_side(target, "tgt");
    return m;
  }

  // Per-kernel max-over-time features of one embedded matrix. Train mode
  // normalizes with this matrix's own position statistics; eval mode uses
  // the running averages.
  std::vector<double> extract_features(const Tensor& m, const std::string& side,
                                       DiscMode mode) const {
    std::vector<double> out;
    out.reserve(feature_dim());
    for (std::size_t l : cfg_.window_sizes) {
      if (l > m.rows()) throw std::invalid_argument("extract_features: window exceeds input");
      const std::string p = prefix(side, l);
      Tensor fmap = conv_windows(m, l, store_.value(p + ".W"), store_.value(p + ".b"));
      const std::size_t positions = fmap.rows(), c = fmap.cols();
      const Tensor& gamma = store_.value(p + ".gamma");
      const Tensor& beta = store_.value(p + ".beta");
      std::vector<double> mean(c, 0.0), var(c, 0.0);
      if (mode == DiscMode::Train) {
        for (std::size_t r = 0; r < positions; ++r)
          for (std::size_t j = 0; j < c; ++j) mean[j] += fmap.at(r, j);
        for (std::size_t j = 0; j < c; ++j) mean[j] /= static_cast<double>(positions);
        for (std::size_t r = 0; r < positions; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            const double d = fmap.at(r, j) - mean[j];
            var[j] += d * d;
          }
        for (std::size_t j = 0; j < c; ++j) var[j] /= static_cast<double>(positions);
      } else {
        const Tensor& rm = store_.value(p + ".mean");
        const Tensor& rv = store_.value(p + ".var");
        mean.assign(rm.vec().begin(), rm.vec().end());
        var.assign(rv.vec().begin(), rv.vec().end());
      }
      for (std::size_t j = 0; j < c; ++j) {
        const double inv = 1.0 / std::sqrt(var[j] + cfg_.bn_eps);
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < positions; ++r) {
          const double bn = gamma[j] * (fmap.at(r, j) - mean[j]) * inv + beta[j];
          best = std::max(best, bn > 0.0 ? bn : 0.0);
        }
        out.push_back(best);
      }
    }
    return out;
  }

  // Probability that the target is human, conditioned on the source.
  double predict_prob(const std::vector<int>& source, const std::vector<int>& target,
                      DiscMode mode = DiscMode::Eval) const {
    const PairMatrices m = embed_pair(source, target);
    const std::vector<double> fx = extract_features(m.source, "src", mode);
    const std::vector<double> fy = extract_features(m.target, "tgt", mode);
    const Tensor& v = store_.value("final.V");
    double logits[2] = {0.0, 0.0};
    for (std::size_t j = 0; j < fx.size(); ++j) {
      logits[0] += fx[j] * v.at(j, 0);
      logits[1] += fx[j] * v.at(j, 1);
    }
    for (std::size_t j = 0; j < fy.size(); ++j) {
      logits[0] += fy[j] * v.at(fx.size() + j, 0);
      logits[1] += fy[j] * v.at(fx.size() + j, 1);
    }
    // two-class softmax via the logistic of the logit difference
    const double p = 1.0 / (1.0 + std::exp(logits[0] - logits[1]));
    if (!std::isfinite(p)) throw std::runtime_error("predict_prob: non-finite probability");
    return p;
  }

  // Fraction of labeled pairs classified correctly; p >= 0.5 predicts real.
  double accuracy(const std::vector<LabeledDiscPair>& pairs) const {
    if (pairs.empty()) throw std::invalid_argument("accuracy: empty set");
    std::size_t correct = 0;
    for (const auto& lp : pairs) {
      const bool said_real = predict_prob(lp.pair.source, lp.pair.target) >= 0.5;
      if (said_real == lp.real) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(pairs.size());
  }

  // ---- training -----------------------------------------------------------

  // Batched class logits for training; batch statistics are pooled over all
  // examples and positions per feature map. When update_running is set the
  // running statistics absorb this batch.
  Var logits_graph(Tape& tape, const std::vector<const DiscPair*>& pairs,
                   bool update_running) {
    const std::size_t b = pairs.size();
    if (b == 0) throw std::invalid_argument("logits_graph: empty batch");
    Var feats = tape.constant(Tensor::zeros({1, 1}));  // replaced below
    bool first_side = true;
    for (const char* side : {"src", "tgt"}) {
      std::vector<int> ids;
      ids.reserve(b * cfg_.t);
      for (const auto* p : pairs) {
        const auto& seq = std::string(side) == "src" ? p->source : p->target;
        if (seq.size() != cfg_.t)
          throw std::invalid_argument("logits_graph: pair not padded to T");
        ids.insert(ids.end(), seq.begin(), seq.end());
      }
      Var emb = tape.leaf(store_, std::string("emb.") + side);
      Var all = tape.gather_rows(emb, ids);  // (B*T) x k
      Var side_feats = tape.constant(Tensor::zeros({1, 1}));
      bool first_l = true;
      for (std::size_t l : cfg_.window_sizes) {
        const std::string p = prefix(side, l);
        const std::size_t positions = cfg_.t - l + 1;
        std::vector<Var> wins;
        for (std::size_t i = 0; i < b; ++i) {
          Var mi = tape.slice_rows(all, i * cfg_.t, (i + 1) * cfg_.t);
          wins.push_back(tape.im2row(mi, l));
        }
        Var windows = tape.concat_rows(wins);  // (B*positions) x (l*k)
        Var fmap = tape.add_rowvec(tape.matmul(windows, tape.leaf(store_, p + ".W")),
                                   tape.leaf(store_, p + ".b"));
        std::vector<double> bmean, bvar;
        Var bn = tape.batchnorm_train(fmap, tape.leaf(store_, p + ".gamma"),
                                      tape.leaf(store_, p + ".beta"), cfg_.bn_eps, &bmean, &bvar);
        if (update_running) {
          Tensor& rm = store_.value(p + ".mean");
          Tensor& rv = store_.value(p + ".var");
          for (std::size_t j = 0; j < rm.numel(); ++j) {
            rm[j] = cfg_.bn_momentum * rm[j] + (1.0 - cfg_.bn_momentum) * bmean[j];
            rv[j] = cfg_.bn_momentum * rv[j] + (1.0 - cfg_.bn_momentum) * bvar[j];
          }
        }
        Var pooled = tape.block_max_rows(tape.relu(bn), positions);  // B x C
        side_feats = first_l ? pooled : tape.concat_cols(side_feats, pooled);
        first_l = false;
      }
      feats = first_side ? side_feats : tape.concat_cols(feats, side_feats);
      first_side = false;
    }
    return tape.matmul(feats, tape.leaf(store_, "final.V"));  // B x 2
  }

  // min -E_real[log D] - E_fake[log(1 - D)], as two-class cross entropy.
  Var loss_graph(Tape& tape, const std::vector<const DiscPair*>& real,
                 const std::vector<const DiscPair*>& fake, bool update_running) {
    Var logit_r = logits_graph(tape, real, update_running);
    Var logit_f = logits_graph(tape, fake, update_running);
    std::vector<int> ones(real.size(), 1), zeros(fake.size(), 0);
    Var nll_r = tape.pick_rows(tape.log_softmax_rows(logit_r), ones);
    Var nll_f = tape.pick_rows(tape.log_softmax_rows(logit_f), zeros);
    Var mean_r = tape.scale(tape.sum_all(nll_r), -1.0 / static_cast<double>(real.size()));
    Var mean_f = tape.scale(tape.sum_all(nll_f), -1.0 / static_cast<double>(fake.size()));
    return tape.add(mean_r, mean_f);
  }

  // One update on the log loss followed by the weight clip; returns the
  // pre-step loss.
  double disc_step(const std::vector<const DiscPair*>& real,
                   const std::vector<const DiscPair*>& fake) {
    if (real.empty() || fake.empty())
      throw std::invalid_argument("disc_step: real and fake sets must be non-empty");
    Tape tape;
    Var loss = loss_graph(tape, real, fake, /*update_running=*/true);
    const double value = tape.value(loss).item();
    tape.backward(loss);
    opt_.step(store_);
    clip_to_box(store_, cfg_.clip_epsilon);
    return value;
  }

  double max_abs_weight() const {
    double mx = 0.0;
    for (const auto& e : store_.entries()) {
      if (!e.trainable) continue;
      for (double v : e.value.vec()) mx = std::max(mx, std::fabs(v));
    }
    return mx;
  }

 private:
  static std::string prefix(const std::string& side, std::size_t l) {
    return "conv." + side + ".l" + std::to_string(l);
  }

  Tensor embed_side(const std::vector<int>& ids, const char* side) const {
    const Tensor& emb = store_.value(std::string("emb.") + side);
    const std::size_t k = cfg_.embed_dim;
    Tensor m({ids.size(), k});
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const int id = ids[i];
      if (id < 0 || id >= cfg_.vocab_size)
        throw std::out_of_range("embed_pair: token id out of range");
      std::copy_n(emb.data() + static_cast<std::size_t>(id) * k, k, m.data() + i * k);
    }
    return m;
  }

  // Sliding-window convolution as im2row + matmul, plus bias.
  static Tensor conv_windows(const Tensor& m, std::size_t l, const Tensor& w, const Tensor& b) {
    const std::size_t rows = m.rows(), k = m.cols();
    const std::size_t n = rows - l + 1;
    Tensor windows({n, l * k});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t wrow = 0; wrow < l; ++wrow)
        std::copy_n(m.data() + (i + wrow) * k, k, windows.data() + i * l * k + wrow * k);
    Tensor fmap = matmul(windows, w);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < fmap.cols(); ++j) fmap.at(r, j) += b[j];
    return fmap;
  }

  DiscriminatorConfig cfg_;
  ParamStore store_;
  Optimizer opt_;
};

}  // namespace brcsgan
