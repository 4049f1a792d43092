#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "brcsgan/corpus.hpp"
#include "brcsgan/param_store.hpp"
#include "brcsgan/policy.hpp"
#include "brcsgan/rng.hpp"
#include "brcsgan/tape.hpp"
#include "brcsgan/tensor.hpp"
#include "brcsgan/vocab.hpp"

namespace brcsgan {

constexpr double kMaskLogit = -1e30;

struct GeneratorConfig {
  int vocab_size = 0;
  std::size_t embed_dim = 32;   // k; reference-scale systems use 512
  std::size_t hidden_dim = 64;  // per-direction encoder width; reference 512
  std::size_t t_max = 20;
  std::uint64_t init_seed = 1;
  OptimizerConfig optimizer{};
};

// One encoded source sentence: bidirectional annotations, cached attention
// keys, and the decoder's learned start state.
struct EncodedSource {
  Tensor annotations;  // m x 2h, row j = [fwd_j ; bwd_j]
  Tensor keys;         // m x h, annotations projected for attention scoring
  Tensor init_state;   // 1 x h
  std::size_t len = 0;
};

struct DecodeState {
  Tensor hidden;  // 1 x h
  int prev_token = kBos;
  std::size_t step = 0;
};

struct AttentionResult {
  std::vector<double> weights;  // over source positions, sums to 1
  Tensor context;               // 1 x 2h
};

struct StepResult {
  std::vector<double> probs;  // over the vocab; <pad> is exactly 0
  Tensor next_hidden;         // 1 x h
};

namespace detail {

inline void add_rowvec_inplace(Tensor& x, const Tensor& v) {
  const std::size_t rows = x.rows(), cols = x.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) x[r * cols + c] += v[c];
}

// h' = h + z (c - h) with z, r gates; the single-candidate-matmul GRU
// variant (reset gate applied after the hidden projection).
inline Tensor gru_rows(const Tensor& h, const Tensor& x, const Tensor& wx, const Tensor& wh,
                       const Tensor& b) {
  Tensor gx = matmul(x, wx);
  add_rowvec_inplace(gx, b);
  Tensor gh = matmul(h, wh);
  const std::size_t rows = h.rows(), hid = h.cols();
  Tensor out({rows, hid});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* gxr = gx.data() + r * 3 * hid;
    const double* ghr = gh.data() + r * 3 * hid;
    const double* hr = h.data() + r * hid;
    double* o = out.data() + r * hid;
    for (std::size_t c = 0; c < hid; ++c) {
      const double z = 1.0 / (1.0 + std::exp(-(gxr[c] + ghr[c])));
      const double rg = 1.0 / (1.0 + std::exp(-(gxr[hid + c] + ghr[hid + c])));
      const double cand = std::tanh(gxr[2 * hid + c] + rg * ghr[2 * hid + c]);
      o[c] = hr[c] + z * (cand - hr[c]);
    }
  }
  return out;
}

inline void softmax_rows_inplace(Tensor& x) {
  const std::size_t rows = x.rows(), cols = x.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = x.data() + r * cols;
    double mx = row[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= sum;
  }
}

}  // namespace detail

// Bidirectional-GRU encoder with additive attention and a GRU decoder; the
// sequence policy. Inference (sampling, beam search, rollouts) runs on plain
// matrices; training losses are built on a Tape via the graph methods.
class GruAttentionGenerator {
 public:
  explicit GruAttentionGenerator(GeneratorConfig cfg)
      : cfg_(cfg), opt_(cfg.optimizer) {
    if (cfg.vocab_size <= kNumReserved)
      throw std::invalid_argument("generator: vocab too small");
    const auto v = static_cast<std::size_t>(cfg.vocab_size);
    const std::size_t k = cfg.embed_dim, h = cfg.hidden_dim;
    Rng rng = derive_rng(cfg.init_seed, {stream::kInit, 0x6E01});
    store_.add("src_emb", init_uniform(rng, {v, k}, 0.08));
    store_.add("tgt_emb", init_uniform(rng, {v, k}, 0.08));
    for (const char* dir : {"enc_fwd", "enc_bwd"}) {
      store_.add(std::string(dir) + ".Wx", init_matrix(rng, k, 3 * h));
      store_.add(std::string(dir) + ".Wh", init_matrix(rng, h, 3 * h));
      store_.add(std::string(dir) + ".b", Tensor::zeros({1, 3 * h}));
    }
    store_.add("dec_init.W", init_matrix(rng, 2 * h, h));
    store_.add("dec_init.b", Tensor::zeros({1, h}));
    store_.add("attn.Ws", init_matrix(rng, h, h));
    store_.add("attn.Uh", init_matrix(rng, 2 * h, h));
    store_.add("attn.v", init_matrix(rng, h, 1));
    store_.add("dec.Wx", init_matrix(rng, k + 2 * h, 3 * h));
    store_.add("dec.Wh", init_matrix(rng, h, 3 * h));
    store_.add("dec.b", Tensor::zeros({1, 3 * h}));
    store_.add("out.W", init_matrix(rng, h + k + 2 * h, v));
    store_.add("out.b", Tensor::zeros({1, v}));
  }

  const GeneratorConfig& config() const { return cfg_; }
  int vocab_size() const { return cfg_.vocab_size; }
  std::size_t t_max() const { return cfg_.t_max; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  Optimizer& optimizer() { return opt_; }

  // ---- inference path -----------------------------------------------------

  EncodedSource encode(const std::vector<int>& source) const {
    auto many = encode_many({&source});
    return std::move(many[0]);
  }

  // Batched encoding; the per-sentence results are independent of the batch
  // they were computed in.
  std::vector<EncodedSource> encode_many(const std::vector<const std::vector<int>*>& sources) const {
    const std::size_t b = sources.size();
    if (b == 0) return {};
    std::size_t m = 0;
    for (const auto* s : sources) {
      if (s->empty()) throw std::invalid_argument("encode: empty source");
      m = std::max(m, s->size());
    }
    const std::size_t k = cfg_.embed_dim, h = cfg_.hidden_dim;
    const Tensor& emb = store_.value("src_emb");

    auto run_direction = [&](bool forward) {
      const std::string p = forward ? "enc_fwd" : "enc_bwd";
      const Tensor& wx = store_.value(p + ".Wx");
      const Tensor& wh = store_.value(p + ".Wh");
      const Tensor& bias = store_.value(p + ".b");
      std::vector<Tensor> states;  // per position, b x h
      Tensor hcur({b, h});
      for (std::size_t idx = 0; idx < m; ++idx) {
        const std::size_t pos = forward ? idx : m - 1 - idx;
        Tensor x({b, k});
        for (std::size_t i = 0; i < b; ++i) {
          const int tok = pos < sources[i]->size() ? (*sources[i])[pos] : kPad;
          std::copy_n(emb.data() + static_cast<std::size_t>(tok) * k, k, x.data() + i * k);
        }
        Tensor hnew = detail::gru_rows(hcur, x, wx, wh, bias);
        for (std::size_t i = 0; i < b; ++i) {
          const double mask = pos < sources[i]->size() ? 1.0 : 0.0;
          double* hc = hcur.data() + i * h;
          const double* hn = hnew.data() + i * h;
          for (std::size_t c = 0; c < h; ++c) hc[c] = hc[c] + mask * (hn[c] - hc[c]);
        }
        states.push_back(hcur);
      }
      return states;
    };
    const std::vector<Tensor> fwd = run_direction(true);
    const std::vector<Tensor> bwd_rev = run_direction(false);

    const Tensor& uh = store_.value("attn.Uh");
    const Tensor& initw = store_.value("dec_init.W");
    const Tensor& initb = store_.value("dec_init.b");
    std::vector<EncodedSource> out(b);
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t len = sources[i]->size();
      EncodedSource e;
      e.len = len;
      e.annotations = Tensor({len, 2 * h});
      for (std::size_t j = 0; j < len; ++j) {
        // bwd_rev[idx] holds the state after reading position m-1-idx, so the
        // backward state at source position j is bwd_rev[m-1-j].
        std::copy_n(fwd[j].data() + i * h, h, e.annotations.data() + j * 2 * h);
        std::copy_n(bwd_rev[m - 1 - j].data() + i * h, h, e.annotations.data() + j * 2 * h + h);
      }
      e.keys = matmul(e.annotations, uh);
      Tensor mean({1, 2 * h});
      const double w = 1.0 / static_cast<double>(len);
      for (std::size_t j = 0; j < len; ++j)
        for (std::size_t c = 0; c < 2 * h; ++c) mean[c] += w * e.annotations[j * 2 * h + c];
      Tensor s0 = matmul(mean, initw);
      detail::add_rowvec_inplace(s0, initb);
      for (double& vv : s0.vec()) vv = std::tanh(vv);
      e.init_state = std::move(s0);
      out[i] = std::move(e);
    }
    return out;
  }

  DecodeState initial_state(const EncodedSource& enc) const {
    return DecodeState{enc.init_state, kBos, 0};
  }

  AttentionResult attend(const DecodeState& state, const EncodedSource& enc) const {
    if (enc.len == 0) throw std::invalid_argument("attend: no source positions");
    const std::size_t h = cfg_.hidden_dim;
    Tensor q = matmul(state.hidden, store_.value("attn.Ws"));  // 1 x h
    const Tensor& v = store_.value("attn.v");
    Tensor scores({1, enc.len});
    for (std::size_t j = 0; j < enc.len; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < h; ++c)
        s += std::tanh(enc.keys[j * h + c] + q[c]) * v[c];
      scores[j] = s;
    }
    detail::softmax_rows_inplace(scores);
    AttentionResult res;
    res.weights.assign(scores.vec().begin(), scores.vec().end());
    res.context = Tensor({1, 2 * h});
    for (std::size_t j = 0; j < enc.len; ++j) {
      const double w = scores[j];
      for (std::size_t c = 0; c < 2 * h; ++c) res.context[c] += w * enc.annotations[j * 2 * h + c];
    }
    return res;
  }

  // Next-token distribution given the state, plus the recurrent update.
  StepResult decode_step(const DecodeState& state, const EncodedSource& enc) const {
    const std::size_t k = cfg_.embed_dim, h = cfg_.hidden_dim;
    const AttentionResult att = attend(state, enc);
    Tensor embp({1, k});
    std::copy_n(store_.value("tgt_emb").data() + static_cast<std::size_t>(state.prev_token) * k,
                k, embp.data());
    Tensor x({1, k + 2 * h});
    std::copy_n(embp.data(), k, x.data());
    std::copy_n(att.context.data(), 2 * h, x.data() + k);
    Tensor hnew = detail::gru_rows(state.hidden, x, store_.value("dec.Wx"),
                                   store_.value("dec.Wh"), store_.value("dec.b"));
    Tensor z({1, h + k + 2 * h});
    std::copy_n(hnew.data(), h, z.data());
    std::copy_n(embp.data(), k, z.data() + h);
    std::copy_n(att.context.data(), 2 * h, z.data() + h + k);
    Tensor logits = matmul(z, store_.value("out.W"));
    detail::add_rowvec_inplace(logits, store_.value("out.b"));
    logits[kPad] += kMaskLogit;
    detail::softmax_rows_inplace(logits);
    StepResult r;
    r.probs.assign(logits.vec().begin(), logits.vec().end());
    if (!std::all_of(r.probs.begin(), r.probs.end(), [](double p) { return std::isfinite(p); }))
      throw std::runtime_error("decode_step: non-finite distribution");
    r.next_hidden = std::move(hnew);
    return r;
  }

  // Greedy argmax with ties broken toward the lowest token id.
  static int pick_greedy(const std::vector<double>& probs) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(probs.size()); ++i)
      if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)]) best = i;
    return best;
  }

  static int pick_multinomial(const std::vector<double>& probs, Rng& rng) {
    const double u = rng.next_double();
    double acc = 0.0;
    int last_positive = 0;
    for (int i = 0; i < static_cast<int>(probs.size()); ++i) {
      const double p = probs[static_cast<std::size_t>(i)];
      if (p > 0.0) last_positive = i;
      acc += p;
      if (u < acc) return i;
    }
    return last_positive;
  }

  std::vector<int> sample_sequence(const std::vector<int>& source, SampleMode mode,
                                   std::size_t max_len, Rng& rng) const {
    if (max_len < 1 || max_len > cfg_.t_max)
      throw std::invalid_argument("sample_sequence: max_len out of range");
    const EncodedSource enc = encode(source);
    return sample_from(enc, {}, mode, max_len, rng);
  }

  std::vector<int> greedy_decode(const std::vector<int>& source) const {
    Rng unused(0);
    return sample_sequence(source, SampleMode::Greedy, cfg_.t_max, unused);
  }

  // One multinomial completion of an unterminated prefix; returns the full
  // sequence including the prefix.
  std::vector<int> continue_prefix(const std::vector<int>& source,
                                   const std::vector<int>& prefix, Rng& rng) const {
    if (prefix.empty()) throw std::invalid_argument("continue_prefix: empty prefix");
    if (prefix.back() == kEos)
      throw std::invalid_argument("continue_prefix: prefix already terminated");
    const EncodedSource enc = encode(source);
    return sample_from(enc, prefix, SampleMode::Multinomial, cfg_.t_max, rng);
  }

  // For a sampled sequence y_1..y_T, returns continuations[t] = n full
  // multinomial completions of the prefix y_1..y_{t+1}, for prefix lengths
  // 1..T-1. Rollout (t, i) draws from its own derived stream, so results do
  // not depend on evaluation order or batching.
  std::vector<std::vector<std::vector<int>>> all_prefix_continuations(
      const std::vector<int>& source, const std::vector<int>& sampled, std::size_t n,
      std::uint64_t seed) const {
    const std::size_t t_len = sampled.size();
    std::vector<std::vector<std::vector<int>>> out;
    if (t_len < 2) return out;
    const EncodedSource enc = encode(source);

    // Replay the sampled sequence once, keeping the state after each prefix.
    std::vector<DecodeState> states;  // states[t] = state after consuming y_1..y_{t+1}
    DecodeState st = initial_state(enc);
    for (std::size_t t = 0; t < t_len - 1; ++t) {
      StepResult step = decode_step(st, enc);
      st = DecodeState{std::move(step.next_hidden), sampled[t], t + 1};
      states.push_back(st);
    }

    out.resize(t_len - 1);
    std::vector<const EncodedSource*> encs;
    std::vector<DecodeState> starts;
    for (std::size_t t = 0; t + 1 < t_len; ++t)
      for (std::size_t i = 0; i < n; ++i) {
        encs.push_back(&enc);
        starts.push_back(states[t]);
      }
    std::vector<Rng> rngs;
    for (std::size_t t = 0; t + 1 < t_len; ++t)
      for (std::size_t i = 0; i < n; ++i) rngs.push_back(derive_rng(seed, {t, i}));
    std::vector<std::vector<int>> tails = sample_batch(encs, starts, &rngs, cfg_.t_max);
    std::size_t row = 0;
    for (std::size_t t = 0; t + 1 < t_len; ++t) {
      out[t].reserve(n);
      for (std::size_t i = 0; i < n; ++i, ++row) {
        std::vector<int> full(sampled.begin(), sampled.begin() + static_cast<long>(t + 1));
        full.insert(full.end(), tails[row].begin(), tails[row].end());
        out[t].push_back(std::move(full));
      }
    }
    return out;
  }

  // Batched greedy decoding over many sources.
  std::vector<std::vector<int>> greedy_decode_many(
      const std::vector<const std::vector<int>*>& sources) const {
    if (sources.empty()) return {};
    std::vector<EncodedSource> encs = encode_many(sources);
    std::vector<const EncodedSource*> eptr;
    std::vector<DecodeState> starts;
    for (const auto& e : encs) {
      eptr.push_back(&e);
      starts.push_back(initial_state(e));
    }
    return sample_batch(eptr, starts, nullptr, cfg_.t_max);
  }

  std::vector<int> beam_search(const std::vector<int>& source, std::size_t beam_size,
                               double length_penalty = 0.0) const {
    if (beam_size < 1) throw std::invalid_argument("beam_search: beam_size must be >= 1");
    const EncodedSource enc = encode(source);
    struct Hyp {
      std::vector<int> tokens;
      DecodeState state;
      double score = 0.0;
    };
    std::vector<Hyp> live{Hyp{{}, initial_state(enc), 0.0}};
    std::vector<Hyp> finished;
    for (std::size_t step = 0; step < cfg_.t_max && !live.empty(); ++step) {
      struct Cand {
        double score;
        std::size_t parent;
        int token;
      };
      std::vector<Cand> cands;
      std::vector<StepResult> results;
      results.reserve(live.size());
      for (std::size_t p = 0; p < live.size(); ++p) {
        results.push_back(decode_step(live[p].state, enc));
        const auto& probs = results.back().probs;
        for (int tok = 0; tok < static_cast<int>(probs.size()); ++tok) {
          const double pr = probs[static_cast<std::size_t>(tok)];
          if (pr <= 0.0) continue;
          cands.push_back({live[p].score + std::log(pr), p, tok});
        }
      }
      std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.parent != b.parent) return a.parent < b.parent;
        return a.token < b.token;
      });
      // Only candidates ranked inside the beam are kept; an <eos> candidate
      // outside the top beam_size is pruned like any other, which is what
      // makes beam_size = 1 coincide with greedy decoding.
      std::vector<Hyp> next;
      const std::size_t take = std::min(cands.size(), beam_size);
      for (std::size_t ci = 0; ci < take; ++ci) {
        const Cand& c = cands[ci];
        Hyp h;
        h.tokens = live[c.parent].tokens;
        h.tokens.push_back(c.token);
        h.score = c.score;
        if (c.token == kEos || step + 1 == cfg_.t_max) {
          h.state = DecodeState{};
          finished.push_back(std::move(h));
        } else {
          h.state = DecodeState{results[c.parent].next_hidden, c.token, step + 1};
          next.push_back(std::move(h));
        }
      }
      live = std::move(next);
    }
    if (finished.empty()) throw std::logic_error("beam_search: no finished hypothesis");
    auto ranked = [&](const Hyp& h) {
      if (length_penalty > 0.0)
        return h.score / std::pow(static_cast<double>(h.tokens.size()), length_penalty);
      return h.score;
    };
    std::size_t best = 0;
    for (std::size_t i = 1; i < finished.size(); ++i) {
      const double a = ranked(finished[i]), b = ranked(finished[best]);
      if (a > b || (a == b && finished[i].tokens < finished[best].tokens)) best = i;
    }
    return finished[best].tokens;
  }

  // Sum of per-step target log probabilities, excluding <pad>; the target
  // must be <eos>-terminated.
  double sequence_log_prob(const std::vector<int>& source, const std::vector<int>& target) const {
    std::vector<int> toks = target;
    while (!toks.empty() && toks.back() == kPad) toks.pop_back();
    if (toks.empty() || toks.back() != kEos)
      throw std::invalid_argument("sequence_log_prob: target must end with <eos>");
    return forced_log_prob(source, toks);
  }

  // Log probability of an arbitrary token sequence (possibly cut before
  // <eos>); the enumeration and scoring primitive.
  double forced_log_prob(const std::vector<int>& source, const std::vector<int>& tokens) const {
    const EncodedSource enc = encode(source);
    DecodeState st = initial_state(enc);
    double total = 0.0;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      StepResult step = decode_step(st, enc);
      const double p = step.probs[static_cast<std::size_t>(tokens[t])];
      if (!(p > 0.0)) return -std::numeric_limits<double>::infinity();
      total += std::log(p);
      st = DecodeState{std::move(step.next_hidden), tokens[t], t + 1};
    }
    return total;
  }

  // ---- training graphs ----------------------------------------------------

  // (B x T) matrix of log p(y_t | y_<t, X) under teacher forcing; entries at
  // padded positions are large negative garbage and must be masked by the
  // caller's weights.
  Var logprob_matrix_graph(Tape& tape, const Batch& batch) const {
    const std::size_t b = batch.size, t_len = batch.t;
    const std::size_t k = cfg_.embed_dim, h = cfg_.hidden_dim;
    const auto vsz = static_cast<std::size_t>(cfg_.vocab_size);

    Var src_emb = tape.leaf(const_cast<ParamStore&>(store_), "src_emb");
    Var tgt_emb = tape.leaf(const_cast<ParamStore&>(store_), "tgt_emb");

    // encoder
    auto run_dir = [&](const std::string& p, bool forward) {
      Var wx = tape.leaf(const_cast<ParamStore&>(store_), p + ".Wx");
      Var wh = tape.leaf(const_cast<ParamStore&>(store_), p + ".Wh");
      Var bias = tape.leaf(const_cast<ParamStore&>(store_), p + ".b");
      std::vector<Var> states(t_len);
      Var hcur = tape.constant(Tensor::zeros({b, h}));
      for (std::size_t idx = 0; idx < t_len; ++idx) {
        const std::size_t pos = forward ? idx : t_len - 1 - idx;
        std::vector<int> toks(b);
        for (std::size_t i = 0; i < b; ++i) toks[i] = batch.src(i, pos);
        Var x = tape.gather_rows(src_emb, toks);
        Var hnew = gru_graph(tape, hcur, x, wx, wh, bias, h);
        Tensor mask({b, h});
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t c = 0; c < h; ++c) mask[i * h + c] = batch.src_mask(i, pos);
        Var m = tape.constant(std::move(mask));
        hcur = tape.add(hcur, tape.mul(m, tape.sub(hnew, hcur)));
        states[pos] = hcur;
      }
      return states;
    };
    std::vector<Var> fwd = run_dir("enc_fwd", true);
    std::vector<Var> bwd = run_dir("enc_bwd", false);

    std::vector<Var> ann(t_len);
    for (std::size_t j = 0; j < t_len; ++j) ann[j] = tape.concat_cols(fwd[j], bwd[j]);
    Var h_flat = tape.stack_blocks(ann);  // (B*T) x 2h

    Tensor mean_w({b, t_len});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < t_len; ++j)
        mean_w[i * t_len + j] = batch.src_mask(i, j) / static_cast<double>(batch.source_len[i]);
    Var mean_ann = tape.block_weighted_sum(h_flat, tape.constant(std::move(mean_w)));
    Var s0 = tape.tanh(tape.add_rowvec(
        tape.matmul(mean_ann, tape.leaf(const_cast<ParamStore&>(store_), "dec_init.W")),
        tape.leaf(const_cast<ParamStore&>(store_), "dec_init.b")));

    Var keys = tape.matmul(h_flat, tape.leaf(const_cast<ParamStore&>(store_), "attn.Uh"));
    Var ws = tape.leaf(const_cast<ParamStore&>(store_), "attn.Ws");
    Var attv = tape.leaf(const_cast<ParamStore&>(store_), "attn.v");
    Tensor attn_bias({b, t_len});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < t_len; ++j)
        attn_bias[i * t_len + j] = batch.src_mask(i, j) == 1.0 ? 0.0 : kMaskLogit;
    Var attn_mask = tape.constant(std::move(attn_bias));

    Var dec_wx = tape.leaf(const_cast<ParamStore&>(store_), "dec.Wx");
    Var dec_wh = tape.leaf(const_cast<ParamStore&>(store_), "dec.Wh");
    Var dec_b = tape.leaf(const_cast<ParamStore&>(store_), "dec.b");
    Var out_w = tape.leaf(const_cast<ParamStore&>(store_), "out.W");
    Var out_b = tape.leaf(const_cast<ParamStore&>(store_), "out.b");
    Tensor pad_bias_t({1, vsz});
    pad_bias_t[kPad] = kMaskLogit;
    Var pad_bias = tape.constant(std::move(pad_bias_t));

    Var s = s0;
    std::vector<Var> picks(t_len);
    for (std::size_t t = 0; t < t_len; ++t) {
      std::vector<int> prev(b), cur(b);
      for (std::size_t i = 0; i < b; ++i) {
        prev[i] = t == 0 ? kBos : batch.tgt(i, t - 1);
        cur[i] = batch.tgt(i, t);
      }
      Var embp = tape.gather_rows(tgt_emb, prev);
      // attention
      Var q = tape.matmul(s, ws);
      Var e = tape.tanh(tape.add(keys, tape.expand_rows(q, t_len)));
      Var sc = tape.reshape(tape.matmul(e, attv), {b, t_len});
      Var alpha = tape.softmax_rows(tape.add(sc, attn_mask));
      Var ctx = tape.block_weighted_sum(h_flat, alpha);
      // recurrence and readout
      Var x = tape.concat_cols(embp, ctx);
      s = gru_graph(tape, s, x, dec_wx, dec_wh, dec_b, h);
      Var z = tape.concat_cols(s, tape.concat_cols(embp, ctx));
      Var logits = tape.add_rowvec(tape.add_rowvec(tape.matmul(z, out_w), out_b), pad_bias);
      picks[t] = tape.pick_rows(tape.log_softmax_rows(logits), cur);
    }
    return tape.reshape(tape.stack_blocks(picks), {b, t_len});
  }

  // -(1/B) sum_i (1/T_i) sum_t w[i,t] log p(y_t); w = 1 recovers the
  // per-sentence-normalized cross entropy.
  Var weighted_nll_graph(Tape& tape, const Batch& batch, const Tensor& weights) const {
    const std::size_t b = batch.size, t_len = batch.t;
    Tensor w({b, t_len});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t t = 0; t < t_len; ++t)
        w[i * t_len + t] = weights[i * t_len + t] * batch.tgt_mask(i, t) /
                           (static_cast<double>(batch.target_len[i]) * static_cast<double>(b));
    Var lp = logprob_matrix_graph(tape, batch);
    return tape.scale(tape.sum_all(tape.mul(lp, tape.constant(std::move(w)))), -1.0);
  }

  Var mle_loss_graph(Tape& tape, const Batch& batch) const {
    return weighted_nll_graph(tape, batch, Tensor::full({batch.size, batch.t}, 1.0));
  }

  // One MLE update; returns the pre-step loss.
  double mle_step(const Batch& batch) {
    Tape tape;
    Var loss = mle_loss_graph(tape, batch);
    const double value = tape.value(loss).item();
    tape.backward(loss);
    opt_.step(store_);
    return value;
  }

 private:
  Var gru_graph(Tape& t, Var h, Var x, Var wx, Var wh, Var b, std::size_t hid) const {
    Var gx = t.add_rowvec(t.matmul(x, wx), b);
    Var gh = t.matmul(h, wh);
    Var z = t.sigmoid(t.add(t.slice_cols(gx, 0, hid), t.slice_cols(gh, 0, hid)));
    Var r = t.sigmoid(t.add(t.slice_cols(gx, hid, 2 * hid), t.slice_cols(gh, hid, 2 * hid)));
    Var cand = t.tanh(t.add(t.slice_cols(gx, 2 * hid, 3 * hid),
                            t.mul(r, t.slice_cols(gh, 2 * hid, 3 * hid))));
    return t.add(h, t.mul(z, t.sub(cand, h)));
  }

  std::vector<int> sample_from(const EncodedSource& enc, const std::vector<int>& prefix,
                               SampleMode mode, std::size_t max_len, Rng& rng) const {
    DecodeState st = initial_state(enc);
    std::vector<int> out;
    for (int tok : prefix) {
      StepResult step = decode_step(st, enc);
      st = DecodeState{std::move(step.next_hidden), tok, st.step + 1};
      out.push_back(tok);
    }
    while (out.size() < max_len) {
      StepResult step = decode_step(st, enc);
      const int tok = mode == SampleMode::Greedy ? pick_greedy(step.probs)
                                                 : pick_multinomial(step.probs, rng);
      out.push_back(tok);
      st = DecodeState{std::move(step.next_hidden), tok, st.step + 1};
      if (tok == kEos) break;
    }
    return out;
  }

  // Batched multinomial/greedy continuation of many rows. rngs == nullptr
  // means greedy everywhere. Returns only the newly sampled tails.
  std::vector<std::vector<int>> sample_batch(const std::vector<const EncodedSource*>& encs,
                                             const std::vector<DecodeState>& starts,
                                             std::vector<Rng>* rngs, std::size_t max_len) const {
    const std::size_t rcount = encs.size();
    const std::size_t k = cfg_.embed_dim, h = cfg_.hidden_dim;
    const auto vsz = static_cast<std::size_t>(cfg_.vocab_size);
    std::size_t m = 0;
    for (const auto* e : encs) m = std::max(m, e->len);

    Tensor ann_flat({rcount * m, 2 * h});
    Tensor keys_flat({rcount * m, h});
    Tensor mask_bias({rcount, m});
    for (std::size_t i = 0; i < rcount; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        if (j < encs[i]->len) {
          std::copy_n(encs[i]->annotations.data() + j * 2 * h, 2 * h,
                      ann_flat.data() + (i * m + j) * 2 * h);
          std::copy_n(encs[i]->keys.data() + j * h, h, keys_flat.data() + (i * m + j) * h);
        } else {
          mask_bias[i * m + j] = kMaskLogit;
        }
      }

    Tensor hidden({rcount, h});
    std::vector<int> prev(rcount);
    std::vector<std::size_t> emitted(rcount, 0);
    std::vector<char> alive(rcount, 1);
    std::vector<std::vector<int>> tails(rcount);
    for (std::size_t i = 0; i < rcount; ++i) {
      std::copy_n(starts[i].hidden.data(), h, hidden.data() + i * h);
      prev[i] = starts[i].prev_token;
      emitted[i] = starts[i].step;
      if (emitted[i] >= max_len || prev[i] == kEos) alive[i] = 0;
    }

    const Tensor& temb = store_.value("tgt_emb");
    const Tensor& ws = store_.value("attn.Ws");
    const Tensor& attv = store_.value("attn.v");
    const Tensor& dwx = store_.value("dec.Wx");
    const Tensor& dwh = store_.value("dec.Wh");
    const Tensor& db = store_.value("dec.b");
    const Tensor& ow = store_.value("out.W");
    const Tensor& ob = store_.value("out.b");

    while (std::any_of(alive.begin(), alive.end(), [](char a) { return a != 0; })) {
      Tensor embp({rcount, k});
      for (std::size_t i = 0; i < rcount; ++i)
        std::copy_n(temb.data() + static_cast<std::size_t>(prev[i]) * k, k, embp.data() + i * k);
      Tensor q = matmul(hidden, ws);
      Tensor scores({rcount, m});
      for (std::size_t i = 0; i < rcount; ++i) {
        const double* qr = q.data() + i * h;
        for (std::size_t j = 0; j < m; ++j) {
          const double* kr = keys_flat.data() + (i * m + j) * h;
          double sum = 0.0;
          for (std::size_t c = 0; c < h; ++c) sum += std::tanh(kr[c] + qr[c]) * attv[c];
          scores[i * m + j] = sum + mask_bias[i * m + j];
        }
      }
      detail::softmax_rows_inplace(scores);
      Tensor ctx({rcount, 2 * h});
      for (std::size_t i = 0; i < rcount; ++i) {
        double* crow = ctx.data() + i * 2 * h;
        for (std::size_t j = 0; j < m; ++j) {
          const double w = scores[i * m + j];
          if (w == 0.0) continue;
          const double* arow = ann_flat.data() + (i * m + j) * 2 * h;
          for (std::size_t c = 0; c < 2 * h; ++c) crow[c] += w * arow[c];
        }
      }
      Tensor x({rcount, k + 2 * h});
      for (std::size_t i = 0; i < rcount; ++i) {
        std::copy_n(embp.data() + i * k, k, x.data() + i * (k + 2 * h));
        std::copy_n(ctx.data() + i * 2 * h, 2 * h, x.data() + i * (k + 2 * h) + k);
      }
      Tensor hnew = detail::gru_rows(hidden, x, dwx, dwh, db);
      Tensor z({rcount, h + k + 2 * h});
      for (std::size_t i = 0; i < rcount; ++i) {
        std::copy_n(hnew.data() + i * h, h, z.data() + i * (h + k + 2 * h));
        std::copy_n(embp.data() + i * k, k, z.data() + i * (h + k + 2 * h) + h);
        std::copy_n(ctx.data() + i * 2 * h, 2 * h, z.data() + i * (h + k + 2 * h) + h + k);
      }
      Tensor logits = matmul(z, ow);
      detail::add_rowvec_inplace(logits, ob);
      for (std::size_t i = 0; i < rcount; ++i) logits[i * vsz + kPad] += kMaskLogit;
      detail::softmax_rows_inplace(logits);

      for (std::size_t i = 0; i < rcount; ++i) {
        if (!alive[i]) continue;
        std::vector<double> probs(logits.data() + i * vsz, logits.data() + (i + 1) * vsz);
        const int tok = rngs == nullptr ? pick_greedy(probs)
                                        : pick_multinomial(probs, (*rngs)[i]);
        tails[i].push_back(tok);
        prev[i] = tok;
        std::copy_n(hnew.data() + i * h, h, hidden.data() + i * h);
        ++emitted[i];
        if (tok == kEos || emitted[i] >= max_len) alive[i] = 0;
      }
    }
    return tails;
  }

  GeneratorConfig cfg_;
  ParamStore store_;
  Optimizer opt_;
};

static_assert(SequencePolicy<GruAttentionGenerator>);

}  // namespace brcsgan
