#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "brcsgan/rng.hpp"
#include "brcsgan/vocab.hpp"

namespace brcsgan {

// One integer-encoded parallel sentence. The source carries no terminator;
// the target of a corpus pair always ends in <eos>. Machine-generated
// targets may end at the length cap without <eos>.
struct SentencePair {
  std::vector<int> source;
  std::vector<int> target;

  bool operator==(const SentencePair& o) const = default;
};

enum class TaskKind { Copy, Reverse, CipherReorder };

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Copy: return "copy";
    case TaskKind::Reverse: return "reverse";
    case TaskKind::CipherReorder: return "cipher-reorder";
  }
  throw std::logic_error("bad TaskKind");
}

inline TaskKind task_kind_from(const std::string& s) {
  if (s == "copy") return TaskKind::Copy;
  if (s == "reverse") return TaskKind::Reverse;
  if (s == "cipher-reorder") return TaskKind::CipherReorder;
  throw std::invalid_argument("unknown task kind: " + s);
}

struct SyntheticTaskSpec {
  TaskKind kind = TaskKind::Copy;
  int vocab_size = 20;
  int len_min = 2;
  int len_max = 8;
  int train_size = 1000;
  int dev_size = 200;
  int test_size = 200;
  std::uint64_t seed = 1;
};

struct GeneratedCorpus {
  std::vector<SentencePair> train, dev, test;
  Vocab vocab;
};

// The cipher permutation over non-reserved ids, derived from the task seed.
inline std::vector<int> cipher_permutation(int vocab_size, std::uint64_t seed) {
  std::vector<int> perm;
  for (int i = kNumReserved; i < vocab_size; ++i) perm.push_back(i);
  Rng rng = derive_rng(seed, {stream::kCorpus, 0xC1B3});
  rng.shuffle(perm);
  return perm;
}

// Deterministic source -> target mapping for each task. cipher-reorder
// substitutes every token through a fixed permutation and then swaps
// adjacent positions, so the alignment is non-monotone.
inline std::vector<int> task_target(const SyntheticTaskSpec& spec,
                                    const std::vector<int>& source,
                                    const std::vector<int>& perm) {
  std::vector<int> t;
  switch (spec.kind) {
    case TaskKind::Copy:
      t = source;
      break;
    case TaskKind::Reverse:
      t.assign(source.rbegin(), source.rend());
      break;
    case TaskKind::CipherReorder: {
      t.reserve(source.size());
      for (int id : source) t.push_back(perm[static_cast<std::size_t>(id - kNumReserved)]);
      for (std::size_t i = 0; i + 1 < t.size(); i += 2) std::swap(t[i], t[i + 1]);
      break;
    }
  }
  t.push_back(kEos);
  return t;
}

// Generates disjoint train/dev/test splits; a pure function of the spec.
inline GeneratedCorpus generate_corpus(const SyntheticTaskSpec& spec) {
  if (spec.vocab_size <= kNumReserved)
    throw std::invalid_argument("generate_corpus: vocab_size must exceed the reserved tokens");
  if (spec.len_min < 1 || spec.len_min > spec.len_max)
    throw std::invalid_argument("generate_corpus: bad length range");
  if (spec.train_size <= 0 || spec.dev_size <= 0 || spec.test_size <= 0)
    throw std::invalid_argument("generate_corpus: split sizes must be positive");

  GeneratedCorpus out;
  for (int i = kNumReserved; i < spec.vocab_size; ++i) out.vocab.add("w" + std::to_string(i));

  const std::vector<int> perm = cipher_permutation(spec.vocab_size, spec.seed);
  Rng rng = derive_rng(spec.seed, {stream::kCorpus, 1});
  std::set<std::vector<int>> seen;

  auto draw_unique_source = [&]() {
    const long total = static_cast<long>(spec.train_size) + spec.dev_size + spec.test_size;
    for (long attempt = 0; attempt < 200 * total + 1000; ++attempt) {
      const int len = spec.len_min + static_cast<int>(rng.below(
                          static_cast<std::uint64_t>(spec.len_max - spec.len_min + 1)));
      std::vector<int> src(static_cast<std::size_t>(len));
      for (int& id : src)
        id = kNumReserved + static_cast<int>(rng.below(
                 static_cast<std::uint64_t>(spec.vocab_size - kNumReserved)));
      if (seen.insert(src).second) return src;
    }
    throw std::runtime_error("generate_corpus: task space too small for disjoint splits");
  };

  auto fill = [&](std::vector<SentencePair>& split, int n) {
    split.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      SentencePair p;
      p.source = draw_unique_source();
      p.target = task_target(spec, p.source, perm);
      split.push_back(std::move(p));
    }
  };
  fill(out.train, spec.train_size);
  fill(out.dev, spec.dev_size);
  fill(out.test, spec.test_size);
  return out;
}

struct PaddedPair {
  std::vector<int> source, target;
  std::size_t source_len = 0, target_len = 0;
};

// Pads both sides with <pad> up to exactly T.
inline PaddedPair pad_to_fixed(const SentencePair& pair, std::size_t t) {
  if (pair.source.size() > t || pair.target.size() > t)
    throw std::invalid_argument("pad_to_fixed: sentence longer than T");
  PaddedPair p;
  p.source = pair.source;
  p.target = pair.target;
  p.source_len = pair.source.size();
  p.target_len = pair.target.size();
  p.source.resize(t, kPad);
  p.target.resize(t, kPad);
  return p;
}

// A fixed-length padded batch. Row-major id matrices of batch_size x T with
// per-sentence true lengths; mask(i, t) is 1 on real tokens and 0 on <pad>.
struct Batch {
  std::size_t size = 0;
  std::size_t t = 0;
  std::vector<int> source;  // size x t
  std::vector<int> target;  // size x t
  std::vector<std::size_t> source_len;
  std::vector<std::size_t> target_len;

  int src(std::size_t i, std::size_t j) const { return source[i * t + j]; }
  int tgt(std::size_t i, std::size_t j) const { return target[i * t + j]; }
  double src_mask(std::size_t i, std::size_t j) const { return j < source_len[i] ? 1.0 : 0.0; }
  double tgt_mask(std::size_t i, std::size_t j) const { return j < target_len[i] ? 1.0 : 0.0; }
};

inline Batch make_batch(const std::vector<const SentencePair*>& pairs, std::size_t t) {
  Batch b;
  b.size = pairs.size();
  b.t = t;
  b.source.resize(b.size * t, kPad);
  b.target.resize(b.size * t, kPad);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const PaddedPair p = pad_to_fixed(*pairs[i], t);
    std::copy(p.source.begin(), p.source.end(), b.source.begin() + static_cast<long>(i * t));
    std::copy(p.target.begin(), p.target.end(), b.target.begin() + static_cast<long>(i * t));
    b.source_len.push_back(p.source_len);
    b.target_len.push_back(p.target_len);
  }
  return b;
}

// One epoch of batches: every pair exactly once, final partial batch kept,
// order deterministic under the shuffle seed.
inline std::vector<Batch> make_batches(const std::vector<SentencePair>& pairs,
                                       std::size_t batch_size, std::size_t t,
                                       std::uint64_t shuffle_seed) {
  if (pairs.empty()) throw std::invalid_argument("make_batches: empty pair list");
  if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = derive_rng(shuffle_seed, {stream::kShuffle});
  rng.shuffle(order);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    std::vector<const SentencePair*> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(&pairs[order[i]]);
    batches.push_back(make_batch(chunk, t));
  }
  return batches;
}

inline bool valid_utf8(const std::string& s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t extra;
    if (c < 0x80) extra = 0;
    else if ((c >> 5) == 0x6) extra = 1;
    else if ((c >> 4) == 0xE) extra = 2;
    else if ((c >> 3) == 0x1E) extra = 3;
    else return false;
    if (i + extra >= s.size()) {
      if (extra > 0) return false;
    }
    for (std::size_t j = 1; j <= extra; ++j)
      if ((static_cast<unsigned char>(s[i + j]) >> 6) != 0x2) return false;
    i += extra + 1;
  }
  return true;
}

inline std::vector<std::string> split_tokens(const std::string& line) {
  std::vector<std::string> toks;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) toks.push_back(tok);
  return toks;
}

// Line-aligned parallel text. Files never contain reserved tokens: the
// target <eos> is implicit in the file format and re-appended on read.
inline std::vector<SentencePair> read_parallel(const std::string& src_path,
                                               const std::string& tgt_path,
                                               const Vocab& vocab) {
  std::ifstream src(src_path), tgt(tgt_path);
  if (!src) throw std::runtime_error("read_parallel: cannot open " + src_path);
  if (!tgt) throw std::runtime_error("read_parallel: cannot open " + tgt_path);
  std::vector<SentencePair> pairs;
  std::string sline, tline;
  while (true) {
    const bool got_s = static_cast<bool>(std::getline(src, sline));
    const bool got_t = static_cast<bool>(std::getline(tgt, tline));
    if (got_s != got_t)
      throw std::runtime_error("read_parallel: line count mismatch between " + src_path +
                               " and " + tgt_path);
    if (!got_s) break;
    if (!valid_utf8(sline) || !valid_utf8(tline))
      throw std::runtime_error("read_parallel: malformed UTF-8");
    SentencePair p;
    for (const auto& tok : split_tokens(sline)) p.source.push_back(vocab.id_of(tok));
    for (const auto& tok : split_tokens(tline)) p.target.push_back(vocab.id_of(tok));
    p.target.push_back(kEos);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

inline void write_parallel(const std::vector<SentencePair>& pairs, const Vocab& vocab,
                           const std::string& src_path, const std::string& tgt_path) {
  std::ofstream src(src_path), tgt(tgt_path);
  if (!src) throw std::runtime_error("write_parallel: cannot write " + src_path);
  if (!tgt) throw std::runtime_error("write_parallel: cannot write " + tgt_path);
  auto write_line = [&](std::ofstream& os, const std::vector<int>& ids, bool strip_eos) {
    const std::size_t n = strip_eos && !ids.empty() && ids.back() == kEos ? ids.size() - 1 : ids.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (i) os << ' ';
      os << vocab.token_of(ids[i]);
    }
    os << '\n';
  };
  for (const auto& p : pairs) {
    write_line(src, p.source, false);
    write_line(tgt, p.target, true);
  }
}

}  // namespace brcsgan
