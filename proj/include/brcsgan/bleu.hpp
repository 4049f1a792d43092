#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <vector>

#include "brcsgan/vocab.hpp"

namespace brcsgan {

// <pad> and <eos> never count as content tokens.
inline std::vector<int> strip_special(const std::vector<int>& ids) {
  std::vector<int> out;
  out.reserve(ids.size());
  for (int id : ids)
    if (id != kPad && id != kEos) out.push_back(id);
  return out;
}

// Clipped n-gram statistics for n = 1..4.
struct NGramCounts {
  std::array<long, 4> candidates{0, 0, 0, 0};
  std::array<long, 4> matches{0, 0, 0, 0};
};

inline NGramCounts ngram_counts(const std::vector<int>& cand, const std::vector<int>& ref) {
  NGramCounts counts;
  for (std::size_t n = 1; n <= 4; ++n) {
    if (cand.size() < n) continue;
    std::map<std::vector<int>, long> cand_grams, ref_grams;
    for (std::size_t i = 0; i + n <= cand.size(); ++i)
      ++cand_grams[std::vector<int>(cand.begin() + static_cast<long>(i),
                                    cand.begin() + static_cast<long>(i + n))];
    for (std::size_t i = 0; i + n <= ref.size(); ++i)
      ++ref_grams[std::vector<int>(ref.begin() + static_cast<long>(i),
                                   ref.begin() + static_cast<long>(i + n))];
    long total = 0, matched = 0;
    for (const auto& [gram, c] : cand_grams) {
      total += c;
      auto it = ref_grams.find(gram);
      if (it != ref_grams.end()) matched += std::min(c, it->second);
    }
    counts.candidates[n - 1] = total;
    counts.matches[n - 1] = matched;
  }
  return counts;
}

// Multiplicative penalty for candidates shorter than the reference.
inline double brevity_penalty(std::size_t cand_len, std::size_t ref_len) {
  if (ref_len == 0) throw std::invalid_argument("brevity_penalty: reference length is zero");
  if (cand_len == 0) return 0.0;
  if (cand_len >= ref_len) return 1.0;
  return std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
}

struct BleuScore {
  double value = 0.0;
  std::array<double, 4> precisions{0.0, 0.0, 0.0, 0.0};
  double bp = 0.0;
};

// Smoothed sentence-level score in [0, 1]: unigram precision unsmoothed,
// add-one smoothing on numerator and denominator for n >= 2, geometric mean
// of the four precisions times the brevity penalty.
inline BleuScore sentence_bleu(const std::vector<int>& candidate,
                               const std::vector<int>& reference) {
  const std::vector<int> ref = strip_special(reference);
  if (ref.empty()) throw std::invalid_argument("sentence_bleu: empty reference");
  const std::vector<int> cand = strip_special(candidate);

  BleuScore score;
  if (cand.empty()) {
    score.precisions = {0.0, 1.0, 1.0, 1.0};
    return score;
  }
  const NGramCounts counts = ngram_counts(cand, ref);
  score.precisions[0] =
      static_cast<double>(counts.matches[0]) / static_cast<double>(counts.candidates[0]);
  for (std::size_t n = 2; n <= 4; ++n)
    score.precisions[n - 1] = static_cast<double>(counts.matches[n - 1] + 1) /
                              static_cast<double>(counts.candidates[n - 1] + 1);
  score.bp = brevity_penalty(cand.size(), ref.size());
  double product = 1.0;
  for (double p : score.precisions) product *= p;
  score.value = score.bp * std::pow(product, 0.25);
  return score;
}

// Standard corpus-level score: precisions pooled over the corpus,
// unsmoothed, with a corpus-level brevity penalty.
inline double corpus_bleu(const std::vector<std::vector<int>>& candidates,
                          const std::vector<std::vector<int>>& references) {
  if (candidates.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
  if (candidates.size() != references.size())
    throw std::invalid_argument("corpus_bleu: candidate/reference count mismatch");
  std::array<long, 4> cand_total{0, 0, 0, 0};
  std::array<long, 4> match_total{0, 0, 0, 0};
  std::size_t cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const std::vector<int> cand = strip_special(candidates[i]);
    const std::vector<int> ref = strip_special(references[i]);
    if (ref.empty()) throw std::invalid_argument("corpus_bleu: empty reference");
    cand_len += cand.size();
    ref_len += ref.size();
    const NGramCounts counts = ngram_counts(cand, ref);
    for (std::size_t n = 0; n < 4; ++n) {
      cand_total[n] += counts.candidates[n];
      match_total[n] += counts.matches[n];
    }
  }
  if (cand_len == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (cand_total[n] == 0 || match_total[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(match_total[n]) / static_cast<double>(cand_total[n]));
  }
  return brevity_penalty(cand_len, ref_len) * std::exp(0.25 * log_sum);
}

}  // namespace brcsgan
