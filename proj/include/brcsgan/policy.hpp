#pragma once

#include <concepts>
#include <cstdint>
#include <vector>

#include "brcsgan/corpus.hpp"
#include "brcsgan/param_store.hpp"
#include "brcsgan/rng.hpp"
#include "brcsgan/tape.hpp"

namespace brcsgan {

enum class SampleMode { Greedy, Multinomial };

// The generator-side surface the reward and training machinery relies on.
// Nothing downstream assumes a particular architecture; any policy that can
// sample, continue a prefix, and expose a forced log-probability graph plugs
// in here.
template <class P>
concept SequencePolicy = requires(P& p, const P& cp, const std::vector<int>& ids, Rng& rng,
                                  Tape& tape, const Batch& batch, std::size_t n,
                                  std::uint64_t seed) {
  { cp.vocab_size() } -> std::convertible_to<int>;
  { cp.t_max() } -> std::convertible_to<std::size_t>;
  { cp.sample_sequence(ids, SampleMode::Greedy, n, rng) } -> std::convertible_to<std::vector<int>>;
  { cp.continue_prefix(ids, ids, rng) } -> std::convertible_to<std::vector<int>>;
  {
    cp.all_prefix_continuations(ids, ids, n, seed)
  } -> std::convertible_to<std::vector<std::vector<std::vector<int>>>>;
  { cp.sequence_log_prob(ids, ids) } -> std::convertible_to<double>;
  { cp.logprob_matrix_graph(tape, batch) } -> std::convertible_to<Var>;
  { p.params() } -> std::convertible_to<ParamStore&>;
  { p.optimizer() } -> std::convertible_to<Optimizer&>;
};

}  // namespace brcsgan
