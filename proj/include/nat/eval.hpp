#pragma once

// Ranking metrics and the streaming evaluation protocols.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nat/ncache.hpp"
#include "nat/temporal_graph.hpp"

namespace nat::neural {
class Model;
}

namespace nat::eval {

/// Mean precision at the rank of each positive, ranking by descending score.
/// Equal scores keep their input order. Throws InputError without positives.
double average_precision(std::span<const double> scores, std::span<const int> labels);

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Throws InputError unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

enum class Split { val, test };
enum class Mode { transductive, inductive };

const char* to_string(Split s);
const char* to_string(Mode m);

struct EvalReport {
  double ap = 0.0;
  double auc = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  Split split = Split::val;
  Mode mode = Mode::transductive;
  double seconds = 0.0;
  /// Per-link scores in stream order: positive i, then its negative.
  std::vector<double> scores;
  std::vector<int> labels;
};

struct StreamOptions {
  std::size_t batch_size = 32;
  bool commit_updates = true;
  Split split = Split::val;
  Mode mode = Mode::transductive;
};

/// Each batch scores its positives and their negatives against the current
/// store, then commits the positives' cache updates. With commit_updates
/// false the store is restored afterwards. Throws InputError on an empty
/// stream or a negatives count that differs from the edge count.
EvalReport evaluate_stream(cache::NCacheStore& store, const neural::Model& model,
                           std::span<const graph::TemporalEdge> edges, std::span<const NodeId> negatives,
                           const StreamOptions& opts);

/// Same, with one uniform negative per edge drawn from `universe` under `seed`.
EvalReport evaluate_stream(cache::NCacheStore& store, const neural::Model& model,
                           std::span<const graph::TemporalEdge> edges, std::span<const NodeId> universe,
                           std::uint64_t seed, const StreamOptions& opts);

/// Seed for the negatives of one split, derived from a run seed.
std::uint64_t split_seed(std::uint64_t seed, Split split);

/// Inductive protocol on the test segment. With `replay` the caches are
/// rebuilt from the full train and validation stream with every node
/// visible; without it only the unmasked edges are replayed, as seen during
/// training. Evaluates the test edges with a masked endpoint. Throws
/// InputError when there are none.
EvalReport evaluate_inductive(const graph::Dataset& ds, const graph::SplitPlan& plan, const neural::Model& model,
                              const cache::CacheConfig& cache_cfg, std::uint64_t seed, bool replay = true,
                              std::size_t batch_size = 32);

}  // namespace nat::eval
