#pragma once

// Temporal edge streams: loading, chronological splits, inductive node
// masking, negative sampling and a brute-force k-hop neighborhood oracle.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <set>
#include <span>
#include <vector>

#include "nat/types.hpp"

namespace nat::graph {

/// One timestamped interaction. `feat` has the dataset-wide width d_e.
struct TemporalEdge {
  NodeId src = kEmpty;
  NodeId dst = kEmpty;
  double t = 0.0;
  std::vector<double> feat;

  friend bool operator==(const TemporalEdge&, const TemporalEdge&) = default;
};

/// A chronologically ordered temporal multigraph with ids remapped to
/// 1..num_nodes.
struct Dataset {
  std::vector<TemporalEdge> edges;
  std::size_t num_nodes = 0;
  std::size_t d_e = 0;
  std::size_t d_n = 0;
  /// (num_nodes + 1) x d_n row-major, row 0 unused. Empty when d_n == 0.
  std::vector<double> node_feats;
  bool bipartite = false;
  /// For bipartite data users occupy 1..num_users and items the rest.
  std::size_t num_users = 0;
  /// Label from the source file for every remapped id; index 0 unused.
  std::vector<std::uint64_t> original_ids;

  /// Throws InputError if ordering, id range or feature width is violated.
  void validate() const;

  /// Sorted unique destination ids over the whole stream.
  std::vector<NodeId> destination_universe() const;
};

/// Builds a dataset from already-remapped edges. Edges are stably sorted by
/// time; num_nodes is the largest id seen unless `num_nodes` is larger.
Dataset make_dataset(std::vector<TemporalEdge> edges, std::size_t num_nodes = 0);

Dataset load_jodie_csv(const std::filesystem::path& path);
Dataset parse_jodie_csv(std::istream& in);

/// Accepts `src dst t` (whitespace or comma separated) and the four-column
/// `src dst weight t` layout; lines starting with '#' or '%' are comments.
Dataset load_edge_list(const std::filesystem::path& path);
Dataset parse_edge_list(std::istream& in);

/// Writes `src dst t` lines using the original node labels.
void write_edge_list(const Dataset& ds, std::ostream& out);
void save_edge_list(const Dataset& ds, const std::filesystem::path& path);

struct SplitPlan {
  std::size_t num_edges = 0;
  std::size_t train_end = 0;
  std::size_t val_end = 0;
  /// Sorted. Empty for transductive runs.
  std::vector<NodeId> masked_nodes;
  std::uint64_t seed = 0;

  bool is_masked(NodeId n) const;
  friend bool operator==(const SplitPlan&, const SplitPlan&) = default;
};

SplitPlan chronological_split(const Dataset& ds, double train_frac, double val_frac);

/// Masks each node appearing in validation or test edges independently with
/// probability `p`.
SplitPlan inductive_mask(const Dataset& ds, SplitPlan plan, double p, std::uint64_t seed);

std::span<const TemporalEdge> train_segment(const Dataset& ds, const SplitPlan& plan);
std::span<const TemporalEdge> val_segment(const Dataset& ds, const SplitPlan& plan);
std::span<const TemporalEdge> test_segment(const Dataset& ds, const SplitPlan& plan);

/// Edges of `segment` with no masked endpoint.
std::vector<TemporalEdge> unmasked_edges(std::span<const TemporalEdge> segment,
                                         const SplitPlan& plan);
/// Edges of `segment` with at least one masked endpoint.
std::vector<TemporalEdge> masked_edges(std::span<const TemporalEdge> segment,
                                       const SplitPlan& plan);

void write_split_plan(const SplitPlan& plan, std::ostream& out);
SplitPlan read_split_plan(std::istream& in);

/// One negative destination per edge in `batch`, uniform over `universe`.
std::vector<NodeId> sample_negatives(std::span<const TemporalEdge> batch,
                                     std::span<const NodeId> universe,
                                     std::uint64_t seed);

/// Exact k-hop neighborhood of `v`: every node reachable by a walk of exactly
/// `k` steps in the static graph of edges strictly before `t`. Test oracle.
std::set<NodeId> khop_neighborhood(std::span<const TemporalEdge> edges, NodeId v,
                                   double t, int k);

}  // namespace nat::graph
