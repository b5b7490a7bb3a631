#pragma once

// Synthetic edge streams where structure, not node identity, predicts links.

#include <cstddef>
#include <cstdint>
#include <string_view>

#include "nat/temporal_graph.hpp"

namespace nat::synth {

struct TriadicOptions {
  std::size_t events = 2000;
  /// 0 picks max(10, events / 5).
  std::size_t nodes = 0;
  /// Share of events that close a wedge; the rest are random pairs that
  /// share no neighbor at emission time.
  double closure_rate = 0.8;
  /// Closures start from an edge emitted between `window` and `min_age`
  /// events ago, so the wedge is already visible to batched cache updates.
  std::size_t window = 500;
  std::size_t min_age = 100;
  std::uint64_t seed = 0;
};

/// Timestamps are the event indices 0, 1, 2, ...
graph::Dataset triadic(const TriadicOptions& opts);

struct BarbellOptions {
  std::size_t events = 2000;
  /// Nodes per community; 0 picks max(5, events / 10).
  std::size_t community = 0;
  double closure_rate = 0.8;
  std::size_t window = 500;
  std::size_t min_age = 100;
  std::uint64_t seed = 0;
};

/// Two communities 1..m and m+1..2m joined by the bridge (1, m+1) at t=0.
/// Every later event inside one community is emitted together with its
/// mirror image (x -> x + m) at the same timestamp, so mirrored nodes stay
/// structurally indistinguishable. An even `events` yields one event fewer.
graph::Dataset barbell(const BarbellOptions& opts);

/// "triadic" or "barbell" with `events` events.
graph::Dataset generate(std::string_view kind, std::size_t events, std::uint64_t seed);

}  // namespace nat::synth
