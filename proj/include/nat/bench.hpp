#pragma once

// Throughput measurement of the cache kernels, parallel against serial.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nat/model.hpp"
#include "nat/ncache.hpp"
#include "nat/temporal_graph.hpp"

namespace nat::bench {

struct ThroughputRecord {
  std::string kernel;  // apply_batch or build_joint_batch
  std::string impl;    // parallel or serial
  std::size_t batch = 0;
  std::size_t items = 0;  // events or links processed
  double seconds = 0.0;
  double per_second = 0.0;
};

/// Streams `events` through apply_batch and then scores every event as a
/// link with build_joint_batch, in chunks of each batch size, once per
/// implementation. Each timing is the best of `repeats` runs.
std::vector<ThroughputRecord> measure(std::span<const graph::TemporalEdge> events,
                                      const cache::CacheConfig& cfg, const neural::Model& model,
                                      std::span<const std::size_t> batch_sizes, std::size_t repeats = 3);

/// Scalars one node occupies in the cache store, counted from the
/// allocated arrays of a one-node store.
std::size_t scalars_per_node(const cache::CacheConfig& cfg);

}  // namespace nat::bench
