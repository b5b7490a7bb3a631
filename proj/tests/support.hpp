#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "nat/model.hpp"
#include "nat/ncache.hpp"
#include "nat/temporal_graph.hpp"

namespace nat::fixtures {

// Cheap deterministic encoder so cache tests do not depend on the model.
class MixEncoder : public cache::CacheEncoder {
 public:
  void self_step(const cache::StepInput& in, std::span<double> out) const override {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = 0.5 * in.prev[i] + 0.25 * in.partner_self[i % in.partner_self.size()] + 0.1 * std::cos(in.t + i);
    }
  }
  void edge_step(const cache::StepInput& in, std::span<double> out) const override {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = 0.7 * in.prev[i] + 0.2 * in.partner_self[i % in.partner_self.size()] + 0.05 * std::sin(in.t * (i + 1));
    }
  }
};

inline std::vector<graph::TemporalEdge> random_stream(std::size_t nodes, std::size_t events, std::uint64_t seed,
                                                      std::size_t d_e = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<NodeId> pick(1, static_cast<NodeId>(nodes));
  std::normal_distribution<double> feat;
  std::vector<graph::TemporalEdge> out;
  for (std::size_t i = 0; i < events; ++i) {
    graph::TemporalEdge e{pick(rng), pick(rng), static_cast<double>(i), {}};
    for (std::size_t k = 0; k < d_e; ++k) e.feat.push_back(feat(rng));
    out.push_back(std::move(e));
  }
  return out;
}

inline cache::CacheConfig small_cache(std::size_t nodes, std::size_t M1, std::size_t M2, std::uint64_t seed = 1) {
  cache::CacheConfig c;
  c.num_nodes = nodes;
  c.M1 = M1;
  c.M2 = M2;
  c.F = 3;
  c.d0 = 5;
  c.seed = seed;
  return c;
}

// The toy history: u-a and v-b at t1, a-v at t2, and the mirror component
// d-c and w-e at t1, c-w at t2 (u->d, a->c, v->w, b->e) giving w the same
// local structure as v.
struct Toy {
  static constexpr NodeId u = 1, a = 2, v = 3, b = 4, w = 5, c = 6, d = 7, e = 8;
  static std::vector<graph::TemporalEdge> history() {
    return {{u, a, 1.0, {}}, {v, b, 1.0, {}}, {d, c, 1.0, {}}, {w, e, 1.0, {}},
            {a, v, 2.0, {}}, {c, w, 2.0, {}}};
  }
};

// Precision at each positive's rank; ties keep input order. Terms are summed
// in rank order so the result is comparable bit for bit.
inline double brute_ap(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<std::pair<std::size_t, double>> terms;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    std::size_t rank = 1, hits = 1;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (j == i) continue;
      const bool before = s[j] > s[i] || (s[j] == s[i] && j < i);
      rank += before;
      hits += before && y[j];
    }
    terms.emplace_back(rank, static_cast<double>(hits) / static_cast<double>(rank));
  }
  std::sort(terms.begin(), terms.end());
  double total = 0.0;
  for (const auto& [rank, precision] : terms) total += precision;
  return total / static_cast<double>(terms.size());
}

inline double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!y[i] || y[j]) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

}  // namespace nat::fixtures
