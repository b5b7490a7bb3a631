#include "nat/synth.hpp"

#include <algorithm>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

namespace nat::synth {

namespace {

// Undirected adjacency of the edges emitted so far.
class Growth {
 public:
  explicit Growth(std::size_t nodes) : nbrs_(nodes + 1), sets_(nodes + 1) {}

  void add(NodeId a, NodeId b) {
    if (sets_[a].insert(b).second) nbrs_[a].push_back(b);
    if (sets_[b].insert(a).second) nbrs_[b].push_back(a);
  }

  bool share_neighbor(NodeId a, NodeId b) const {
    const auto& small = sets_[a].size() < sets_[b].size() ? sets_[a] : sets_[b];
    const auto& large = sets_[a].size() < sets_[b].size() ? sets_[b] : sets_[a];
    return std::any_of(small.begin(), small.end(), [&](NodeId x) { return large.count(x) > 0; });
  }

  const std::vector<NodeId>& neighbors(NodeId a) const { return nbrs_[a]; }

 private:
  std::vector<std::vector<NodeId>> nbrs_;
  std::vector<std::unordered_set<NodeId>> sets_;
};

// A closure picks an eligible edge (a, v) and another neighbor u of a; a
// distractor is a random pair with no common neighbor.
struct Drawer {
  std::mt19937_64 rng;
  std::size_t window;
  std::size_t min_age;

  std::span<const std::pair<NodeId, NodeId>> eligible(const std::vector<std::pair<NodeId, NodeId>>& emitted) const {
    const std::size_t n = emitted.size();
    if (n <= min_age) return {};
    const std::size_t end = n - min_age;
    const std::size_t begin = n > window ? n - window : 0;
    return std::span(emitted).subspan(begin, end - begin);
  }

  bool closure(const Growth& g, std::span<const std::pair<NodeId, NodeId>> recent, NodeId& u, NodeId& v) {
    if (recent.empty()) return false;
    std::uniform_int_distribution<std::size_t> pick_edge(0, recent.size() - 1);
    for (int attempt = 0; attempt < 16; ++attempt) {
      auto [a, b] = recent[pick_edge(rng)];
      if (std::bernoulli_distribution(0.5)(rng)) std::swap(a, b);
      const auto& around = g.neighbors(a);
      std::uniform_int_distribution<std::size_t> pick(0, around.size() - 1);
      const NodeId c = around[pick(rng)];
      if (c == b) continue;
      u = c;
      v = b;
      if (std::bernoulli_distribution(0.5)(rng)) std::swap(u, v);
      return true;
    }
    return false;
  }

  void distractor(const Growth& g, NodeId lo, NodeId hi, NodeId& u, NodeId& v) {
    std::uniform_int_distribution<NodeId> pick(lo, hi);
    for (int attempt = 0; attempt < 32; ++attempt) {
      u = pick(rng);
      v = pick(rng);
      if (u != v && !g.share_neighbor(u, v)) return;
    }
    do {
      v = pick(rng);
    } while (v == u);
  }
};

}  // namespace

graph::Dataset triadic(const TriadicOptions& opts) {
  const std::size_t n = opts.nodes ? opts.nodes : std::max<std::size_t>(10, opts.events / 5);
  if (n < 3) throw InputError("triadic stream needs at least 3 nodes");
  Growth g(n);
  if (opts.window <= opts.min_age) throw InputError("closure window must exceed min_age");
  Drawer draw{std::mt19937_64(opts.seed), opts.window, opts.min_age};
  std::vector<std::pair<NodeId, NodeId>> emitted;
  std::vector<graph::TemporalEdge> edges;
  edges.reserve(opts.events);
  for (std::size_t k = 0; k < opts.events; ++k) {
    NodeId u = 0, v = 0;
    const bool close = std::bernoulli_distribution(opts.closure_rate)(draw.rng) &&
                       draw.closure(g, draw.eligible(emitted), u, v);
    if (!close) draw.distractor(g, 1, static_cast<NodeId>(n), u, v);
    g.add(u, v);
    emitted.emplace_back(u, v);
    edges.push_back({u, v, static_cast<double>(k), {}});
  }
  return graph::make_dataset(std::move(edges), n);
}

graph::Dataset barbell(const BarbellOptions& opts) {
  const std::size_t m = opts.community ? opts.community : std::max<std::size_t>(5, opts.events / 10);
  if (m < 3) throw InputError("barbell communities need at least 3 nodes");
  const auto mirror = [m](NodeId x) { return static_cast<NodeId>(x + m); };
  Growth g(m);
  if (opts.window <= opts.min_age) throw InputError("closure window must exceed min_age");
  // Each draw emits two events, so ages are counted in draws.
  Drawer draw{std::mt19937_64(opts.seed), opts.window / 2, opts.min_age / 2};
  std::vector<std::pair<NodeId, NodeId>> emitted;
  std::vector<graph::TemporalEdge> edges;
  edges.push_back({1, mirror(1), 0.0, {}});
  for (std::size_t k = 1; edges.size() + 2 <= opts.events; ++k) {
    NodeId u = 0, v = 0;
    const bool close = std::bernoulli_distribution(opts.closure_rate)(draw.rng) &&
                       draw.closure(g, draw.eligible(emitted), u, v);
    if (!close) draw.distractor(g, 1, static_cast<NodeId>(m), u, v);
    g.add(u, v);
    emitted.emplace_back(u, v);
    const auto t = static_cast<double>(k);
    edges.push_back({u, v, t, {}});
    edges.push_back({mirror(u), mirror(v), t, {}});
  }
  return graph::make_dataset(std::move(edges), 2 * m);
}

graph::Dataset generate(std::string_view kind, std::size_t events, std::uint64_t seed) {
  if (events < 10) throw InputError("synthetic streams need at least 10 events");
  if (kind == "triadic") return triadic({.events = events, .seed = seed});
  if (kind == "barbell") return barbell({.events = events, .seed = seed});
  throw InputError("unknown synthetic stream kind '" + std::string(kind) + "'");
}

}  // namespace nat::synth
