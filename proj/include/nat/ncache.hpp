#pragma once

// Per-node neighborhood caches.
//
// Every node u owns a self representation Z_u^(0) (width d0) and, for hops
// k = 1, 2, a fixed-size dictionary of M_k slots. A neighbor a lives at slot
// (q * a) mod M_k; the slot's key array records which node currently owns
// it. A write that collides with a different resident key replaces it with
// probability alpha, otherwise it is dropped. There is no probing.
//
// Updates are computed as CacheDelta records against a read-only store and
// committed afterwards, so a batch of events reads one consistent snapshot.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nat/temporal_graph.hpp"
#include "nat/types.hpp"

namespace nat::cache {

inline constexpr std::uint64_t kDefaultHashMultiplier = 2654435761ULL;
inline constexpr int kMaxHop = 2;

struct CacheConfig {
  std::size_t num_nodes = 0;
  std::size_t M1 = 32;
  std::size_t M2 = 16;
  std::size_t F = 4;
  std::size_t d0 = 72;
  double alpha = 0.9;
  std::uint64_t q = kDefaultHashMultiplier;
  int K = 2;
  std::uint64_t seed = 0;

  /// Slots at `hop`; hop 0 has the single self entry.
  std::size_t capacity(int hop) const;
  /// Hop k >= 1 is stored iff k <= K and M_k > 0.
  bool hop_active(int hop) const;
  /// d0 + sum over active hops of M_k * (F + 1).
  std::size_t scalars_per_node() const;
  void validate() const;

  friend bool operator==(const CacheConfig&, const CacheConfig&) = default;
};

/// (q * a) mod M. Both factors are below 2^32, so the product fits in 64 bits.
constexpr std::size_t hash_slot(NodeId a, std::size_t M, std::uint64_t q = kDefaultHashMultiplier) {
  return static_cast<std::size_t>((q * static_cast<std::uint64_t>(a)) % M);
}

bool is_prime(std::uint64_t n);

/// Counter-based uniform draws keyed by (seed, event, node, hop, key). No
/// state is advanced, so parallel delta computation stays reproducible.
class EvictionRng {
 public:
  explicit EvictionRng(std::uint64_t seed = 0) : seed_(seed) {}
  double uniform(std::uint64_t event, NodeId node, int hop, NodeId key) const;
  std::uint64_t seed() const { return seed_; }

  friend bool operator==(const EvictionRng&, const EvictionRng&) = default;

 private:
  std::uint64_t seed_;
};

class NCacheStore {
 public:
  explicit NCacheStore(CacheConfig cfg);

  const CacheConfig& config() const { return cfg_; }
  std::size_t num_nodes() const { return cfg_.num_nodes; }

  std::span<const double> self(NodeId u) const;
  std::span<double> self(NodeId u);

  /// Key array s_u^(hop) of length M_hop.
  std::span<const NodeId> keys(NodeId u, int hop) const;
  std::span<NodeId> keys(NodeId u, int hop);

  std::span<const double> value(NodeId u, int hop, std::size_t slot) const;
  std::span<double> value(NodeId u, int hop, std::size_t slot);

  std::size_t slot_of(NodeId a, int hop) const { return hash_slot(a, cfg_.capacity(hop), cfg_.q); }

  const EvictionRng& rng() const { return rng_; }
  /// Number of events committed so far; also the RNG event counter.
  std::uint64_t event_count() const { return events_; }
  void advance_events(std::uint64_t n) { events_ += n; }

  /// Zero every representation and clear every key. Keeps the event counter.
  void clear();

  friend bool operator==(const NCacheStore&, const NCacheStore&) = default;

 private:
  friend void save_cache(const NCacheStore&, std::ostream&);
  friend NCacheStore read_cache(std::istream&);

  CacheConfig cfg_;
  EvictionRng rng_;
  std::uint64_t events_ = 0;
  std::vector<double> self_;                       // (n+1) x d0
  std::array<std::vector<NodeId>, kMaxHop> keys_;  // (n+1) x M_k
  std::array<std::vector<double>, kMaxHop> vals_;  // (n+1) x M_k x F
};

/// Stored value of `a` in u's hop-`hop` dictionary, if a owns its slot.
std::optional<std::span<const double>> lookup(const NCacheStore& store, NodeId u, int hop, NodeId a);

/// Single-slot write with probabilistic replacement. `coin` is a uniform draw
/// in [0,1) consulted only when the slot holds a different key.
bool try_write(NCacheStore& store, NodeId u, int hop, NodeId a, std::span<const double> value,
               double coin);

/// Copies every entry of v's hop-1 dictionary into u's hop-2 dictionary
/// (in place), drawing collision coins for event `event`. Returns the number
/// of successful writes.
std::size_t insert_secondhop(NCacheStore& store, NodeId u, NodeId v, std::uint64_t event);

/// Inputs of one recurrent update. `prev` is the state being advanced.
struct StepInput {
  std::span<const double> prev;
  std::span<const double> partner_self;
  double t = 0.0;
  std::span<const double> feat;
};

/// Recurrent steps used by cache updates, supplied by the model.
class CacheEncoder {
 public:
  virtual ~CacheEncoder() = default;
  /// Writes the new self representation (width d0) into `out`.
  virtual void self_step(const StepInput& in, std::span<double> out) const = 0;
  /// Writes the new hop-1 value (width F) into `out`.
  virtual void edge_step(const StepInput& in, std::span<double> out) const = 0;
};

/// All writes one event makes to one endpoint's caches, plus the recurrent
/// inputs they were computed from.
struct CacheDelta {
  NodeId node = kEmpty;
  NodeId partner = kEmpty;
  double t = 0.0;
  std::vector<double> feat;
  std::vector<double> prev_self;
  std::vector<double> partner_self;
  std::vector<double> self;  // new Z_node^(0)

  bool hop1_written = false;
  std::uint32_t hop1_slot = 0;
  std::vector<double> prev_edge;  // Z_prev (zeros if partner was not a key)
  std::vector<double> hop1_value;

  std::vector<std::uint32_t> hop2_slots;
  std::vector<NodeId> hop2_keys;
  std::vector<double> hop2_values;  // hop2_keys.size() x F
};

/// Computes node's side of event (node, partner, t, feat) against `store`
/// without modifying it. `event` keys the collision coins.
CacheDelta compute_delta(const NCacheStore& store, NodeId node, NodeId partner, double t,
                         std::span<const double> feat, std::uint64_t event,
                         const CacheEncoder& encoder);

/// Identifies a stored representation: hop 0 has slot 0.
struct SlotRef {
  NodeId node = kEmpty;
  int hop = 0;
  std::uint32_t slot = 0;

  std::uint64_t packed() const {
    return (static_cast<std::uint64_t>(node) << 24) | (static_cast<std::uint64_t>(hop) << 20) | slot;
  }
  friend bool operator==(const SlotRef&, const SlotRef&) = default;
};

/// For each hop-0 or hop-1 location written by a commit, the index of the
/// delta whose value survived.
class CommitLog {
 public:
  void record(SlotRef where, std::uint32_t delta) { last_[where.packed()] = delta; }
  std::optional<std::uint32_t> writer(SlotRef where) const;
  std::size_t size() const { return last_.size(); }
  void clear() { last_.clear(); }

 private:
  std::unordered_map<std::uint64_t, std::uint32_t> last_;
};

/// Applies deltas in order; later writes to the same slot win.
void commit(NCacheStore& store, std::span<const CacheDelta> deltas, CommitLog* log = nullptr);

/// Both passes of one event, computed on the pre-event state, then committed.
void apply_event(NCacheStore& store, const graph::TemporalEdge& e, const CacheEncoder& encoder);

/// Deltas for a batch (two per event, in event order) against the current
/// store. The OpenMP version and the serial reference produce identical output.
std::vector<CacheDelta> compute_batch(const NCacheStore& store, std::span<const graph::TemporalEdge> events,
                                      const CacheEncoder& encoder);
std::vector<CacheDelta> compute_batch_serial(const NCacheStore& store,
                                             std::span<const graph::TemporalEdge> events,
                                             const CacheEncoder& encoder);

/// compute_batch + commit + event counter advance.
void apply_batch(NCacheStore& store, std::span<const graph::TemporalEdge> events, const CacheEncoder& encoder,
                 CommitLog* log = nullptr);
void apply_batch_serial(NCacheStore& store, std::span<const graph::TemporalEdge> events,
                        const CacheEncoder& encoder);

/// Saved store state for evaluation passes that must not perturb training.
class CacheSnapshot {
 public:
  explicit CacheSnapshot(const NCacheStore& store) : state_(store) {}
  const NCacheStore& state() const { return state_; }

 private:
  NCacheStore state_;
};

CacheSnapshot snapshot(const NCacheStore& store);
/// Throws InputError if the snapshot was taken under a different config.
void restore(NCacheStore& store, const CacheSnapshot& snap);

/// Number of non-EMPTY keys that do not sit at their own hash slot.
std::size_t count_misplaced_keys(const NCacheStore& store);

// Checkpoint layout (all little-endian):
//   char[8] "NATCACHE", u32 version, u64 config hash,
//   u64 num_nodes, M1, M2, F, d0, u32 K, f64 alpha, u64 q, seed, events,
//   f64 self[(n+1)*d0], then for hop 1 and 2: u32 keys[(n+1)*M_k],
//   f64 vals[(n+1)*M_k*F].
std::uint64_t config_hash(const CacheConfig& cfg);
void save_cache(const NCacheStore& store, std::ostream& out);
NCacheStore read_cache(std::istream& in);
void save_cache_file(const NCacheStore& store, const std::filesystem::path& path);
NCacheStore load_cache_file(const std::filesystem::path& path);

/// Textual listing of a node's keys per hop, one line per hop.
std::string describe_node(const NCacheStore& store, NodeId u);

}  // namespace nat::cache
