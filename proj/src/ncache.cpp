#include "nat/ncache.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"

namespace nat::cache {

namespace {

constexpr char kCacheMagic[9] = "NATCACHE";
constexpr std::uint32_t kCacheVersion = 1;
constexpr std::size_t kMaxSlots = std::size_t{1} << 20;  // SlotRef packing limit

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::size_t CacheConfig::capacity(int hop) const {
  switch (hop) {
    case 0:
      return 1;
    case 1:
      return M1;
    case 2:
      return M2;
    default:
      throw InputError("hop must be 0, 1 or 2");
  }
}

bool CacheConfig::hop_active(int hop) const {
  if (hop == 0) return true;
  return hop <= K && capacity(hop) > 0;
}

std::size_t CacheConfig::scalars_per_node() const {
  std::size_t total = d0;
  for (int k = 1; k <= kMaxHop; ++k) {
    if (hop_active(k)) total += capacity(k) * (F + 1);
  }
  return total;
}

bool is_prime(std::uint64_t n) {
  if (n < 2) return false;
  if (n % 2 == 0) return n == 2;
  for (std::uint64_t d = 3; d * d <= n; d += 2) {
    if (n % d == 0) return false;
  }
  return true;
}

void CacheConfig::validate() const {
  if (num_nodes == 0) throw InputError("cache config: num_nodes must be positive");
  if (K < 0 || K > kMaxHop) throw InputError("cache config: K must be 0, 1 or 2");
  if (K >= 1 && M1 < 1) throw InputError("cache config: M1 must be >= 1 when K >= 1");
  if (M1 >= kMaxSlots || M2 >= kMaxSlots) throw InputError("cache config: capacity too large");
  if (K >= 1 && F < 1) throw InputError("cache config: F must be >= 1");
  if (d0 < 1) throw InputError("cache config: d0 must be >= 1");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InputError("cache config: alpha must lie in (0, 1]");
  if (q >= (std::uint64_t{1} << 32)) throw InputError("cache config: q must be below 2^32");
  if (!is_prime(q)) throw InputError("cache config: q must be prime");
  if (q <= std::max(M1, M2)) throw InputError("cache config: q must exceed every capacity");
  if (num_nodes >= (std::uint64_t{1} << 32)) throw InputError("cache config: too many nodes");
}

double EvictionRng::uniform(std::uint64_t event, NodeId node, int hop, NodeId key) const {
  std::uint64_t h = mix64(seed_ + 0x9e3779b97f4a7c15ULL);
  h = mix64(h ^ event);
  h = mix64(h ^ ((static_cast<std::uint64_t>(node) << 2) | static_cast<std::uint64_t>(hop)));
  h = mix64(h ^ key);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

NCacheStore::NCacheStore(CacheConfig cfg) : cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  const std::size_t rows = cfg_.num_nodes + 1;
  self_.assign(rows * cfg_.d0, 0.0);
  for (int k = 1; k <= kMaxHop; ++k) {
    const std::size_t m = cfg_.hop_active(k) ? cfg_.capacity(k) : 0;
    keys_[k - 1].assign(rows * m, kEmpty);
    vals_[k - 1].assign(rows * m * cfg_.F, 0.0);
  }
}

std::span<const double> NCacheStore::self(NodeId u) const {
  return std::span(self_).subspan(static_cast<std::size_t>(u) * cfg_.d0, cfg_.d0);
}

std::span<double> NCacheStore::self(NodeId u) {
  return std::span(self_).subspan(static_cast<std::size_t>(u) * cfg_.d0, cfg_.d0);
}

std::span<const NodeId> NCacheStore::keys(NodeId u, int hop) const {
  if (!cfg_.hop_active(hop) || hop == 0) return {};
  const std::size_t m = cfg_.capacity(hop);
  return std::span(keys_[hop - 1]).subspan(static_cast<std::size_t>(u) * m, m);
}

std::span<NodeId> NCacheStore::keys(NodeId u, int hop) {
  if (!cfg_.hop_active(hop) || hop == 0) return {};
  const std::size_t m = cfg_.capacity(hop);
  return std::span(keys_[hop - 1]).subspan(static_cast<std::size_t>(u) * m, m);
}

std::span<const double> NCacheStore::value(NodeId u, int hop, std::size_t slot) const {
  if (hop == 0) return self(u);
  const std::size_t m = cfg_.capacity(hop);
  return std::span(vals_[hop - 1]).subspan((static_cast<std::size_t>(u) * m + slot) * cfg_.F, cfg_.F);
}

std::span<double> NCacheStore::value(NodeId u, int hop, std::size_t slot) {
  if (hop == 0) return self(u);
  const std::size_t m = cfg_.capacity(hop);
  return std::span(vals_[hop - 1]).subspan((static_cast<std::size_t>(u) * m + slot) * cfg_.F, cfg_.F);
}

void NCacheStore::clear() {
  std::fill(self_.begin(), self_.end(), 0.0);
  for (auto& k : keys_) std::fill(k.begin(), k.end(), kEmpty);
  for (auto& v : vals_) std::fill(v.begin(), v.end(), 0.0);
}

std::optional<std::span<const double>> lookup(const NCacheStore& store, NodeId u, int hop, NodeId a) {
  if (hop < 1 || !store.config().hop_active(hop)) return std::nullopt;
  const std::size_t p = store.slot_of(a, hop);
  if (store.keys(u, hop)[p] != a) return std::nullopt;
  return store.value(u, hop, p);
}

bool try_write(NCacheStore& store, NodeId u, int hop, NodeId a, std::span<const double> value, double coin) {
  if (hop < 1 || !store.config().hop_active(hop)) throw InputError("try_write: hop is not stored");
  if (value.size() != store.config().F) throw InputError("try_write: value width differs from F");
  const std::size_t p = store.slot_of(a, hop);
  NodeId& key = store.keys(u, hop)[p];
  if (key != kEmpty && key != a && !(coin < store.config().alpha)) return false;
  key = a;
  std::copy(value.begin(), value.end(), store.value(u, hop, p).begin());
  return true;
}

std::size_t insert_secondhop(NCacheStore& store, NodeId u, NodeId v, std::uint64_t event) {
  const auto& cfg = store.config();
  if (!cfg.hop_active(2) || !cfg.hop_active(1)) return 0;
  // Copy first: u == v would otherwise read entries while writing them.
  const std::vector<NodeId> src_keys(store.keys(v, 1).begin(), store.keys(v, 1).end());
  std::size_t writes = 0;
  std::vector<double> value(cfg.F);
  for (std::size_t s = 0; s < src_keys.size(); ++s) {
    const NodeId w = src_keys[s];
    if (w == kEmpty) continue;
    auto src = store.value(v, 1, s);
    std::copy(src.begin(), src.end(), value.begin());
    if (try_write(store, u, 2, w, value, store.rng().uniform(event, u, 2, w))) ++writes;
  }
  return writes;
}

CacheDelta compute_delta(const NCacheStore& store, NodeId node, NodeId partner, double t,
                         std::span<const double> feat, std::uint64_t event, const CacheEncoder& encoder) {
  const auto& cfg = store.config();
  CacheDelta d;
  d.node = node;
  d.partner = partner;
  d.t = t;
  d.feat.assign(feat.begin(), feat.end());
  const auto own = store.self(node);
  const auto other = store.self(partner);
  d.prev_self.assign(own.begin(), own.end());
  d.partner_self.assign(other.begin(), other.end());
  d.self.resize(cfg.d0);
  encoder.self_step({d.prev_self, d.partner_self, t, d.feat}, d.self);

  if (cfg.hop_active(1)) {
    const std::size_t p = store.slot_of(partner, 1);
    const NodeId resident = store.keys(node, 1)[p];
    if (resident == partner) {
      const auto v = store.value(node, 1, p);
      d.prev_edge.assign(v.begin(), v.end());
    } else {
      d.prev_edge.assign(cfg.F, 0.0);
    }
    d.hop1_written = resident == kEmpty || resident == partner ||
                     store.rng().uniform(event, node, 1, partner) < cfg.alpha;
    if (d.hop1_written) {
      d.hop1_slot = static_cast<std::uint32_t>(p);
      d.hop1_value.resize(cfg.F);
      encoder.edge_step({d.prev_edge, d.partner_self, t, d.feat}, d.hop1_value);
    }
  }

  if (cfg.hop_active(2) && cfg.hop_active(1)) {
    const auto resident = store.keys(node, 2);
    std::vector<NodeId> overlay(resident.begin(), resident.end());
    const auto src_keys = store.keys(partner, 1);
    for (std::size_t s = 0; s < src_keys.size(); ++s) {
      const NodeId w = src_keys[s];
      if (w == kEmpty) continue;
      const std::size_t p = store.slot_of(w, 2);
      const NodeId cur = overlay[p];
      if (cur != kEmpty && cur != w && !(store.rng().uniform(event, node, 2, w) < cfg.alpha)) continue;
      overlay[p] = w;
      d.hop2_slots.push_back(static_cast<std::uint32_t>(p));
      d.hop2_keys.push_back(w);
      const auto v = store.value(partner, 1, s);
      d.hop2_values.insert(d.hop2_values.end(), v.begin(), v.end());
    }
  }
  return d;
}

std::optional<std::uint32_t> CommitLog::writer(SlotRef where) const {
  auto it = last_.find(where.packed());
  if (it == last_.end()) return std::nullopt;
  return it->second;
}

void commit(NCacheStore& store, std::span<const CacheDelta> deltas, CommitLog* log) {
  const std::size_t F = store.config().F;
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    const auto& d = deltas[i];
    const auto idx = static_cast<std::uint32_t>(i);
    std::copy(d.self.begin(), d.self.end(), store.self(d.node).begin());
    if (log) log->record({d.node, 0, 0}, idx);
    if (d.hop1_written) {
      store.keys(d.node, 1)[d.hop1_slot] = d.partner;
      std::copy(d.hop1_value.begin(), d.hop1_value.end(), store.value(d.node, 1, d.hop1_slot).begin());
      if (log) log->record({d.node, 1, d.hop1_slot}, idx);
    }
    for (std::size_t j = 0; j < d.hop2_keys.size(); ++j) {
      store.keys(d.node, 2)[d.hop2_slots[j]] = d.hop2_keys[j];
      auto src = std::span(d.hop2_values).subspan(j * F, F);
      std::copy(src.begin(), src.end(), store.value(d.node, 2, d.hop2_slots[j]).begin());
    }
  }
}

namespace {

void check_events(const NCacheStore& store, std::span<const graph::TemporalEdge> events) {
  const std::size_t n = store.num_nodes();
  for (const auto& e : events) {
    if (e.src == kEmpty || e.dst == kEmpty || e.src > n || e.dst > n) {
      throw InputError("event (" + std::to_string(e.src) + ", " + std::to_string(e.dst) +
                       ") has a node id outside the cache");
    }
  }
}

}  // namespace

void apply_event(NCacheStore& store, const graph::TemporalEdge& e, const CacheEncoder& encoder) {
  apply_batch_serial(store, std::span(&e, 1), encoder);
}

std::vector<CacheDelta> compute_batch(const NCacheStore& store, std::span<const graph::TemporalEdge> events,
                                      const CacheEncoder& encoder) {
  check_events(store, events);
  const std::uint64_t base = store.event_count();
  const auto n = static_cast<std::ptrdiff_t>(events.size());
  std::vector<CacheDelta> out(2 * events.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& e = events[static_cast<std::size_t>(i)];
    const auto ev = base + static_cast<std::uint64_t>(i);
    out[2 * i] = compute_delta(store, e.src, e.dst, e.t, e.feat, ev, encoder);
    out[2 * i + 1] = compute_delta(store, e.dst, e.src, e.t, e.feat, ev, encoder);
  }
  return out;
}

std::vector<CacheDelta> compute_batch_serial(const NCacheStore& store, std::span<const graph::TemporalEdge> events,
                                             const CacheEncoder& encoder) {
  check_events(store, events);
  const std::uint64_t base = store.event_count();
  std::vector<CacheDelta> out;
  out.reserve(2 * events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    out.push_back(compute_delta(store, e.src, e.dst, e.t, e.feat, base + i, encoder));
    out.push_back(compute_delta(store, e.dst, e.src, e.t, e.feat, base + i, encoder));
  }
  return out;
}

void apply_batch(NCacheStore& store, std::span<const graph::TemporalEdge> events, const CacheEncoder& encoder,
                 CommitLog* log) {
  const auto deltas = compute_batch(store, events, encoder);
  commit(store, deltas, log);
  store.advance_events(events.size());
}

void apply_batch_serial(NCacheStore& store, std::span<const graph::TemporalEdge> events,
                        const CacheEncoder& encoder) {
  const auto deltas = compute_batch_serial(store, events, encoder);
  commit(store, deltas);
  store.advance_events(events.size());
}

CacheSnapshot snapshot(const NCacheStore& store) { return CacheSnapshot(store); }

void restore(NCacheStore& store, const CacheSnapshot& snap) {
  if (!(store.config() == snap.state().config())) {
    throw InputError("cache snapshot was taken under a different configuration");
  }
  store = snap.state();
}

std::size_t count_misplaced_keys(const NCacheStore& store) {
  std::size_t bad = 0;
  for (NodeId u = 1; u <= store.num_nodes(); ++u) {
    for (int k = 1; k <= kMaxHop; ++k) {
      const auto keys = store.keys(u, k);
      for (std::size_t p = 0; p < keys.size(); ++p) {
        if (keys[p] == kEmpty) continue;
        if (keys[p] > store.num_nodes() || store.slot_of(keys[p], k) != p) ++bad;
      }
    }
  }
  return bad;
}

std::uint64_t config_hash(const CacheConfig& c) {
  std::ostringstream s;
  s << c.num_nodes << ' ' << c.M1 << ' ' << c.M2 << ' ' << c.F << ' ' << c.d0 << ' ' << c.K << ' '
    << c.q << ' ' << c.seed << ' ';
  s.precision(17);
  s << c.alpha;
  return io::fnv1a(s.str());
}

void save_cache(const NCacheStore& store, std::ostream& out) {
  const auto& c = store.cfg_;
  io::write_magic(out, kCacheMagic);
  io::write_le<std::uint32_t>(out, kCacheVersion);
  io::write_le<std::uint64_t>(out, config_hash(c));
  for (std::uint64_t v : {std::uint64_t{c.num_nodes}, std::uint64_t{c.M1}, std::uint64_t{c.M2},
                          std::uint64_t{c.F}, std::uint64_t{c.d0}}) {
    io::write_le(out, v);
  }
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.K));
  io::write_le<double>(out, c.alpha);
  io::write_le<std::uint64_t>(out, c.q);
  io::write_le<std::uint64_t>(out, c.seed);
  io::write_le<std::uint64_t>(out, store.events_);
  io::write_array<double>(out, store.self_);
  for (int k = 0; k < kMaxHop; ++k) {
    io::write_array<NodeId>(out, store.keys_[k]);
    io::write_array<double>(out, store.vals_[k]);
  }
  if (!out) throw Error("failed writing cache checkpoint");
}

NCacheStore read_cache(std::istream& in) {
  io::expect_magic(in, kCacheMagic, "cache checkpoint");
  if (io::read_le<std::uint32_t>(in) != kCacheVersion) throw InputError("unsupported cache checkpoint version");
  const auto hash = io::read_le<std::uint64_t>(in);
  CacheConfig c;
  c.num_nodes = io::read_le<std::uint64_t>(in);
  c.M1 = io::read_le<std::uint64_t>(in);
  c.M2 = io::read_le<std::uint64_t>(in);
  c.F = io::read_le<std::uint64_t>(in);
  c.d0 = io::read_le<std::uint64_t>(in);
  c.K = static_cast<int>(io::read_le<std::uint32_t>(in));
  c.alpha = io::read_le<double>(in);
  c.q = io::read_le<std::uint64_t>(in);
  c.seed = io::read_le<std::uint64_t>(in);
  if (config_hash(c) != hash) throw InputError("cache checkpoint config hash mismatch");
  NCacheStore store(c);
  store.events_ = io::read_le<std::uint64_t>(in);
  io::read_array<double>(in, store.self_);
  for (int k = 0; k < kMaxHop; ++k) {
    io::read_array<NodeId>(in, store.keys_[k]);
    io::read_array<double>(in, store.vals_[k]);
  }
  return store;
}

void save_cache_file(const NCacheStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  save_cache(store, out);
}

NCacheStore load_cache_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return read_cache(in);
}

std::string describe_node(const NCacheStore& store, NodeId u) {
  std::ostringstream out;
  for (int k = 1; k <= kMaxHop; ++k) {
    if (!store.config().hop_active(k)) continue;
    out << u << " hop" << k << ':';
    for (NodeId key : store.keys(u, k)) {
      out << ' ';
      if (key == kEmpty) {
        out << '-';
      } else {
        out << key;
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace nat::cache
