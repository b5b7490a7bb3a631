#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>
#include <sstream>

#include "nat/ncache.hpp"
#include "support.hpp"

using namespace nat;
using namespace nat::cache;
using graph::TemporalEdge;

namespace {

const fixtures::MixEncoder kEncoder;

bool same_delta(const CacheDelta& x, const CacheDelta& y) {
  return x.node == y.node && x.partner == y.partner && x.t == y.t && x.feat == y.feat &&
         x.prev_self == y.prev_self && x.partner_self == y.partner_self && x.self == y.self &&
         x.hop1_written == y.hop1_written && x.hop1_slot == y.hop1_slot && x.prev_edge == y.prev_edge &&
         x.hop1_value == y.hop1_value && x.hop2_slots == y.hop2_slots && x.hop2_keys == y.hop2_keys &&
         x.hop2_values == y.hop2_values;
}

std::size_t occupied(const NCacheStore& s, NodeId u, int hop) {
  std::size_t n = 0;
  for (NodeId k : s.keys(u, hop)) n += k != kEmpty;
  return n;
}

}  // namespace

TEST(HashSlot, SmallMultiplier) { EXPECT_EQ(hash_slot(5, 4, 3), 3u); }

TEST(HashSlot, SingleSlot) {
  for (NodeId a : {1u, 7u, 4000000000u}) EXPECT_EQ(hash_slot(a, 1), 0u);
}

TEST(HashSlot, BigIntegerOracle) {
  // 2654435761 * 9227 = 24492479766947, which is 27 mod 32
  EXPECT_EQ(hash_slot(9227, 32), 27u);
}

TEST(HashSlot, NoOverflowNearTopOfRange) {
  const NodeId a = 0xFFFFFFFFu;
  const unsigned __int128 wide = static_cast<unsigned __int128>(kDefaultHashMultiplier) * a;
  EXPECT_EQ(hash_slot(a, 1000003), static_cast<std::size_t>(wide % 1000003));
}

TEST(CacheConfig, Validation) {
  CacheConfig c = fixtures::small_cache(10, 4, 2);
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.alpha = 0.0;
  EXPECT_THROW(bad.validate(), InputError);
  bad = c;
  bad.q = 2654435760ULL;
  EXPECT_THROW(bad.validate(), InputError);
  bad = c;
  bad.M1 = 0;
  EXPECT_THROW(bad.validate(), InputError);
  bad = c;
  bad.q = 3;
  EXPECT_THROW(bad.validate(), InputError);
}

TEST(CacheConfig, MemoryFormula) {
  CacheConfig c = fixtures::small_cache(10, 16, 8);
  c.F = 4;
  c.d0 = 72;
  EXPECT_EQ(c.scalars_per_node(), 72u + 16u * 5 + 8u * 5);
  c.K = 1;
  EXPECT_EQ(c.scalars_per_node(), 72u + 16u * 5);
  c.K = 2;
  c.M2 = 0;
  EXPECT_EQ(c.scalars_per_node(), 72u + 16u * 5);
}

TEST(Lookup, FreshStoreIsEmpty) {
  const NCacheStore s(fixtures::small_cache(6, 4, 2));
  for (NodeId u = 1; u <= 6; ++u) {
    for (NodeId a = 1; a <= 6; ++a) {
      EXPECT_FALSE(lookup(s, u, 1, a));
      EXPECT_FALSE(lookup(s, u, 2, a));
    }
  }
}

TEST(Lookup, WriteThenRead) {
  NCacheStore s(fixtures::small_cache(6, 4, 2));
  const std::vector<double> v{1.0, 2.0, 3.0};
  EXPECT_TRUE(try_write(s, 2, 1, 5, v, 0.99));
  const auto got = lookup(s, 2, 1, 5);
  ASSERT_TRUE(got);
  EXPECT_EQ(std::vector<double>(got->begin(), got->end()), v);
}

TEST(Lookup, EvictedKeyDisappears) {
  NCacheStore s(fixtures::small_cache(6, 1, 1));
  const std::vector<double> v{1.0, 1.0, 1.0}, w{2.0, 2.0, 2.0};
  ASSERT_TRUE(try_write(s, 1, 1, 3, v, 0.0));
  ASSERT_TRUE(try_write(s, 1, 1, 4, w, 0.0));
  EXPECT_FALSE(lookup(s, 1, 1, 3));
  ASSERT_TRUE(lookup(s, 1, 1, 4));
  EXPECT_EQ((*lookup(s, 1, 1, 4))[0], 2.0);
}

TEST(TryWrite, EmptyAndSameKeyAlwaysWrite) {
  auto cfg = fixtures::small_cache(6, 1, 1);
  cfg.alpha = 0.1;
  NCacheStore s(cfg);
  const std::vector<double> v{1.0, 2.0, 3.0};
  EXPECT_TRUE(try_write(s, 1, 1, 3, v, 0.999));
  EXPECT_TRUE(try_write(s, 1, 1, 3, v, 0.999));
  EXPECT_FALSE(try_write(s, 1, 1, 4, v, 0.999));
  EXPECT_TRUE(try_write(s, 1, 1, 4, v, 0.05));
}

TEST(TryWrite, RejectsBadShapes) {
  NCacheStore s(fixtures::small_cache(6, 4, 0));
  EXPECT_THROW(try_write(s, 1, 1, 2, std::vector<double>{1.0}, 0.0), InputError);
  EXPECT_THROW(try_write(s, 1, 2, 2, std::vector<double>{1.0, 2.0, 3.0}, 0.0), InputError);
}

TEST(EvictionRng, UniformAndCounterBased) {
  const EvictionRng r(7);
  EXPECT_EQ(r.uniform(1, 2, 1, 3), r.uniform(1, 2, 1, 3));
  EXPECT_NE(r.uniform(1, 2, 1, 3), r.uniform(2, 2, 1, 3));
  EXPECT_NE(r.uniform(1, 2, 1, 3), EvictionRng(8).uniform(1, 2, 1, 3));
  double sum = 0.0;
  for (std::uint64_t i = 0; i < 100000; ++i) {
    const double x = r.uniform(i, 1, 1, 1);
    ASSERT_GE(x, 0.0);
    ASSERT_LT(x, 1.0);
    sum += x;
  }
  EXPECT_NEAR(sum / 100000, 0.5, 0.005);
}

class EvictionRate : public ::testing::TestWithParam<double> {};

TEST_P(EvictionRate, ForcedCollisionOverwriteFrequency) {
  auto cfg = fixtures::small_cache(3, 1, 0, 11);
  cfg.alpha = GetParam();
  NCacheStore s(cfg);
  ASSERT_TRUE(try_write(s, 1, 1, 2, std::vector<double>{1.0, 1.0, 1.0}, 0.0));
  const std::size_t trials = 100000;
  std::size_t wrote = 0;
  for (std::size_t i = 0; i < trials; ++i) {
    wrote += compute_delta(s, 1, 3, 0.0, {}, i, kEncoder).hop1_written;
  }
  EXPECT_NEAR(static_cast<double>(wrote) / trials, GetParam(), 0.01);
}

INSTANTIATE_TEST_SUITE_P(Alphas, EvictionRate, ::testing::Values(0.1, 0.5, 0.9));

TEST(SecondHop, EmptyPartnerWritesNothing) {
  NCacheStore s(fixtures::small_cache(6, 4, 4));
  EXPECT_EQ(insert_secondhop(s, 1, 2, 0), 0u);
}

TEST(SecondHop, SingleNeighborCopiedVerbatim) {
  NCacheStore s(fixtures::small_cache(6, 4, 4));
  const std::vector<double> v{0.125, -3.5, 1e-300};
  ASSERT_TRUE(try_write(s, 2, 1, 5, v, 0.0));
  EXPECT_EQ(insert_secondhop(s, 1, 2, 0), 1u);
  EXPECT_EQ(s.keys(1, 2)[hash_slot(5, 4)], 5u);
  const auto got = lookup(s, 1, 2, 5);
  ASSERT_TRUE(got);
  EXPECT_EQ(std::vector<double>(got->begin(), got->end()), v);
}

TEST(SecondHop, ThreeDistinctSlots) {
  // residues of 3, 4, 5 under the default multiplier mod 8 are 3, 4, 5
  auto cfg = fixtures::small_cache(6, 8, 8);
  cfg.alpha = 1.0;
  NCacheStore s(cfg);
  for (NodeId w : {3u, 4u, 5u}) ASSERT_TRUE(try_write(s, 2, 1, w, std::vector<double>{1.0 * w, 0.0, 0.0}, 0.0));
  EXPECT_EQ(insert_secondhop(s, 1, 2, 0), 3u);
  EXPECT_EQ(occupied(s, 1, 2), 3u);
}

TEST(ApplyEvent, FirstEventOccupiesBothHopOneSlots) {
  NCacheStore s(fixtures::small_cache(6, 4, 2));
  apply_event(s, {2, 5, 1.0, {}}, kEncoder);
  EXPECT_TRUE(lookup(s, 2, 1, 5));
  EXPECT_TRUE(lookup(s, 5, 1, 2));
  EXPECT_EQ(s.event_count(), 1u);
}

TEST(ApplyEvent, SecondHopUsesPartnerStateBeforeTheEvent) {
  NCacheStore s(fixtures::small_cache(8, 8, 8));
  apply_event(s, {2, 3, 1.0, {}}, kEncoder);  // v=2 learns 3
  const auto before = *lookup(s, 2, 1, 3);
  const std::vector<double> saved(before.begin(), before.end());
  apply_event(s, {1, 2, 2.0, {}}, kEncoder);  // u=1 meets v=2
  const auto hop2 = lookup(s, 1, 2, 3);
  ASSERT_TRUE(hop2);
  EXPECT_EQ(std::vector<double>(hop2->begin(), hop2->end()), saved);
  // v's hop-2 gets u's hop-1 contents from before the event, which were empty
  EXPECT_EQ(occupied(s, 2, 2), 0u);
  // the self representation of u moved away from zero
  bool moved = false;
  for (double x : s.self(1)) moved |= x != 0.0;
  EXPECT_TRUE(moved);
}

TEST(ApplyEvent, MissingKeyUsesZeroPrevious) {
  NCacheStore s(fixtures::small_cache(6, 4, 2));
  const auto d = compute_delta(s, 1, 2, 0.0, {}, 0, kEncoder);
  EXPECT_EQ(d.prev_edge, std::vector<double>(3, 0.0));
  EXPECT_TRUE(d.hop1_written);
}

TEST(ApplyEvent, SelfLoopEqualsSequentialPasses) {
  NCacheStore s(fixtures::small_cache(6, 4, 4));
  apply_event(s, {3, 4, 0.0, {}}, kEncoder);
  apply_event(s, {3, 5, 1.0, {}}, kEncoder);
  NCacheStore reference = s;
  const std::uint64_t ev = s.event_count();
  const auto first = compute_delta(reference, 3, 3, 2.0, {}, ev, kEncoder);
  const auto second = compute_delta(reference, 3, 3, 2.0, {}, ev, kEncoder);
  commit(reference, std::span(&first, 1));
  commit(reference, std::span(&second, 1));
  reference.advance_events(1);
  apply_event(s, {3, 3, 2.0, {}}, kEncoder);
  EXPECT_EQ(s, reference);
  EXPECT_TRUE(lookup(s, 3, 1, 3));
  EXPECT_TRUE(lookup(s, 3, 2, 4));
}

TEST(ApplyEvent, OutOfRangeNode) {
  NCacheStore s(fixtures::small_cache(4, 4, 2));
  EXPECT_THROW(apply_event(s, {1, 5, 0.0, {}}, kEncoder), InputError);
}

TEST(ApplyBatch, SizeOneEqualsApplyEvent) {
  const auto stream = fixtures::random_stream(20, 300, 2, 2);
  auto cfg = fixtures::small_cache(20, 4, 2, 3);
  cfg.alpha = 0.5;
  NCacheStore a(cfg), b(cfg);
  for (const auto& e : stream) {
    apply_event(a, e, kEncoder);
    apply_batch(b, std::span(&e, 1), kEncoder);
  }
  EXPECT_EQ(a, b);
}

TEST(ApplyBatch, DisjointEventsCommuteAcrossOrders) {
  NCacheStore base(fixtures::small_cache(8, 4, 2));
  apply_event(base, {1, 2, 0.0, {}}, kEncoder);
  apply_event(base, {3, 4, 0.0, {}}, kEncoder);
  const std::vector<TemporalEdge> fwd{{1, 5, 1.0, {}}, {3, 6, 1.0, {}}};
  const std::vector<TemporalEdge> rev{fwd[1], fwd[0]};
  NCacheStore x = base, y = base;
  apply_batch(x, fwd, kEncoder);
  apply_batch(y, rev, kEncoder);
  // the collision coins depend on the event index, so compare at alpha 1
  auto cfg = base.config();
  cfg.alpha = 1.0;
  NCacheStore p(cfg), r(cfg);
  apply_batch(p, fwd, kEncoder);
  apply_batch(r, rev, kEncoder);
  EXPECT_EQ(p, r);
  for (NodeId u : {1u, 3u, 5u, 6u}) EXPECT_EQ(occupied(x, u, 1), occupied(y, u, 1));
}

TEST(ApplyBatch, SameSlotConflictKeepsOneKey) {
  auto cfg = fixtures::small_cache(6, 1, 0);
  NCacheStore s(cfg);
  const std::vector<TemporalEdge> batch{{1, 2, 0.0, {}}, {1, 3, 0.0, {}}};
  apply_batch(s, batch, kEncoder);
  const NodeId k = s.keys(1, 1)[0];
  EXPECT_TRUE(k == 2 || k == 3);
}

TEST(ApplyBatch, ParallelMatchesSerialReference) {
  const auto stream = fixtures::random_stream(40, 2000, 5, 3);
  auto cfg = fixtures::small_cache(40, 4, 2, 9);
  cfg.alpha = 0.6;
  for (std::size_t b : {1u, 7u, 64u}) {
    NCacheStore par(cfg), ser(cfg);
    for (std::size_t i = 0; i < stream.size(); i += b) {
      const auto part = std::span(stream).subspan(i, std::min(b, stream.size() - i));
      const auto dp = compute_batch(par, part, kEncoder);
      const auto ds = compute_batch_serial(ser, part, kEncoder);
      ASSERT_EQ(dp.size(), ds.size());
      for (std::size_t j = 0; j < dp.size(); ++j) ASSERT_TRUE(same_delta(dp[j], ds[j])) << "batch " << b;
      apply_batch(par, part, kEncoder);
      apply_batch_serial(ser, part, kEncoder);
    }
    EXPECT_EQ(par, ser) << "batch " << b;
  }
}

TEST(ApplyBatch, CommitLogNamesTheSurvivingDelta) {
  NCacheStore s(fixtures::small_cache(6, 1, 0));
  const std::vector<TemporalEdge> batch{{1, 2, 0.0, {}}, {1, 3, 0.0, {}}};
  const auto deltas = compute_batch(s, batch, kEncoder);
  CommitLog log;
  commit(s, deltas, &log);
  const auto w0 = log.writer({1, 0, 0});
  const auto w1 = log.writer({1, 1, 0});
  ASSERT_TRUE(w0 && w1);
  EXPECT_EQ(deltas[*w0].node, 1u);
  EXPECT_EQ(std::vector<double>(s.self(1).begin(), s.self(1).end()), deltas[*w0].self);
  EXPECT_EQ(s.keys(1, 1)[0], deltas[*w1].partner);
  EXPECT_FALSE(log.writer({4, 0, 0}));
}

TEST(Invariants, KeysSitAtTheirHashSlot) {
  auto cfg = fixtures::small_cache(200, 7, 5, 4);
  cfg.alpha = 0.7;
  NCacheStore s(cfg);
  const auto stream = fixtures::random_stream(200, 100000, 12);
  for (std::size_t i = 0; i < stream.size(); i += 50) {
    apply_batch(s, std::span(stream).subspan(i, std::min<std::size_t>(50, stream.size() - i)), kEncoder);
  }
  EXPECT_EQ(count_misplaced_keys(s), 0u);
  for (NodeId u = 1; u <= 200; ++u) {
    for (int k = 1; k <= 2; ++k) {
      EXPECT_LE(occupied(s, u, k), cfg.capacity(k));
      for (NodeId key : s.keys(u, k)) EXPECT_LE(key, 200u);
    }
  }
}

TEST(Invariants, MisplacedKeyIsDetected) {
  NCacheStore s(fixtures::small_cache(6, 4, 2));
  s.keys(1, 1)[(hash_slot(2, 4) + 1) % 4] = 2;
  EXPECT_EQ(count_misplaced_keys(s), 1u);
}

TEST(Invariants, AlphaOneMatchesSlotReplay) {
  auto cfg = fixtures::small_cache(200, 8, 0);
  cfg.alpha = 1.0;
  cfg.K = 1;
  NCacheStore s(cfg);
  const auto stream = fixtures::random_stream(200, 100000, 21);
  std::vector<std::vector<NodeId>> oracle(201, std::vector<NodeId>(8, kEmpty));
  for (const auto& e : stream) {
    apply_event(s, e, kEncoder);
    oracle[e.src][hash_slot(e.dst, 8)] = e.dst;
    oracle[e.dst][hash_slot(e.src, 8)] = e.src;
  }
  for (NodeId u = 1; u <= 200; ++u) {
    const auto keys = s.keys(u, 1);
    ASSERT_EQ(std::vector<NodeId>(keys.begin(), keys.end()), oracle[u]) << "node " << u;
  }
}

TEST(Invariants, SecondHopValuesAreHistoricalPartnerValues) {
  auto cfg = fixtures::small_cache(30, 4, 4, 6);
  cfg.alpha = 0.8;
  NCacheStore s(cfg);
  using Value = std::vector<double>;
  // (node, key) -> every hop-1 value ever stored there
  std::map<std::pair<NodeId, NodeId>, std::set<Value>> history;
  std::vector<std::set<NodeId>> partners(31);
  for (const auto& e : fixtures::random_stream(30, 3000, 8)) {
    apply_event(s, e, kEncoder);
    partners[e.src].insert(e.dst);
    partners[e.dst].insert(e.src);
    for (NodeId u : {e.src, e.dst}) {
      const auto keys = s.keys(u, 1);
      for (std::size_t p = 0; p < keys.size(); ++p) {
        if (keys[p] == kEmpty) continue;
        const auto v = s.value(u, 1, p);
        history[{u, keys[p]}].insert(Value(v.begin(), v.end()));
      }
    }
  }
  for (NodeId u = 1; u <= 30; ++u) {
    const auto keys = s.keys(u, 2);
    for (std::size_t p = 0; p < keys.size(); ++p) {
      if (keys[p] == kEmpty) continue;
      const auto v = s.value(u, 2, p);
      const Value val(v.begin(), v.end());
      bool found = false;
      for (NodeId partner : partners[u]) {
        const auto it = history.find({partner, keys[p]});
        found |= it != history.end() && it->second.count(val);
      }
      EXPECT_TRUE(found) << "node " << u << " key " << keys[p];
    }
  }
}

TEST(Determinism, SameSeedSameStore) {
  auto cfg = fixtures::small_cache(25, 4, 2, 77);
  cfg.alpha = 0.5;
  const auto stream = fixtures::random_stream(25, 2000, 4, 1);
  NCacheStore a(cfg), b(cfg);
  for (const auto& e : stream) {
    apply_event(a, e, kEncoder);
    apply_event(b, e, kEncoder);
  }
  EXPECT_EQ(a, b);
  cfg.seed = 78;
  NCacheStore c(cfg);
  for (const auto& e : stream) apply_event(c, e, kEncoder);
  EXPECT_NE(a, c);
}

TEST(Snapshot, RestoreUndoesUpdates) {
  NCacheStore s(fixtures::small_cache(20, 4, 2));
  const auto stream = fixtures::random_stream(20, 200, 3);
  apply_batch(s, std::span(stream).first(100), kEncoder);
  const NCacheStore before = s;
  const auto snap = snapshot(s);
  apply_batch(s, std::span(stream).subspan(100), kEncoder);
  EXPECT_NE(s, before);
  restore(s, snap);
  EXPECT_EQ(s, before);
}

TEST(Snapshot, MismatchedConfigRejected) {
  NCacheStore s(fixtures::small_cache(20, 4, 2));
  const auto snap = snapshot(NCacheStore(fixtures::small_cache(20, 8, 2)));
  EXPECT_THROW(restore(s, snap), InputError);
}

TEST(Checkpoint, RoundTrip) {
  auto cfg = fixtures::small_cache(20, 4, 2, 5);
  NCacheStore s(cfg);
  apply_batch(s, fixtures::random_stream(20, 300, 3), kEncoder);
  std::stringstream buf;
  save_cache(s, buf);
  EXPECT_EQ(buf.str().substr(0, 8), "NATCACHE");
  EXPECT_EQ(read_cache(buf), s);
}

TEST(Checkpoint, CorruptionRejected) {
  NCacheStore s(fixtures::small_cache(5, 4, 2));
  std::stringstream buf;
  save_cache(s, buf);
  std::string bytes = buf.str();
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::istringstream in1(bad_magic);
  EXPECT_THROW(read_cache(in1), InputError);
  std::istringstream in2(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_cache(in2), InputError);
  std::string bad_hash = bytes;
  bad_hash[12] ^= 0x1;
  std::istringstream in3(bad_hash);
  EXPECT_THROW(read_cache(in3), InputError);
}

TEST(Describe, ListsKeysPerHop) {
  NCacheStore s(fixtures::small_cache(6, 4, 2));
  apply_event(s, {1, 2, 0.0, {}}, kEncoder);
  const auto text = describe_node(s, 1);
  EXPECT_NE(text.find("hop1"), std::string::npos);
  EXPECT_NE(text.find('2'), std::string::npos);
}
