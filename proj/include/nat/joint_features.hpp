#pragma once

// Joint neighborhood features for a queried link (u, v).
//
// The key arrays of both endpoints (hop 0 contributes the endpoint itself)
// are concatenated, EMPTY entries dropped, and the remaining entries reduced
// to unique nodes with an inverse index. Each unique node a gets
//   de(a) = [a in Z_u^(0..K)] ++ [a in Z_v^(0..K)]   (binary, width 2(K+1))
//   q(a)  = sum of the values stored under a          (width F)
// where hop-0 values are the endpoint's self representation passed through
// a learned projection to width F.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nat/ncache.hpp"
#include "nat/types.hpp"

namespace nat::features {

/// Affine map from self representations (d0) to value width F.
struct SelfProjection {
  std::span<const double> weight;  // F x d0, row-major
  std::span<const double> bias;    // F

  void apply(std::span<const double> z, std::span<double> out) const;
};

struct JointFeature {
  NodeId node = kEmpty;
  std::vector<std::uint8_t> de;
  std::vector<double> q;

  friend bool operator==(const JointFeature&, const JointFeature&) = default;
};

/// Width of the DE vector for hop count K.
constexpr std::size_t de_width(int K) { return 2 * static_cast<std::size_t>(K + 1); }

/// Non-owning view of one link's packed features.
struct JointView {
  std::size_t de_width = 0;
  std::size_t F = 0;
  std::span<const NodeId> nodes;
  std::span<const std::uint8_t> de;  // nodes.size() x de_width
  std::span<const double> q;         // nodes.size() x F
  /// One entry per non-EMPTY key in concatenation order.
  std::span<const cache::SlotRef> sources;
  std::span<const std::uint32_t> inverse;  // entry -> unique index

  std::size_t size() const { return nodes.size(); }
  std::span<const std::uint8_t> de_row(std::size_t i) const { return de.subspan(i * de_width, de_width); }
  std::span<const double> q_row(std::size_t i) const { return q.subspan(i * F, F); }
  std::vector<JointFeature> to_features() const;
};

/// Owning packed feature set for one link.
class JointSet {
 public:
  JointSet() = default;
  JointView view() const;
  std::vector<JointFeature> to_features() const { return view().to_features(); }

 private:
  friend JointSet join(const cache::NCacheStore&, NodeId, NodeId, const SelfProjection&);

  std::size_t de_width_ = 0;
  std::size_t F_ = 0;
  std::vector<NodeId> nodes_;
  std::vector<std::uint8_t> de_;
  std::vector<double> q_;
  std::vector<cache::SlotRef> sources_;
  std::vector<std::uint32_t> inverse_;
};

/// Unique/inverse/segment-sum construction for one link.
JointSet join(const cache::NCacheStore& store, NodeId u, NodeId v, const SelfProjection& proj);

std::vector<JointFeature> build_joint(const cache::NCacheStore& store, NodeId u, NodeId v,
                                      const SelfProjection& proj);

/// Reference: per-candidate double loop over every (endpoint, hop) key array.
std::vector<JointFeature> naive_joint(const cache::NCacheStore& store, NodeId u, NodeId v,
                                      const SelfProjection& proj);

class JointBatchBuilder;

struct Link {
  NodeId u = kEmpty;
  NodeId v = kEmpty;
};

/// Features for many links in flat arrays. Link i owns entries
/// [entry_offset[i], entry_offset[i+1]) and feature rows starting at
/// entry_offset[i], of which feature_count[i] are used.
class JointBatch {
 public:
  std::size_t num_links() const { return feature_count_.size(); }
  JointView link(std::size_t i) const;

 private:
  friend class JointBatchBuilder;

  std::size_t de_width_ = 0;
  std::size_t F_ = 0;
  std::vector<std::size_t> entry_offset_;
  std::vector<std::size_t> feature_count_;
  std::vector<cache::SlotRef> sources_;
  std::vector<std::uint32_t> inverse_;
  std::vector<NodeId> nodes_;
  std::vector<std::uint8_t> de_;
  std::vector<double> q_;
};

/// OpenMP over links; entries of all links packed in one flat array.
JointBatch build_joint_batch(const cache::NCacheStore& store, std::span<const Link> links,
                             const SelfProjection& proj);
/// Serial reference with the same output.
JointBatch build_joint_batch_serial(const cache::NCacheStore& store, std::span<const Link> links,
                                    const SelfProjection& proj);

}  // namespace nat::features
