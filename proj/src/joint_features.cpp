#include "nat/joint_features.hpp"

#include <algorithm>
#include <numeric>

namespace nat::features {

using cache::NCacheStore;
using cache::SlotRef;

void SelfProjection::apply(std::span<const double> z, std::span<double> out) const {
  const std::size_t d0 = z.size();
  for (std::size_t f = 0; f < out.size(); ++f) {
    double acc = bias[f];
    const double* w = weight.data() + f * d0;
    for (std::size_t j = 0; j < d0; ++j) acc += w[j] * z[j];
    out[f] = acc;
  }
}

std::vector<JointFeature> JointView::to_features() const {
  std::vector<JointFeature> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) {
    auto d = de_row(i);
    auto v = q_row(i);
    out.push_back({nodes[i], {d.begin(), d.end()}, {v.begin(), v.end()}});
  }
  return out;
}

JointView JointSet::view() const {
  return {de_width_, F_, nodes_, de_, q_, sources_, inverse_};
}

namespace {

std::size_t count_entries(const NCacheStore& store, NodeId w) {
  std::size_t n = 1;
  for (int k = 1; k <= cache::kMaxHop; ++k) {
    for (NodeId key : store.keys(w, k)) n += key != kEmpty;
  }
  return n;
}

// Concatenation order: hop 0, 1, 2 of u, then hop 0, 1, 2 of v.
void gather_entries(const NCacheStore& store, NodeId w, std::span<SlotRef> out, std::size_t& pos) {
  out[pos++] = {w, 0, 0};
  for (int k = 1; k <= cache::kMaxHop; ++k) {
    const auto keys = store.keys(w, k);
    for (std::size_t p = 0; p < keys.size(); ++p) {
      if (keys[p] != kEmpty) out[pos++] = {w, k, static_cast<std::uint32_t>(p)};
    }
  }
}

struct Scratch {
  std::vector<NodeId> key;
  std::vector<std::uint32_t> order;
  std::vector<std::uint32_t> leader;
  std::vector<std::uint32_t> uid;
  std::vector<double> proj_u;
  std::vector<double> proj_v;
};

// Unique + inverse + segment sum + DE scatter over one link's entries.
// `n_u` leading entries come from u. Output rows must hold entries.size().
std::size_t reduce_link(const NCacheStore& store, const SelfProjection& proj, NodeId u, NodeId v,
                        std::span<const SlotRef> entries, std::size_t n_u, std::span<std::uint32_t> inverse,
                        std::span<NodeId> nodes, std::span<std::uint8_t> de, std::span<double> q,
                        Scratch& s) {
  const auto& cfg = store.config();
  const std::size_t n = entries.size();
  const std::size_t F = cfg.F;
  const std::size_t dw = de_width(cfg.K);
  const std::size_t hops = static_cast<std::size_t>(cfg.K) + 1;

  s.key.resize(n);
  for (std::size_t e = 0; e < n; ++e) {
    const auto& src = entries[e];
    s.key[e] = src.hop == 0 ? src.node : store.keys(src.node, src.hop)[src.slot];
  }

  // unique with return_inverse, representatives in first-occurrence order
  s.order.resize(n);
  std::iota(s.order.begin(), s.order.end(), 0U);
  std::sort(s.order.begin(), s.order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return s.key[a] != s.key[b] ? s.key[a] < s.key[b] : a < b;
  });
  s.leader.resize(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && s.key[s.order[j]] == s.key[s.order[i]]) s.leader[s.order[j++]] = s.order[i];
    i = j;
  }
  s.uid.resize(n);
  std::uint32_t count = 0;
  for (std::size_t e = 0; e < n; ++e) {
    if (s.leader[e] == e) {
      s.uid[e] = count;
      nodes[count] = s.key[e];
      ++count;
    }
    inverse[e] = s.uid[s.leader[e]];
  }

  s.proj_u.resize(F);
  s.proj_v.resize(F);
  proj.apply(store.self(u), s.proj_u);
  proj.apply(store.self(v), s.proj_v);

  std::fill_n(q.begin(), count * F, 0.0);
  std::fill_n(de.begin(), count * dw, std::uint8_t{0});
  for (std::size_t e = 0; e < n; ++e) {
    const auto& src = entries[e];
    const std::size_t side = e < n_u ? 0 : 1;
    const std::size_t row = inverse[e];
    de[row * dw + side * hops + static_cast<std::size_t>(src.hop)] = 1;
    std::span<const double> val;
    if (src.hop == 0) {
      val = side == 0 ? std::span<const double>(s.proj_u) : std::span<const double>(s.proj_v);
    } else {
      val = store.value(src.node, src.hop, src.slot);
    }
    double* dst = q.data() + row * F;
    for (std::size_t f = 0; f < F; ++f) dst[f] += val[f];
  }
  return count;
}

}  // namespace

JointSet join(const NCacheStore& store, NodeId u, NodeId v, const SelfProjection& proj) {
  const auto& cfg = store.config();
  JointSet out;
  out.de_width_ = de_width(cfg.K);
  out.F_ = cfg.F;
  const std::size_t n_u = count_entries(store, u);
  const std::size_t n = n_u + count_entries(store, v);
  out.sources_.resize(n);
  std::size_t pos = 0;
  gather_entries(store, u, out.sources_, pos);
  gather_entries(store, v, out.sources_, pos);
  out.inverse_.resize(n);
  out.nodes_.resize(n);
  out.de_.resize(n * out.de_width_);
  out.q_.resize(n * out.F_);
  Scratch scratch;
  const std::size_t count =
      reduce_link(store, proj, u, v, out.sources_, n_u, out.inverse_, out.nodes_, out.de_, out.q_, scratch);
  out.nodes_.resize(count);
  out.de_.resize(count * out.de_width_);
  out.q_.resize(count * out.F_);
  return out;
}

std::vector<JointFeature> build_joint(const NCacheStore& store, NodeId u, NodeId v, const SelfProjection& proj) {
  return join(store, u, v, proj).to_features();
}

std::vector<JointFeature> naive_joint(const NCacheStore& store, NodeId u, NodeId v, const SelfProjection& proj) {
  const auto& cfg = store.config();
  const std::size_t hops = static_cast<std::size_t>(cfg.K) + 1;
  const NodeId ends[2] = {u, v};

  std::vector<NodeId> candidates;
  auto note = [&](NodeId a) {
    if (a != kEmpty && std::find(candidates.begin(), candidates.end(), a) == candidates.end()) {
      candidates.push_back(a);
    }
  };
  for (NodeId w : ends) {
    note(w);
    for (int k = 1; k <= cfg.K; ++k) {
      for (NodeId key : store.keys(w, k)) note(key);
    }
  }

  std::vector<double> projected[2] = {std::vector<double>(cfg.F), std::vector<double>(cfg.F)};
  proj.apply(store.self(u), projected[0]);
  proj.apply(store.self(v), projected[1]);

  std::vector<JointFeature> out;
  for (NodeId a : candidates) {
    JointFeature feat{a, std::vector<std::uint8_t>(2 * hops, 0), std::vector<double>(cfg.F, 0.0)};
    for (std::size_t side = 0; side < 2; ++side) {
      const NodeId w = ends[side];
      if (a == w) {
        feat.de[side * hops] = 1;
        for (std::size_t f = 0; f < cfg.F; ++f) feat.q[f] += projected[side][f];
      }
      for (int k = 1; k <= cfg.K; ++k) {
        const auto keys = store.keys(w, k);
        for (std::size_t p = 0; p < keys.size(); ++p) {
          if (keys[p] != a) continue;
          feat.de[side * hops + static_cast<std::size_t>(k)] = 1;
          const auto val = store.value(w, k, p);
          for (std::size_t f = 0; f < cfg.F; ++f) feat.q[f] += val[f];
        }
      }
    }
    out.push_back(std::move(feat));
  }
  return out;
}

JointView JointBatch::link(std::size_t i) const {
  const std::size_t off = entry_offset_[i];
  const std::size_t n = entry_offset_[i + 1] - off;
  const std::size_t c = feature_count_[i];
  return {de_width_,
          F_,
          std::span(nodes_).subspan(off, c),
          std::span(de_).subspan(off * de_width_, c * de_width_),
          std::span(q_).subspan(off * F_, c * F_),
          std::span(sources_).subspan(off, n),
          std::span(inverse_).subspan(off, n)};
}

class JointBatchBuilder {
 public:
  static JointBatch build(const NCacheStore& store, std::span<const Link> links, const SelfProjection& proj,
                          bool parallel) {
    const auto& cfg = store.config();
    JointBatch out;
    out.de_width_ = de_width(cfg.K);
    out.F_ = cfg.F;
    const auto m = static_cast<std::ptrdiff_t>(links.size());
    std::vector<std::size_t> n_u(links.size());
    out.entry_offset_.assign(links.size() + 1, 0);
    for (std::size_t i = 0; i < links.size(); ++i) {
      n_u[i] = count_entries(store, links[i].u);
      out.entry_offset_[i + 1] = out.entry_offset_[i] + n_u[i] + count_entries(store, links[i].v);
    }
    const std::size_t total = out.entry_offset_.back();
    out.sources_.resize(total);
    out.inverse_.resize(total);
    out.nodes_.resize(total);
    out.de_.resize(total * out.de_width_);
    out.q_.resize(total * out.F_);
    out.feature_count_.assign(links.size(), 0);

#pragma omp parallel if (parallel)
    {
      Scratch scratch;
#pragma omp for schedule(dynamic, 4)
      for (std::ptrdiff_t li = 0; li < m; ++li) {
        const auto i = static_cast<std::size_t>(li);
        const std::size_t off = out.entry_offset_[i];
        const std::size_t n = out.entry_offset_[i + 1] - off;
        auto entries = std::span(out.sources_).subspan(off, n);
        std::size_t pos = 0;
        gather_entries(store, links[i].u, entries, pos);
        gather_entries(store, links[i].v, entries, pos);
        out.feature_count_[i] = reduce_link(
            store, proj, links[i].u, links[i].v, entries, n_u[i], std::span(out.inverse_).subspan(off, n),
            std::span(out.nodes_).subspan(off, n), std::span(out.de_).subspan(off * out.de_width_, n * out.de_width_),
            std::span(out.q_).subspan(off * out.F_, n * out.F_), scratch);
      }
    }
    return out;
  }
};

JointBatch build_joint_batch(const NCacheStore& store, std::span<const Link> links, const SelfProjection& proj) {
  return JointBatchBuilder::build(store, links, proj, true);
}

JointBatch build_joint_batch_serial(const NCacheStore& store, std::span<const Link> links,
                                    const SelfProjection& proj) {
  return JointBatchBuilder::build(store, links, proj, false);
}

}  // namespace nat::features
