#include "nat/temporal_graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>

namespace nat::graph {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ',' || std::isspace(static_cast<unsigned char>(line[i])))) {
      ++i;
    }
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && line[j] != ',' && !std::isspace(static_cast<unsigned char>(line[j]))) {
      ++j;
    }
    out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

// Comma-separated only; empty fields are kept so width errors are caught.
std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!field.empty() && std::isspace(static_cast<unsigned char>(field.front()))) field.remove_prefix(1);
    while (!field.empty() && std::isspace(static_cast<unsigned char>(field.back()))) field.remove_suffix(1);
    out.push_back(field);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_id(std::string_view s, std::uint64_t& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec == std::errc{} && ptr == s.data() + s.size()) return true;
  // Some exports write integral ids as "12.0".
  double d = 0.0;
  if (parse_double(s, d) && d >= 0.0 && d == std::floor(d) && d < 1.8e19) {
    out = static_cast<std::uint64_t>(d);
    return true;
  }
  return false;
}

[[noreturn]] void fail_line(std::size_t line_no, const std::string& what) {
  throw InputError("line " + std::to_string(line_no) + ": " + what);
}

struct RawEdge {
  std::uint64_t src;
  std::uint64_t dst;
  double t;
  std::vector<double> feat;
};

void sort_by_time(std::vector<TemporalEdge>& edges) {
  std::stable_sort(edges.begin(), edges.end(),
                   [](const TemporalEdge& a, const TemporalEdge& b) { return a.t < b.t; });
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return in;
}

}  // namespace

void Dataset::validate() const {
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const auto& e = edges[i];
    if (e.src == kEmpty || e.dst == kEmpty || e.src > num_nodes || e.dst > num_nodes) {
      throw InputError("edge " + std::to_string(i) + " has node id outside [1, num_nodes]");
    }
    if (e.feat.size() != d_e) {
      throw InputError("edge " + std::to_string(i) + " has feature width " +
                       std::to_string(e.feat.size()) + ", expected " + std::to_string(d_e));
    }
    if (i > 0 && edges[i - 1].t > e.t) {
      throw InputError("edges not sorted by time at index " + std::to_string(i));
    }
  }
  if (d_n > 0 && node_feats.size() != (num_nodes + 1) * d_n) {
    throw InputError("node feature matrix has wrong size");
  }
}

std::vector<NodeId> Dataset::destination_universe() const {
  std::vector<NodeId> out;
  out.reserve(edges.size());
  for (const auto& e : edges) out.push_back(e.dst);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Dataset make_dataset(std::vector<TemporalEdge> edges, std::size_t num_nodes) {
  Dataset ds;
  sort_by_time(edges);
  std::size_t max_id = 0;
  for (const auto& e : edges) max_id = std::max<std::size_t>({max_id, e.src, e.dst});
  ds.num_nodes = std::max(num_nodes, max_id);
  ds.d_e = edges.empty() ? 0 : edges.front().feat.size();
  ds.edges = std::move(edges);
  ds.original_ids.resize(ds.num_nodes + 1);
  for (std::size_t i = 0; i <= ds.num_nodes; ++i) ds.original_ids[i] = i;
  ds.validate();
  return ds;
}

Dataset parse_jodie_csv(std::istream& in) {
  std::vector<RawEdge> raw;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  bool width_known = false;
  bool first_row = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto fields = split_csv(line);
    std::uint64_t user = 0;
    if (std::exchange(first_row, false) && !parse_id(fields[0], user)) continue;  // header
    if (fields.size() < 4) fail_line(line_no, "expected user,item,timestamp,state_label[,features]");
    RawEdge r{};
    if (!parse_id(fields[0], r.src)) fail_line(line_no, "bad user id '" + std::string(fields[0]) + "'");
    if (!parse_id(fields[1], r.dst)) fail_line(line_no, "bad item id '" + std::string(fields[1]) + "'");
    if (!parse_double(fields[2], r.t)) fail_line(line_no, "bad timestamp '" + std::string(fields[2]) + "'");
    if (r.t < 0.0) fail_line(line_no, "negative timestamp");
    double label = 0.0;
    if (!parse_double(fields[3], label)) fail_line(line_no, "bad state label");
    const std::size_t nf = fields.size() - 4;
    if (!width_known) {
      width = nf;
      width_known = true;
    } else if (nf != width) {
      fail_line(line_no, "feature width " + std::to_string(nf) + " differs from " + std::to_string(width));
    }
    r.feat.resize(nf);
    for (std::size_t k = 0; k < nf; ++k) {
      if (!parse_double(fields[4 + k], r.feat[k])) fail_line(line_no, "bad feature value");
    }
    raw.push_back(std::move(r));
  }
  if (raw.empty()) throw InputError("no edges");

  std::map<std::uint64_t, NodeId> users;
  std::map<std::uint64_t, NodeId> items;
  for (const auto& r : raw) {
    users.emplace(r.src, 0);
    items.emplace(r.dst, 0);
  }
  Dataset ds;
  ds.bipartite = true;
  ds.num_users = users.size();
  ds.num_nodes = users.size() + items.size();
  ds.d_e = width;
  ds.original_ids.assign(ds.num_nodes + 1, 0);
  NodeId next = 1;
  for (auto& [label, id] : users) {
    id = next++;
    ds.original_ids[id] = label;
  }
  for (auto& [label, id] : items) {
    id = next++;
    ds.original_ids[id] = label;
  }
  ds.edges.reserve(raw.size());
  for (auto& r : raw) {
    ds.edges.push_back({users.at(r.src), items.at(r.dst), r.t, std::move(r.feat)});
  }
  sort_by_time(ds.edges);
  ds.validate();
  return ds;
}

Dataset load_jodie_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_jodie_csv(in);
}

Dataset parse_edge_list(std::istream& in) {
  std::vector<RawEdge> raw;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#' || line[first] == '%') continue;
    auto fields = split_fields(line);
    if (fields.size() != 3 && fields.size() != 4) fail_line(line_no, "expected 'src dst t'");
    RawEdge r{};
    if (!parse_id(fields[0], r.src)) fail_line(line_no, "bad source id '" + std::string(fields[0]) + "'");
    if (!parse_id(fields[1], r.dst)) fail_line(line_no, "bad destination id '" + std::string(fields[1]) + "'");
    if (!parse_double(fields.back(), r.t)) fail_line(line_no, "bad timestamp '" + std::string(fields.back()) + "'");
    if (r.t < 0.0) fail_line(line_no, "negative timestamp");
    raw.push_back(std::move(r));
  }
  if (raw.empty()) throw InputError("no edges");

  std::map<std::uint64_t, NodeId> ids;
  for (const auto& r : raw) {
    ids.emplace(r.src, 0);
    ids.emplace(r.dst, 0);
  }
  Dataset ds;
  ds.num_nodes = ids.size();
  ds.original_ids.assign(ds.num_nodes + 1, 0);
  NodeId next = 1;
  for (auto& [label, id] : ids) {
    id = next++;
    ds.original_ids[id] = label;
  }
  ds.edges.reserve(raw.size());
  for (const auto& r : raw) ds.edges.push_back({ids.at(r.src), ids.at(r.dst), r.t, {}});
  sort_by_time(ds.edges);
  ds.validate();
  return ds;
}

Dataset load_edge_list(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_edge_list(in);
}

void write_edge_list(const Dataset& ds, std::ostream& out) {
  char buf[64];
  for (const auto& e : ds.edges) {
    auto res = std::to_chars(buf, buf + sizeof(buf), e.t);
    out << ds.original_ids.at(e.src) << ' ' << ds.original_ids.at(e.dst) << ' '
        << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf)) << '\n';
  }
}

void save_edge_list(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  write_edge_list(ds, out);
}

bool SplitPlan::is_masked(NodeId n) const {
  return std::binary_search(masked_nodes.begin(), masked_nodes.end(), n);
}

SplitPlan chronological_split(const Dataset& ds, double train_frac, double val_frac) {
  if (!(train_frac > 0.0) || !(val_frac > 0.0) || !(train_frac + val_frac < 1.0)) {
    throw InputError("split fractions must satisfy 0 < train, 0 < val, train + val < 1");
  }
  const auto n = static_cast<double>(ds.edges.size());
  // The epsilon absorbs representation error in products such as 0.85 * 100.
  constexpr double kEps = 1e-9;
  SplitPlan plan;
  plan.num_edges = ds.edges.size();
  plan.train_end = static_cast<std::size_t>(std::floor(train_frac * n + kEps));
  plan.val_end = static_cast<std::size_t>(std::floor((train_frac + val_frac) * n + kEps));
  plan.val_end = std::clamp(plan.val_end, plan.train_end, plan.num_edges);
  return plan;
}

SplitPlan inductive_mask(const Dataset& ds, SplitPlan plan, double p, std::uint64_t seed) {
  std::vector<NodeId> candidates;
  for (std::size_t i = plan.train_end; i < plan.num_edges; ++i) {
    candidates.push_back(ds.edges[i].src);
    candidates.push_back(ds.edges[i].dst);
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  plan.masked_nodes.clear();
  for (NodeId n : candidates) {
    if (unif(rng) < p) plan.masked_nodes.push_back(n);
  }
  plan.seed = seed;
  return plan;
}

std::span<const TemporalEdge> train_segment(const Dataset& ds, const SplitPlan& plan) {
  return std::span(ds.edges).subspan(0, plan.train_end);
}

std::span<const TemporalEdge> val_segment(const Dataset& ds, const SplitPlan& plan) {
  return std::span(ds.edges).subspan(plan.train_end, plan.val_end - plan.train_end);
}

std::span<const TemporalEdge> test_segment(const Dataset& ds, const SplitPlan& plan) {
  return std::span(ds.edges).subspan(plan.val_end, plan.num_edges - plan.val_end);
}

std::vector<TemporalEdge> unmasked_edges(std::span<const TemporalEdge> segment, const SplitPlan& plan) {
  std::vector<TemporalEdge> out;
  for (const auto& e : segment) {
    if (!plan.is_masked(e.src) && !plan.is_masked(e.dst)) out.push_back(e);
  }
  return out;
}

std::vector<TemporalEdge> masked_edges(std::span<const TemporalEdge> segment, const SplitPlan& plan) {
  std::vector<TemporalEdge> out;
  for (const auto& e : segment) {
    if (plan.is_masked(e.src) || plan.is_masked(e.dst)) out.push_back(e);
  }
  return out;
}

void write_split_plan(const SplitPlan& plan, std::ostream& out) {
  out << "nat-split 1\n"
      << "num_edges " << plan.num_edges << '\n'
      << "train_end " << plan.train_end << '\n'
      << "val_end " << plan.val_end << '\n'
      << "seed " << plan.seed << '\n'
      << "masked " << plan.masked_nodes.size();
  for (NodeId n : plan.masked_nodes) out << ' ' << n;
  out << '\n';
}

SplitPlan read_split_plan(std::istream& in) {
  std::string tag;
  int version = 0;
  if (!(in >> tag >> version) || tag != "nat-split" || version != 1) {
    throw InputError("not a split plan (expected 'nat-split 1' header)");
  }
  SplitPlan plan;
  auto expect = [&](const char* key, auto& value) {
    std::string k;
    if (!(in >> k >> value) || k != key) throw InputError(std::string("split plan: missing ") + key);
  };
  std::size_t count = 0;
  expect("num_edges", plan.num_edges);
  expect("train_end", plan.train_end);
  expect("val_end", plan.val_end);
  expect("seed", plan.seed);
  expect("masked", count);
  plan.masked_nodes.resize(count);
  for (auto& n : plan.masked_nodes) {
    if (!(in >> n)) throw InputError("split plan: truncated masked node list");
  }
  if (!(plan.train_end <= plan.val_end && plan.val_end <= plan.num_edges)) {
    throw InputError("split plan: inconsistent boundaries");
  }
  if (!std::is_sorted(plan.masked_nodes.begin(), plan.masked_nodes.end())) {
    throw InputError("split plan: masked node list not sorted");
  }
  return plan;
}

std::vector<NodeId> sample_negatives(std::span<const TemporalEdge> batch,
                                     std::span<const NodeId> universe, std::uint64_t seed) {
  if (universe.empty()) throw InputError("negative sampling universe is empty");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, universe.size() - 1);
  std::vector<NodeId> out(batch.size());
  for (auto& n : out) n = universe[pick(rng)];
  return out;
}

std::set<NodeId> khop_neighborhood(std::span<const TemporalEdge> edges, NodeId v, double t, int k) {
  if (k < 1) throw InputError("khop_neighborhood requires k >= 1");
  std::unordered_map<NodeId, std::set<NodeId>> adj;
  for (const auto& e : edges) {
    if (!(e.t < t)) continue;
    adj[e.src].insert(e.dst);
    adj[e.dst].insert(e.src);
  }
  std::set<NodeId> frontier{v};
  for (int step = 0; step < k; ++step) {
    std::set<NodeId> next;
    for (NodeId x : frontier) {
      auto it = adj.find(x);
      if (it != adj.end()) next.insert(it->second.begin(), it->second.end());
    }
    frontier = std::move(next);
  }
  return frontier;
}

}  // namespace nat::graph
