#include "nat/eval.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <optional>

#include "nat/joint_features.hpp"
#include "nat/model.hpp"

namespace nat::eval {

namespace {

void check_lengths(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InputError("scores and labels differ in length");
}

}  // namespace

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] == 0) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  if (hits == 0) throw InputError("average precision needs at least one positive");
  return sum / static_cast<double>(hits);
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the mid-rank sum of positives keeps everything integral.
  double rank2 = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid2 = static_cast<double>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] != 0) {
        rank2 += mid2;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw InputError("AUC needs both positive and negative labels");
  const double p = static_cast<double>(pos);
  const double pairs2 = rank2 - p * (p + 1.0);
  return pairs2 / (2.0 * p * static_cast<double>(neg));
}

const char* to_string(Split s) { return s == Split::val ? "val" : "test"; }
const char* to_string(Mode m) { return m == Mode::transductive ? "transductive" : "inductive"; }

std::uint64_t split_seed(std::uint64_t seed, Split split) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (split == Split::val ? 11 : 13);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

EvalReport evaluate_stream(cache::NCacheStore& store, const neural::Model& model,
                           std::span<const graph::TemporalEdge> edges, std::span<const NodeId> negatives,
                           const StreamOptions& opts) {
  if (edges.empty()) throw InputError("nothing to evaluate");
  if (negatives.size() != edges.size()) throw InputError("need one negative per evaluated edge");
  if (opts.batch_size == 0) throw InputError("evaluation batch size must be at least 1");
  const auto start = std::chrono::steady_clock::now();
  std::optional<cache::CacheSnapshot> saved;
  if (!opts.commit_updates) saved.emplace(store);

  EvalReport rep;
  rep.split = opts.split;
  rep.mode = opts.mode;
  rep.scores.resize(2 * edges.size());
  rep.labels.resize(2 * edges.size());
  const auto proj = model.projection();
  std::vector<features::Link> links;
  for (std::size_t begin = 0; begin < edges.size(); begin += opts.batch_size) {
    const std::size_t m = std::min(opts.batch_size, edges.size() - begin);
    const auto batch = edges.subspan(begin, m);
    links.resize(2 * m);
    for (std::size_t i = 0; i < m; ++i) {
      links[2 * i] = {batch[i].src, batch[i].dst};
      links[2 * i + 1] = {batch[i].src, negatives[begin + i]};
    }
    const auto feats = features::build_joint_batch(store, links, proj);
    double* out = rep.scores.data() + 2 * begin;
#pragma omp parallel for schedule(dynamic, 4)
    for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(2 * m); ++j) {
      out[j] = neural::sigmoid(model.readout(feats.link(static_cast<std::size_t>(j))));
    }
    for (std::size_t i = 0; i < m; ++i) {
      rep.labels[2 * (begin + i)] = 1;
      rep.labels[2 * (begin + i) + 1] = 0;
    }
    cache::apply_batch(store, batch, model);
  }
  if (saved) cache::restore(store, *saved);

  rep.n_pos = edges.size();
  rep.n_neg = edges.size();
  rep.ap = average_precision(rep.scores, rep.labels);
  rep.auc = auc(rep.scores, rep.labels);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

EvalReport evaluate_stream(cache::NCacheStore& store, const neural::Model& model,
                           std::span<const graph::TemporalEdge> edges, std::span<const NodeId> universe,
                           std::uint64_t seed, const StreamOptions& opts) {
  if (edges.empty()) throw InputError("nothing to evaluate");
  const auto negatives = graph::sample_negatives(edges, universe, seed);
  return evaluate_stream(store, model, edges, negatives, opts);
}

EvalReport evaluate_inductive(const graph::Dataset& ds, const graph::SplitPlan& plan, const neural::Model& model,
                              const cache::CacheConfig& cache_cfg, std::uint64_t seed, bool replay,
                              std::size_t batch_size) {
  const auto test = graph::masked_edges(graph::test_segment(ds, plan), plan);
  if (test.empty()) throw InputError("no test edges touch a masked node; the inductive test set is empty");
  auto cfg = neural::cache_config_for(cache_cfg, model.config());
  cfg.num_nodes = std::max(cfg.num_nodes, ds.num_nodes);
  cache::NCacheStore store(cfg);

  const auto train = graph::train_segment(ds, plan);
  const auto val = graph::val_segment(ds, plan);
  std::vector<graph::TemporalEdge> history;
  if (replay) {
    history.assign(train.begin(), train.end());
    history.insert(history.end(), val.begin(), val.end());
  } else {
    history = graph::unmasked_edges(train, plan);
    const auto v = graph::unmasked_edges(val, plan);
    history.insert(history.end(), v.begin(), v.end());
  }
  for (std::size_t begin = 0; begin < history.size(); begin += batch_size) {
    const auto part = std::span(history).subspan(begin, std::min(batch_size, history.size() - begin));
    cache::apply_batch(store, part, model);
  }
  StreamOptions opts{batch_size, true, Split::test, Mode::inductive};
  return evaluate_stream(store, model, test, ds.destination_universe(), split_seed(seed, Split::test), opts);
}

}  // namespace nat::eval
