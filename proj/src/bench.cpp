#include "nat/bench.hpp"

#include <algorithm>
#include <chrono>
#include <limits>

#include "nat/joint_features.hpp"

namespace nat::bench {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

ThroughputRecord record(std::string kernel, bool parallel, std::size_t batch, std::size_t items, double seconds) {
  return {std::move(kernel), parallel ? "parallel" : "serial", batch, items, seconds,
          seconds > 0.0 ? static_cast<double>(items) / seconds : 0.0};
}

}  // namespace

std::vector<ThroughputRecord> measure(std::span<const graph::TemporalEdge> events, const cache::CacheConfig& cfg,
                                      const neural::Model& model, std::span<const std::size_t> batch_sizes,
                                      std::size_t repeats) {
  if (repeats == 0) throw InputError("repeats must be at least 1");
  std::vector<ThroughputRecord> out;
  if (events.empty()) throw InputError("benchmark stream is empty");
  std::vector<features::Link> links(events.size());
  std::transform(events.begin(), events.end(), links.begin(),
                 [](const graph::TemporalEdge& e) { return features::Link{e.src, e.dst}; });
  const auto proj = model.projection();

  for (const std::size_t b : batch_sizes) {
    if (b == 0) throw InputError("batch size must be at least 1");
    for (const bool parallel : {true, false}) {
      double apply_best = std::numeric_limits<double>::infinity();
      double build_best = std::numeric_limits<double>::infinity();
      std::size_t features = 0;
      for (std::size_t rep = 0; rep < repeats; ++rep) {
        cache::NCacheStore store(cfg);
        auto start = Clock::now();
        for (std::size_t i = 0; i < events.size(); i += b) {
          const auto part = events.subspan(i, std::min(b, events.size() - i));
          if (parallel) {
            cache::apply_batch(store, part, model);
          } else {
            cache::apply_batch_serial(store, part, model);
          }
        }
        apply_best = std::min(apply_best, since(start));

        start = Clock::now();
        features = 0;
        for (std::size_t i = 0; i < links.size(); i += b) {
          const auto part = std::span(links).subspan(i, std::min(b, links.size() - i));
          const auto batch = parallel ? features::build_joint_batch(store, part, proj)
                                      : features::build_joint_batch_serial(store, part, proj);
          features += batch.num_links();
        }
        build_best = std::min(build_best, since(start));
      }
      out.push_back(record("apply_batch", parallel, b, events.size(), apply_best));
      out.push_back(record("build_joint_batch", parallel, b, features, build_best));
    }
  }
  return out;
}

std::size_t scalars_per_node(const cache::CacheConfig& cfg) {
  auto one = cfg;
  one.num_nodes = 1;
  const cache::NCacheStore store(one);
  std::size_t n = store.self(1).size();
  for (int k = 1; k <= cache::kMaxHop; ++k) {
    const auto keys = store.keys(1, k);
    for (std::size_t s = 0; s < keys.size(); ++s) n += 1 + store.value(1, k, s).size();
  }
  return n;
}

}  // namespace nat::bench
