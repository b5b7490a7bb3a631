#pragma once

// Loss, optimizer and the lag-one training loop.
//
// Batch i is trained against a store that already holds batch i-1's cache
// writes. Those writes are recomputed from their recorded inputs with the
// current parameters, so the recurrent cells receive gradient through the
// values they wrote one batch earlier. Everything older is detached.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nat/eval.hpp"
#include "nat/model.hpp"
#include "nat/ncache.hpp"
#include "nat/temporal_graph.hpp"

namespace nat::neural {

struct TrainConfig {
  std::size_t batch_size = 100;
  std::size_t eval_batch_size = 32;
  double lr = 1e-4;
  std::size_t epochs_max = 50;
  std::size_t patience = 5;
  double min_delta = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

class Adam {
 public:
  explicit Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::span<double> params, std::span<const double> grad);
  std::uint64_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<double> m_, v_;
};

/// Numerically stable -[y log s(z) + (1-y) log(1-s(z))].
double bce_with_logit(double logit, double label);

/// Holds the previous batch's deltas between training steps.
struct LagState {
  std::vector<cache::CacheDelta> deltas;
  bool empty() const { return deltas.empty(); }
};

struct BatchResult {
  double loss = 0.0;
  std::vector<double> grad;  // same layout as the parameters
};

/// Steps (a) and (b)-(c) without the optimizer update: re-applies `lag` to
/// `store` with the model's current parameters, scores `positives` and the
/// (u, negative) pairs, and returns the mean BCE and its gradient.
/// `batch_index` is only used in error messages.
BatchResult loss_batch(cache::NCacheStore& store, const Model& model, const LagState& lag,
                       std::span<const graph::TemporalEdge> positives, std::span<const NodeId> negatives,
                       std::size_t batch_index = 0);

/// Reference loss for finite differences: copies `pre_lag`, applies the lag
/// batch with the model's parameters, and evaluates the loss on `positives`.
double lagged_loss(const cache::NCacheStore& pre_lag, const Model& model,
                   std::span<const graph::TemporalEdge> lag_events,
                   std::span<const graph::TemporalEdge> positives, std::span<const NodeId> negatives);

struct EpochStats {
  double mean_loss = 0.0;
  std::size_t batches = 0;
  std::vector<double> batch_losses;
};

/// One chronological pass. `store` should start empty; afterwards it holds
/// the caches after the whole stream.
EpochStats train_epoch(cache::NCacheStore& store, Model& model, Adam& opt,
                       std::span<const graph::TemporalEdge> stream, std::span<const NodeId> universe,
                       const TrainConfig& cfg, std::uint64_t epoch);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_ap = 0.0;
  double val_auc = 0.0;
  double seconds = 0.0;
};

struct FitResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_ap = 0.0;
  eval::EvalReport val;
  eval::EvalReport test;
};

/// Timestamps are normalized by the training span: origin at the first
/// training edge, one unit equal to a hundredth of the span.
void set_time_normalization(ModelConfig& cfg, std::span<const graph::TemporalEdge> train);

/// Trains on the unmasked training edges with early stopping on validation
/// AP, restores the best parameters into `model`, then reports transductive
/// validation and test metrics after a fresh replay of the training stream.
FitResult fit(const graph::Dataset& ds, const graph::SplitPlan& plan, const cache::CacheConfig& cache_cfg,
              Model& model, const TrainConfig& cfg,
              const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace nat::neural
