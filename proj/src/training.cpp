#include "nat/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "nat/joint_features.hpp"

namespace nat::neural {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

bool all_zero(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0 || eval_batch_size == 0) throw InputError("batch sizes must be at least 1");
  if (patience == 0) throw InputError("patience must be at least 1");
  if (!(lr > 0.0)) throw InputError("learning rate must be positive");
}

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw Error("optimizer size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

double bce_with_logit(double z, double y) { return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))); }

BatchResult loss_batch(cache::NCacheStore& store, const Model& model, const LagState& lag,
                       std::span<const graph::TemporalEdge> positives, std::span<const NodeId> negatives,
                       std::size_t batch_index) {
  if (positives.size() != negatives.size()) throw InputError("need one negative per positive");
  if (positives.empty()) throw InputError("empty training batch");
  const auto& cfg = model.config();
  const auto& L = model.layout();
  const auto params = model.params();
  const bool linear = cfg.ablations.rnn_as_linear;
  const std::size_t F = cfg.F;
  const std::size_t d0 = cfg.d0;
  const std::size_t gin = cfg.gru_input();

  BatchResult out;
  out.grad.assign(L.total, 0.0);

  // (a) re-apply the previous batch's writes with the current parameters
  std::vector<cache::CacheDelta> deltas = lag.deltas;
  const auto nd = deltas.size();
  std::vector<GruTrace> tr0(nd), tr1(nd);
  std::vector<std::vector<double>> xs(nd);
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(nd); ++si) {
    const auto i = static_cast<std::size_t>(si);
    auto& d = deltas[i];
    xs[i].resize(gin);
    model.encoder_input({d.prev_self, d.partner_self, d.t, d.feat}, xs[i]);
    gru_forward(params, L.gru0, d.prev_self, xs[i], d.self, linear, &tr0[i]);
    if (d.hop1_written) gru_forward(params, L.gru1, d.prev_edge, xs[i], d.hop1_value, linear, &tr1[i]);
  }
  cache::CommitLog log;
  cache::commit(store, deltas, &log);

  // (b) score positives then negatives
  const std::size_t B = positives.size();
  const std::size_t n_links = 2 * B;
  std::vector<features::Link> links(n_links);
  for (std::size_t j = 0; j < B; ++j) {
    links[j] = {positives[j].src, positives[j].dst};
    links[B + j] = {positives[j].src, negatives[j]};
  }
  const auto proj = model.projection();
  const auto batch = features::build_joint_batch(store, links, proj);

  const std::size_t tail = L.total - L.readout_begin;
  std::vector<double> tail_grads(n_links * tail, 0.0);
  std::vector<std::vector<double>> dq(n_links);
  std::vector<double> losses(n_links);
  const double scale = 1.0 / static_cast<double>(n_links);
#pragma omp parallel
  {
    ReadoutTrace trace;
#pragma omp for schedule(dynamic, 4)
    for (std::ptrdiff_t sj = 0; sj < static_cast<std::ptrdiff_t>(n_links); ++sj) {
      const auto j = static_cast<std::size_t>(sj);
      const auto view = batch.link(j);
      const double y = j < B ? 1.0 : 0.0;
      const double z = model.readout(view, &trace);
      losses[j] = bce_with_logit(z, y);
      dq[j].assign(view.size() * F, 0.0);
      model.readout_backward(trace, (sigmoid(z) - y) * scale, std::span(tail_grads).subspan(j * tail, tail), dq[j]);
    }
  }

  double total = 0.0;
  for (std::size_t j = 0; j < n_links; ++j) {
    total += losses[j];
    const double* src = tail_grads.data() + j * tail;
    double* dst = out.grad.data() + L.readout_begin;
    for (std::size_t k = 0; k < tail; ++k) dst[k] += src[k];
  }
  out.loss = total * scale;
  if (!std::isfinite(out.loss)) {
    throw Error("non-finite loss in training batch " + std::to_string(batch_index));
  }

  // (c) pooled values back to the cache entries they came from
  std::vector<std::vector<double>> dself(nd), dedge(nd);
  const double* W = params.data() + L.proj.W;
  for (std::size_t j = 0; j < n_links; ++j) {
    const auto view = batch.link(j);
    for (std::size_t e = 0; e < view.sources.size(); ++e) {
      const auto& src = view.sources[e];
      if (src.hop == 2) continue;  // copied from a partner, detached
      const double* g = dq[j].data() + static_cast<std::size_t>(view.inverse[e]) * F;
      const auto writer = log.writer(src);
      if (src.hop == 0) {
        const auto z = store.self(src.node);
        for (std::size_t f = 0; f < F; ++f) {
          double* row = out.grad.data() + L.proj.W + f * d0;
          for (std::size_t k = 0; k < d0; ++k) row[k] += g[f] * z[k];
          out.grad[L.proj.b + f] += g[f];
        }
        if (!writer) continue;
        auto& acc = dself[*writer];
        if (acc.empty()) acc.assign(d0, 0.0);
        for (std::size_t f = 0; f < F; ++f) {
          for (std::size_t k = 0; k < d0; ++k) acc[k] += W[f * d0 + k] * g[f];
        }
      } else if (writer) {
        auto& acc = dedge[*writer];
        if (acc.empty()) acc.assign(F, 0.0);
        for (std::size_t f = 0; f < F; ++f) acc[f] += g[f];
      }
    }
  }

  // recurrent cells, in delta order
  std::vector<double> dx(gin);
  const std::size_t half = cfg.d_t / 2;
  for (std::size_t i = 0; i < nd; ++i) {
    const bool s = !dself[i].empty() && !all_zero(dself[i]);
    const bool h = !dedge[i].empty() && !all_zero(dedge[i]);
    if (!s && !h) continue;
    const auto& d = deltas[i];
    std::fill(dx.begin(), dx.end(), 0.0);
    if (s) gru_backward(params, L.gru0, d.prev_self, xs[i], linear, tr0[i], dself[i], out.grad, {}, dx);
    if (h) gru_backward(params, L.gru1, d.prev_edge, xs[i], linear, tr1[i], dedge[i], out.grad, {}, dx);
    if (cfg.ablations.no_tenc) continue;
    const double t = model.scaled_time(d.t);
    for (std::size_t k = 0; k < half; ++k) {
      const double w = params[L.omega + k];
      out.grad[L.omega + k] += -t * std::sin(w * t) * dx[d0 + 2 * k] + t * std::cos(w * t) * dx[d0 + 2 * k + 1];
    }
  }
  return out;
}

double lagged_loss(const cache::NCacheStore& pre_lag, const Model& model,
                   std::span<const graph::TemporalEdge> lag_events, std::span<const graph::TemporalEdge> positives,
                   std::span<const NodeId> negatives) {
  cache::NCacheStore store = pre_lag;
  cache::apply_batch(store, lag_events, model);
  return loss_batch(store, model, LagState{}, positives, negatives).loss;
}

EpochStats train_epoch(cache::NCacheStore& store, Model& model, Adam& opt,
                       std::span<const graph::TemporalEdge> stream, std::span<const NodeId> universe,
                       const TrainConfig& cfg, std::uint64_t epoch) {
  cfg.validate();
  EpochStats stats;
  LagState lag;
  double total = 0.0;
  for (std::size_t begin = 0, b = 0; begin < stream.size(); begin += cfg.batch_size, ++b) {
    const auto batch = stream.subspan(begin, std::min(cfg.batch_size, stream.size() - begin));
    const auto negatives = graph::sample_negatives(batch, universe, mix(mix(cfg.seed, epoch), b));
    const auto res = loss_batch(store, model, lag, batch, negatives, b);
    opt.step(model.params(), res.grad);
    lag.deltas = cache::compute_batch(store, batch, model);
    cache::commit(store, lag.deltas);
    store.advance_events(batch.size());
    stats.batch_losses.push_back(res.loss);
    total += res.loss;
  }
  stats.batches = stats.batch_losses.size();
  stats.mean_loss = stats.batches ? total / static_cast<double>(stats.batches) : 0.0;
  return stats;
}

void set_time_normalization(ModelConfig& cfg, std::span<const graph::TemporalEdge> train) {
  if (train.empty()) {
    cfg.time_origin = 0.0;
    cfg.time_scale = 1.0;
    return;
  }
  const double span = train.back().t - train.front().t;
  cfg.time_origin = train.front().t;
  cfg.time_scale = span > 0.0 ? span / 100.0 : 1.0;
}

namespace {

void replay(cache::NCacheStore& store, const Model& model, std::span<const graph::TemporalEdge> stream,
            std::size_t batch_size) {
  for (std::size_t begin = 0; begin < stream.size(); begin += batch_size) {
    cache::apply_batch(store, stream.subspan(begin, std::min(batch_size, stream.size() - begin)), model);
  }
}

}  // namespace

FitResult fit(const graph::Dataset& ds, const graph::SplitPlan& plan, const cache::CacheConfig& cache_cfg,
              Model& model, const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  const auto train = graph::unmasked_edges(graph::train_segment(ds, plan), plan);
  const auto val = graph::unmasked_edges(graph::val_segment(ds, plan), plan);
  const auto test = graph::unmasked_edges(graph::test_segment(ds, plan), plan);
  if (train.empty() || val.empty() || test.empty()) throw InputError("a split segment is empty");
  const auto universe = ds.destination_universe();
  auto ccfg = cache_config_for(cache_cfg, model.config());
  ccfg.num_nodes = std::max(ccfg.num_nodes, ds.num_nodes);

  FitResult res;
  Adam opt(model.params().size(), cfg.lr);
  std::vector<double> best(model.params().begin(), model.params().end());
  double best_ap = -std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  eval::StreamOptions vopts{cfg.eval_batch_size, true, eval::Split::val, eval::Mode::transductive};

  for (std::size_t epoch = 0; epoch < cfg.epochs_max; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    cache::NCacheStore store(ccfg);
    const auto stats = train_epoch(store, model, opt, train, universe, cfg, epoch);
    const auto rep = eval::evaluate_stream(store, model, val, universe, eval::split_seed(cfg.seed, eval::Split::val),
                                           vopts);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = stats.mean_loss;
    rec.val_ap = rep.ap;
    rec.val_auc = rep.auc;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    res.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rep.ap > best_ap + cfg.min_delta) {
      best_ap = rep.ap;
      res.best_epoch = epoch;
      std::copy(model.params().begin(), model.params().end(), best.begin());
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  std::copy(best.begin(), best.end(), model.params().begin());
  res.best_val_ap = best_ap;

  cache::NCacheStore store(ccfg);
  replay(store, model, train, cfg.batch_size);
  res.val = eval::evaluate_stream(store, model, val, universe, eval::split_seed(cfg.seed, eval::Split::val), vopts);
  auto topts = vopts;
  topts.split = eval::Split::test;
  topts.commit_updates = false;
  res.test = eval::evaluate_stream(store, model, test, universe, eval::split_seed(cfg.seed, eval::Split::test), topts);
  return res;
}

}  // namespace nat::neural
