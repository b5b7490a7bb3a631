#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "nat/model.hpp"
#include "nat/synth.hpp"
#include "nat/training.hpp"
#include "support.hpp"

using namespace nat;
using namespace nat::neural;

namespace {

ModelConfig small_model(const std::string& ablations = "none") {
  ModelConfig mc;
  mc.d0 = 6;
  mc.F = 3;
  mc.hidden = 5;
  mc.d_t = 4;
  mc.K = 2;
  mc.time_scale = 3.0;
  mc.ablations = Ablations::parse(ablations);
  return mc;
}

cache::CacheConfig small_cache_for(const ModelConfig& mc, std::size_t nodes) {
  cache::CacheConfig cc;
  cc.num_nodes = nodes;
  cc.M1 = 4;
  cc.M2 = 2;
  cc.alpha = 0.9;
  cc.q = 7;
  cc.seed = 3;
  return cache_config_for(cc, mc);
}

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

// Packed features for readout tests.
struct Features {
  std::size_t dw, F;
  std::vector<NodeId> nodes;
  std::vector<std::uint8_t> de;
  std::vector<double> q;

  Features(const ModelConfig& mc, std::size_t n, std::uint64_t seed) : dw(mc.de_width()), F(mc.F) {
    std::mt19937_64 rng(seed);
    for (std::size_t a = 0; a < n; ++a) {
      nodes.push_back(static_cast<NodeId>(a + 1));
      for (std::size_t j = 0; j < dw; ++j) de.push_back(rng() % 2);
      for (double x : random_vector(F, rng)) q.push_back(x);
    }
  }
  void append_row(const Features& other, std::size_t a) {
    nodes.push_back(other.nodes[a]);
    de.insert(de.end(), other.de.begin() + a * dw, other.de.begin() + (a + 1) * dw);
    q.insert(q.end(), other.q.begin() + a * F, other.q.begin() + (a + 1) * F);
  }
  features::JointView view() const { return {dw, F, nodes, de, q, {}, {}}; }
};

struct LagSetup {
  cache::NCacheStore pre;
  std::vector<graph::TemporalEdge> events;
  std::vector<NodeId> negatives{1, 2, 3, 4};

  std::span<const graph::TemporalEdge> lag() const { return std::span(events).subspan(4, 4); }
  std::span<const graph::TemporalEdge> current() const { return std::span(events).subspan(8, 4); }
};

LagSetup lag_setup(const Model& model, std::uint64_t seed) {
  LagSetup s{cache::NCacheStore(small_cache_for(model.config(), 5)), {}};
  std::mt19937_64 rng(seed);
  for (int i = 0; i < 12; ++i) {
    s.events.push_back({static_cast<NodeId>(1 + rng() % 5), static_cast<NodeId>(1 + rng() % 5), double(i), {}});
  }
  cache::apply_batch(s.pre, std::span(s.events).first(4), model);
  return s;
}

BatchResult analytic(const LagSetup& s, const Model& model) {
  cache::NCacheStore store = s.pre;
  LagState lag;
  lag.deltas = cache::compute_batch(store, s.lag(), model);
  cache::commit(store, lag.deltas);
  store.advance_events(s.lag().size());
  return loss_batch(store, model, lag, s.current(), s.negatives);
}

}  // namespace

TEST(Ablations, ParseAndPrint) {
  const auto a = Ablations::parse("no_de,mean_readout");
  EXPECT_TRUE(a.no_de && a.mean_readout && !a.no_hop2);
  EXPECT_EQ(Ablations::parse(a.to_string()), a);
  EXPECT_EQ(Ablations::parse("none"), Ablations{});
  EXPECT_THROW(Ablations::parse("no_such"), InputError);
  EXPECT_EQ(Ablations::parse("no_hop2").hop_limit(2), 1);
  EXPECT_EQ(Ablations::parse("no_hop1_hop2").hop_limit(2), 0);
}

TEST(TimeEncoding, ZeroTime) {
  const std::vector<double> omega{1.0, 0.3, 0.01};
  std::vector<double> out(6);
  time_encode(omega, 0.0, out);
  EXPECT_EQ(out, (std::vector<double>{1, 0, 1, 0, 1, 0}));
}

TEST(TimeEncoding, UnitCirclePairs) {
  std::mt19937_64 rng(1);
  const auto omega = random_vector(8, rng, 5.0);
  std::vector<double> out(16);
  for (double t : {0.5, 3.0, 1234.5}) {
    time_encode(omega, t, out);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(out[2 * i] * out[2 * i] + out[2 * i + 1] * out[2 * i + 1], 1.0, 1e-12);
  }
}

TEST(TimeEncoding, FrequencyGradient) {
  std::mt19937_64 rng(2);
  const auto omega = random_vector(4, rng);
  const auto c = random_vector(8, rng);
  const double t = 1.7;
  auto f = [&](const std::vector<double>& w) {
    std::vector<double> out(8);
    time_encode(w, t, out);
    double s = 0.0;
    for (std::size_t i = 0; i < 8; ++i) s += c[i] * out[i];
    return s;
  };
  for (std::size_t i = 0; i < 4; ++i) {
    const double grad = t * (-c[2 * i] * std::sin(omega[i] * t) + c[2 * i + 1] * std::cos(omega[i] * t));
    auto plus = omega, minus = omega;
    plus[i] += 1e-5;
    minus[i] -= 1e-5;
    EXPECT_LE(rel_error(grad, (f(plus) - f(minus)) / 2e-5), 1e-5);
  }
}

TEST(Gru, ZeroWeightsHalveTheState) {
  const ModelConfig mc = small_model();
  const Model zero(mc, std::vector<double>(ParamLayout::build(mc).total, 0.0));
  const auto& g = zero.layout().gru0;
  std::mt19937_64 rng(1);
  const auto h = random_vector(g.hidden, rng);
  const auto x = random_vector(g.in, rng);
  std::vector<double> out(g.hidden);
  gru_forward(zero.params(), g, h, x, out, false);
  for (std::size_t i = 0; i < g.hidden; ++i) EXPECT_DOUBLE_EQ(out[i], 0.5 * h[i]);
}

TEST(Gru, OutputsBounded) {
  const ModelConfig mc = small_model();
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Model m(mc, random_vector(ParamLayout::build(mc).total, rng, 3.0));
    const auto& g = m.layout().gru1;
    const auto h = random_vector(g.hidden, rng, 2.0);
    const auto x = random_vector(g.in, rng, 4.0);
    std::vector<double> out(g.hidden);
    gru_forward(m.params(), g, h, x, out, false);
    for (std::size_t i = 0; i < g.hidden; ++i) EXPECT_LE(std::abs(out[i]), std::max(std::abs(h[i]), 1.0) + 1e-15);
  }
}

class GruGradient : public ::testing::TestWithParam<bool> {};

TEST_P(GruGradient, MatchesFiniteDifferences) {
  const bool linear = GetParam();
  const ModelConfig mc = small_model();
  std::mt19937_64 rng(4);
  Model m(mc, random_vector(ParamLayout::build(mc).total, rng));
  const auto& g = m.layout().gru0;
  auto h = random_vector(g.hidden, rng);
  auto x = random_vector(g.in, rng);
  const auto c = random_vector(g.hidden, rng);
  auto loss = [&] {
    std::vector<double> out(g.hidden);
    gru_forward(m.params(), g, h, x, out, linear);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += c[i] * out[i];
    return s;
  };
  GruTrace trace;
  std::vector<double> out(g.hidden), grad(m.params().size(), 0.0), dh(g.hidden, 0.0), dx(g.in, 0.0);
  gru_forward(m.params(), g, h, x, out, linear, &trace);
  gru_backward(m.params(), g, h, x, linear, trace, c, grad, dh, dx);
  auto check = [&](double& slot, double analytic_value) {
    const double keep = slot;
    slot = keep + 1e-5;
    const double lp = loss();
    slot = keep - 1e-5;
    const double lm = loss();
    slot = keep;
    EXPECT_LE(rel_error(analytic_value, (lp - lm) / 2e-5), 1e-4);
  };
  const std::size_t begin = g.Wz, end = g.bh + g.hidden;
  for (std::size_t i = begin; i < end; ++i) check(m.params()[i], grad[i]);
  for (std::size_t i = 0; i < h.size(); ++i) check(h[i], dh[i]);
  for (std::size_t i = 0; i < x.size(); ++i) check(x[i], dx[i]);
}

INSTANTIATE_TEST_SUITE_P(Cells, GruGradient, ::testing::Values(false, true));

TEST(Readout, SingletonHasUnitWeight) {
  const ModelConfig mc = small_model();
  const Model m(mc, 5);
  const Features f(mc, 1, 1);
  ReadoutTrace tr;
  m.readout(f.view(), &tr);
  EXPECT_EQ(tr.alpha, std::vector<double>{1.0});
}

TEST(Readout, DuplicatedSetKeepsTheLogit) {
  const ModelConfig mc = small_model();
  const Model m(mc, 5);
  const Features f(mc, 1, 2);
  Features twice = f;
  twice.append_row(f, 0);
  EXPECT_NEAR(m.readout(f.view()), m.readout(twice.view()), 1e-12);
  const Features g(mc, 4, 3);
  Features doubled = g;
  for (std::size_t a = 0; a < 4; ++a) doubled.append_row(g, a);
  EXPECT_NEAR(m.readout(g.view()), m.readout(doubled.view()), 1e-12);
}

TEST(Readout, PermutationInvariant) {
  const ModelConfig mc = small_model();
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Model m(mc, rng());
    const Features f(mc, 2 + rng() % 10, rng());
    std::vector<std::size_t> perm(f.nodes.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Features p(mc, 0, 0);
    for (std::size_t a : perm) p.append_row(f, a);
    EXPECT_NEAR(m.readout(f.view()), m.readout(p.view()), 1e-12);
  }
}

TEST(Readout, SoftmaxWeightsFormADistribution) {
  const ModelConfig mc = small_model();
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Model m(mc, rng());
    for (std::size_t i = 0; i < mc.hidden; ++i) m.params()[m.layout().attn + i] *= 50.0;
    const Features f(mc, 1 + rng() % 20, rng());
    ReadoutTrace tr;
    m.readout(f.view(), &tr);
    double sum = 0.0;
    for (double a : tr.alpha) {
      EXPECT_GE(a, 0.0);
      sum += a;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Readout, EmptySetRejected) {
  const ModelConfig mc = small_model();
  const Model m(mc, 1);
  const Features f(mc, 0, 0);
  EXPECT_THROW(m.readout(f.view()), Error);
}

TEST(Readout, NoDeZeroesOnlyTheDistanceSlice) {
  const ModelConfig plain = small_model();
  const ModelConfig ablated = small_model("no_de");
  const Model base(plain, 8);
  const Model m(ablated, std::vector<double>(base.params().begin(), base.params().end()));
  const Features f(plain, 6, 9);
  ReadoutTrace a, b;
  base.readout(f.view(), &a);
  m.readout(f.view(), &b);
  const std::size_t fw = plain.feature_width(), dw = plain.de_width();
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t j = 0; j < fw; ++j) {
      EXPECT_EQ(b.input[r * fw + j], j < dw ? 0.0 : a.input[r * fw + j]);
    }
  }
}

TEST(Readout, MeanReadoutIsUniform) {
  const ModelConfig mc = small_model("mean_readout");
  const Model m(mc, 3);
  const Features f(mc, 7, 4);
  ReadoutTrace tr;
  m.readout(f.view(), &tr);
  for (double a : tr.alpha) EXPECT_EQ(a, 1.0 / 7.0);
}

TEST(Readout, SelfOnlyAblationSeesTwoFeatures) {
  const ModelConfig mc = small_model("no_hop1_hop2");
  const Model m(mc, 3);
  cache::NCacheStore s(small_cache_for(mc, 6));
  EXPECT_EQ(s.config().K, 0);
  cache::apply_batch(s, fixtures::random_stream(6, 100, 2), m);
  for (NodeId u = 1; u <= 5; ++u) {
    const auto fs = features::build_joint(s, u, u + 1, m.projection());
    EXPECT_EQ(fs.size(), 2u);
    EXPECT_EQ(fs[0].de.size(), 2u);
  }
}

TEST(Readout, NoHop2ShrinksDistanceWidth) {
  EXPECT_EQ(small_model("no_hop2").de_width(), 4u);
  EXPECT_EQ(small_model().de_width(), 6u);
}

TEST(Predict, ZeroParamsGiveOneHalf) {
  const ModelConfig mc = small_model();
  const Model zero(mc, std::vector<double>(ParamLayout::build(mc).total, 0.0));
  cache::NCacheStore s(small_cache_for(mc, 5));
  cache::apply_batch(s, fixtures::random_stream(5, 30, 1), zero);
  EXPECT_EQ(zero.predict(s, 1, 2), 0.5);
}

TEST(Predict, FreshStoreIsSymmetric) {
  const ModelConfig mc = small_model();
  const Model m(mc, 11);
  const cache::NCacheStore s(small_cache_for(mc, 5));
  EXPECT_EQ(m.predict(s, 1, 2), m.predict(s, 1, 3));
}

TEST(Loss, StableCrossEntropy) {
  EXPECT_NEAR(bce_with_logit(0.0, 1.0), std::log(2.0), 1e-15);
  EXPECT_LT(bce_with_logit(60.0, 1.0), 1e-25);
  EXPECT_LT(bce_with_logit(-60.0, 0.0), 1e-25);
  EXPECT_NEAR(bce_with_logit(-800.0, 1.0), 800.0, 1e-9);
  EXPECT_TRUE(std::isfinite(bce_with_logit(800.0, 0.0)));
}

TEST(Loss, ZeroParamsGiveLnTwo) {
  const ModelConfig mc = small_model();
  const Model zero(mc, std::vector<double>(ParamLayout::build(mc).total, 0.0));
  const auto s = lag_setup(zero, 1);
  EXPECT_NEAR(analytic(s, zero).loss, std::log(2.0), 1e-15);
}

TEST(Loss, NonFiniteNamesTheBatch) {
  const ModelConfig mc = small_model();
  Model m(mc, 2);
  const auto s = lag_setup(m, 1);
  m.params()[m.layout().outer2.b] = std::nan("");
  cache::NCacheStore store = s.pre;
  try {
    loss_batch(store, m, {}, s.current(), s.negatives, 7);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find('7'), std::string::npos);
  }
}

TEST(Loss, FirstBatchHasNoRecurrentGradient) {
  const ModelConfig mc = small_model();
  const Model m(mc, 4);
  const auto s = lag_setup(m, 3);
  cache::NCacheStore store = s.pre;
  const auto res = loss_batch(store, m, {}, s.current(), s.negatives);
  double recurrent = 0.0, readout = 0.0;
  for (const auto& t : m.layout().tensors) {
    double sum = 0.0;
    for (std::size_t i = 0; i < t.size; ++i) sum += std::abs(res.grad[t.offset + i]);
    if (t.name.starts_with("gru") || t.name == "omega") {
      recurrent += sum;
    } else if (t.offset >= m.layout().readout_begin) {
      readout += sum;
    }
  }
  EXPECT_EQ(recurrent, 0.0);
  EXPECT_GT(readout, 0.0);
}

class LaggedGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(LaggedGradient, EveryTensorMatchesFiniteDifferences) {
  for (std::uint64_t seed : {7u, 8u}) {
    Model m(small_model(GetParam()), seed);
    const auto s = lag_setup(m, seed + 10);
    const auto res = analytic(s, m);
    EXPECT_EQ(res.loss, lagged_loss(s.pre, m, s.lag(), s.current(), s.negatives));
    for (const auto& t : m.layout().tensors) {
      double worst = 0.0;
      for (std::size_t i = t.offset; i < t.offset + t.size; ++i) {
        const double keep = m.params()[i];
        m.params()[i] = keep + 1e-5;
        const double lp = lagged_loss(s.pre, m, s.lag(), s.current(), s.negatives);
        m.params()[i] = keep - 1e-5;
        const double lm = lagged_loss(s.pre, m, s.lag(), s.current(), s.negatives);
        m.params()[i] = keep;
        worst = std::max(worst, rel_error(res.grad[i], (lp - lm) / 2e-5));
      }
      EXPECT_LE(worst, 1e-4) << t.name << " seed " << seed;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Variants, LaggedGradient,
                         ::testing::Values("none", "rnn_as_linear", "mean_readout,no_de", "no_hop2", "no_tenc"),
                         [](const auto& info) {
                           std::string n = info.param;
                           std::replace(n.begin(), n.end(), ',', '_');
                           return n;
                         });

TEST(Adam, FirstStepHasLearningRateMagnitude) {
  Adam opt(3, 0.01);
  std::vector<double> p{1.0, -2.0, 0.5};
  opt.step(p, std::vector<double>{4.0, -0.001, 0.0});
  EXPECT_NEAR(p[0], 0.99, 1e-9);
  EXPECT_NEAR(p[1], -1.99, 1e-5);
  EXPECT_EQ(p[2], 0.5);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, MinimizesAQuadratic) {
  Adam opt(2, 0.05);
  std::vector<double> p{3.0, -4.0};
  for (int i = 0; i < 2000; ++i) opt.step(p, std::vector<double>{2.0 * (p[0] - 1.0), 2.0 * (p[1] + 2.0)});
  EXPECT_NEAR(p[0], 1.0, 1e-3);
  EXPECT_NEAR(p[1], -2.0, 1e-3);
}

TEST(Config, TextRoundTrip) {
  ModelConfig mc = small_model("no_tenc,mean_readout");
  mc.d_e = 2;
  mc.time_origin = 12.5;
  mc.time_scale = 0.1 + 0.2;
  EXPECT_EQ(parse_config_text(config_text(mc)), mc);
}

TEST(Config, TimeNormalizationSpansTraining) {
  ModelConfig mc = small_model();
  const std::vector<graph::TemporalEdge> train{{1, 2, 50.0, {}}, {2, 3, 250.0, {}}};
  set_time_normalization(mc, train);
  EXPECT_EQ(mc.time_origin, 50.0);
  EXPECT_EQ(mc.time_scale, 2.0);
}

TEST(Checkpoint, ModelRoundTrip) {
  const Model m(small_model("no_hop2"), 9);
  std::stringstream buf;
  save_model(m, buf);
  const Model back = read_model(buf);
  EXPECT_EQ(back.config(), m.config());
  EXPECT_TRUE(std::equal(m.params().begin(), m.params().end(), back.params().begin(), back.params().end()));
}

TEST(Checkpoint, WrongMagicRejected) {
  std::istringstream in("NOTAMODEL......");
  EXPECT_THROW(read_model(in), InputError);
}

TEST(Model, FeatureWidthMismatchRejected) {
  const Model m(small_model(), 1);
  const std::vector<double> zeros(16, 0.0);
  std::vector<double> x(m.config().gru_input());
  EXPECT_THROW(m.encoder_input({std::span(zeros).first(6), std::span(zeros).first(6), 0.0, zeros}, x), InputError);
}

namespace {

struct FitSetup {
  graph::Dataset ds = synth::triadic({.events = 400, .seed = 3});
  graph::SplitPlan plan = graph::chronological_split(ds, 0.7, 0.15);
  cache::CacheConfig cc;
  ModelConfig mc = small_model();

  FitSetup() {
    set_time_normalization(mc, graph::train_segment(ds, plan));
    cc.num_nodes = ds.num_nodes;
    cc.M1 = 4;
    cc.M2 = 2;
    cc.seed = 1;
    cc = cache_config_for(cc, mc);
  }
};

}  // namespace

TEST(Fit, StopsWhenPatienceRunsOut) {
  FitSetup f;
  for (std::size_t patience : {1u, 2u}) {
    Model m(f.mc, 5);
    TrainConfig tc;
    tc.lr = 0.05;  // large steps make validation AP move around
    tc.epochs_max = 12;
    tc.patience = patience;
    tc.min_delta = 0.5;  // nothing after the first epoch counts as an improvement
    const auto r = fit(f.ds, f.plan, f.cc, m, tc);
    EXPECT_EQ(r.best_epoch, 0u);
    EXPECT_EQ(r.history.size(), patience + 1);
  }
}

TEST(Fit, ReproducibleAndRestoresBestParameters) {
  FitSetup f;
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.epochs_max = 3;
  tc.patience = 3;
  tc.seed = 4;
  Model a(f.mc, 5), b(f.mc, 5);
  const auto ra = fit(f.ds, f.plan, f.cc, a, tc);
  const auto rb = fit(f.ds, f.plan, f.cc, b, tc);
  ASSERT_EQ(ra.history.size(), rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) EXPECT_EQ(ra.history[i].val_ap, rb.history[i].val_ap);
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin(), b.params().end()));
  EXPECT_EQ(ra.test.ap, rb.test.ap);
  EXPECT_EQ(ra.best_val_ap, ra.history[ra.best_epoch].val_ap);
  EXPECT_EQ(ra.val.n_pos, graph::val_segment(f.ds, f.plan).size());
}

TEST(Fit, TrainingLossFallsOnTriadicStream) {
  FitSetup f;
  Model m(f.mc, 5);
  Adam opt(m.params().size(), 3e-3);
  TrainConfig tc;
  const auto train = graph::train_segment(f.ds, f.plan);
  const auto universe = f.ds.destination_universe();
  std::vector<double> losses;
  for (std::uint64_t epoch = 0; epoch < 4; ++epoch) {
    cache::NCacheStore store(f.cc);
    losses.push_back(train_epoch(store, m, opt, train, universe, tc, epoch).mean_loss);
  }
  EXPECT_LT(losses.back(), losses.front());
}

TEST(TrainConfig, Validation) {
  TrainConfig tc;
  EXPECT_NO_THROW(tc.validate());
  tc.batch_size = 0;
  EXPECT_THROW(tc.validate(), InputError);
  tc = {};
  tc.patience = 0;
  EXPECT_THROW(tc.validate(), InputError);
}
