#include "nat/model.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "binary_io.hpp"

namespace nat::neural {

namespace {

constexpr char kModelMagic[9] = "NATMODEL";
constexpr std::uint32_t kModelVersion = 1;

// y = b + W x, W is out x in row-major.
void affine(const double* W, const double* b, const double* x, std::size_t out, std::size_t in, double* y) {
  for (std::size_t o = 0; o < out; ++o) {
    const double* row = W + o * in;
    double acc = b[o];
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

// y += W x
void add_matvec(const double* W, const double* x, std::size_t out, std::size_t in, double* y) {
  for (std::size_t o = 0; o < out; ++o) {
    const double* row = W + o * in;
    double acc = 0.0;
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] += acc;
  }
}

// y += W^T d
void add_matvec_t(const double* W, const double* d, std::size_t out, std::size_t in, double* y) {
  for (std::size_t o = 0; o < out; ++o) {
    const double* row = W + o * in;
    const double g = d[o];
    if (g == 0.0) continue;
    for (std::size_t i = 0; i < in; ++i) y[i] += row[i] * g;
  }
}

// G += d x^T
void add_outer(double* G, const double* d, const double* x, std::size_t out, std::size_t in) {
  for (std::size_t o = 0; o < out; ++o) {
    const double g = d[o];
    if (g == 0.0) continue;
    double* row = G + o * in;
    for (std::size_t i = 0; i < in; ++i) row[i] += g * x[i];
  }
}

double logistic(double x) { return sigmoid(x); }

}  // namespace

const std::vector<std::string>& Ablations::names() {
  static const std::vector<std::string> kNames = {"no_hop2",       "no_hop1_hop2", "no_tenc",
                                                  "rnn_as_linear", "mean_readout", "no_de"};
  return kNames;
}

std::string Ablations::to_string() const {
  std::string out;
  const bool flags[] = {no_hop2, no_hop1_hop2, no_tenc, rnn_as_linear, mean_readout, no_de};
  for (std::size_t i = 0; i < names().size(); ++i) {
    if (!flags[i]) continue;
    if (!out.empty()) out += ',';
    out += names()[i];
  }
  return out.empty() ? "none" : out;
}

Ablations Ablations::parse(std::string_view text) {
  Ablations a;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    auto name = text.substr(start, end - start);
    while (!name.empty() && name.front() == ' ') name.remove_prefix(1);
    while (!name.empty() && name.back() == ' ') name.remove_suffix(1);
    if (name == "no_hop2") {
      a.no_hop2 = true;
    } else if (name == "no_hop1_hop2") {
      a.no_hop1_hop2 = true;
    } else if (name == "no_tenc") {
      a.no_tenc = true;
    } else if (name == "rnn_as_linear") {
      a.rnn_as_linear = true;
    } else if (name == "mean_readout") {
      a.mean_readout = true;
    } else if (name == "no_de") {
      a.no_de = true;
    } else if (!name.empty() && name != "none") {
      throw InputError("unknown ablation '" + std::string(name) + "'");
    }
    start = end + 1;
  }
  return a;
}

int Ablations::hop_limit(int K) const {
  if (no_hop1_hop2) return 0;
  if (no_hop2) return std::min(K, 1);
  return K;
}

void ModelConfig::validate() const {
  if (d0 == 0 || F == 0 || hidden == 0) throw InputError("model config: d0, F and hidden must be positive");
  if (d_t == 0 || d_t % 2 != 0) throw InputError("model config: d_t must be a positive even number");
  if (K < 0 || K > cache::kMaxHop) throw InputError("model config: K must be 0, 1 or 2");
  if (!(time_scale > 0.0) || !std::isfinite(time_origin)) throw InputError("model config: bad time normalization");
}

ParamLayout ParamLayout::build(const ModelConfig& cfg) {
  ParamLayout L;
  std::size_t at = 0;
  auto take = [&](const std::string& name, std::size_t size, std::size_t fan_in) {
    L.tensors.push_back({name, at, size, fan_in});
    const std::size_t off = at;
    at += size;
    return off;
  };
  auto gru = [&](const std::string& p, std::size_t in, std::size_t hidden) {
    GruSlices g;
    g.in = in;
    g.hidden = hidden;
    g.Wz = take(p + ".W_z", hidden * in, in);
    g.Wr = take(p + ".W_r", hidden * in, in);
    g.Wh = take(p + ".W_h", hidden * in, in);
    g.Uz = take(p + ".U_z", hidden * hidden, hidden);
    g.Ur = take(p + ".U_r", hidden * hidden, hidden);
    g.Uh = take(p + ".U_h", hidden * hidden, hidden);
    g.bz = take(p + ".b_z", hidden, in);
    g.br = take(p + ".b_r", hidden, in);
    g.bh = take(p + ".b_h", hidden, in);
    return g;
  };
  auto dense = [&](const std::string& p, std::size_t in, std::size_t out) {
    DenseSlices d;
    d.in = in;
    d.out = out;
    d.W = take(p + ".W", out * in, in);
    d.b = take(p + ".b", out, in);
    return d;
  };
  L.omega = take("omega", cfg.d_t / 2, 0);
  L.gru0 = gru("gru0", cfg.gru_input(), cfg.d0);
  L.gru1 = gru("gru1", cfg.gru_input(), cfg.F);
  L.readout_begin = at;
  L.proj = dense("proj0", cfg.d0, cfg.F);
  L.inner1 = dense("mlp_inner.0", cfg.feature_width(), cfg.hidden);
  L.inner2 = dense("mlp_inner.1", cfg.hidden, cfg.hidden);
  L.attn = take("attn_w", cfg.hidden, cfg.hidden);
  L.outer1 = dense("mlp_outer.0", cfg.hidden, cfg.hidden);
  L.outer2 = dense("mlp_outer.1", cfg.hidden, 1);
  L.total = at;
  return L;
}

void time_encode(std::span<const double> omega, double t, std::span<double> out) {
  for (std::size_t i = 0; i < omega.size(); ++i) {
    out[2 * i] = std::cos(omega[i] * t);
    out[2 * i + 1] = std::sin(omega[i] * t);
  }
}

void gru_forward(std::span<const double> P, const GruSlices& g, std::span<const double> h,
                 std::span<const double> x, std::span<double> out, bool linear, GruTrace* trace) {
  const std::size_t H = g.hidden;
  const std::size_t I = g.in;
  const double* p = P.data();
  if (linear) {
    affine(p + g.Wh, p + g.bh, x.data(), H, I, out.data());
    add_matvec(p + g.Uh, h.data(), H, H, out.data());
    return;
  }
  GruTrace local;
  GruTrace& tr = trace ? *trace : local;
  tr.z.resize(H);
  tr.r.resize(H);
  tr.n.resize(H);
  tr.rh.resize(H);
  affine(p + g.Wz, p + g.bz, x.data(), H, I, tr.z.data());
  add_matvec(p + g.Uz, h.data(), H, H, tr.z.data());
  affine(p + g.Wr, p + g.br, x.data(), H, I, tr.r.data());
  add_matvec(p + g.Ur, h.data(), H, H, tr.r.data());
  for (std::size_t j = 0; j < H; ++j) {
    tr.z[j] = logistic(tr.z[j]);
    tr.r[j] = logistic(tr.r[j]);
    tr.rh[j] = tr.r[j] * h[j];
  }
  affine(p + g.Wh, p + g.bh, x.data(), H, I, tr.n.data());
  add_matvec(p + g.Uh, tr.rh.data(), H, H, tr.n.data());
  for (std::size_t j = 0; j < H; ++j) {
    tr.n[j] = std::tanh(tr.n[j]);
    out[j] = (1.0 - tr.z[j]) * h[j] + tr.z[j] * tr.n[j];
  }
}

void gru_backward(std::span<const double> P, const GruSlices& g, std::span<const double> h,
                  std::span<const double> x, bool linear, const GruTrace& tr, std::span<const double> dout,
                  std::span<double> grad, std::span<double> dh, std::span<double> dx) {
  const std::size_t H = g.hidden;
  const std::size_t I = g.in;
  const double* p = P.data();
  double* G = grad.data();
  if (linear) {
    add_outer(G + g.Wh, dout.data(), x.data(), H, I);
    add_outer(G + g.Uh, dout.data(), h.data(), H, H);
    for (std::size_t j = 0; j < H; ++j) G[g.bh + j] += dout[j];
    if (!dx.empty()) add_matvec_t(p + g.Wh, dout.data(), H, I, dx.data());
    if (!dh.empty()) add_matvec_t(p + g.Uh, dout.data(), H, H, dh.data());
    return;
  }
  std::vector<double> dz(H), dr(H), dn(H), drh(H, 0.0);
  for (std::size_t j = 0; j < H; ++j) {
    dz[j] = dout[j] * (tr.n[j] - h[j]) * tr.z[j] * (1.0 - tr.z[j]);
    dn[j] = dout[j] * tr.z[j] * (1.0 - tr.n[j] * tr.n[j]);
  }
  add_matvec_t(p + g.Uh, dn.data(), H, H, drh.data());
  for (std::size_t j = 0; j < H; ++j) dr[j] = drh[j] * h[j] * tr.r[j] * (1.0 - tr.r[j]);

  add_outer(G + g.Wz, dz.data(), x.data(), H, I);
  add_outer(G + g.Wr, dr.data(), x.data(), H, I);
  add_outer(G + g.Wh, dn.data(), x.data(), H, I);
  add_outer(G + g.Uz, dz.data(), h.data(), H, H);
  add_outer(G + g.Ur, dr.data(), h.data(), H, H);
  add_outer(G + g.Uh, dn.data(), tr.rh.data(), H, H);
  for (std::size_t j = 0; j < H; ++j) {
    G[g.bz + j] += dz[j];
    G[g.br + j] += dr[j];
    G[g.bh + j] += dn[j];
  }
  if (!dx.empty()) {
    add_matvec_t(p + g.Wz, dz.data(), H, I, dx.data());
    add_matvec_t(p + g.Wr, dr.data(), H, I, dx.data());
    add_matvec_t(p + g.Wh, dn.data(), H, I, dx.data());
  }
  if (!dh.empty()) {
    for (std::size_t j = 0; j < H; ++j) dh[j] += dout[j] * (1.0 - tr.z[j]) + drh[j] * tr.r[j];
    add_matvec_t(p + g.Uz, dz.data(), H, H, dh.data());
    add_matvec_t(p + g.Ur, dr.data(), H, H, dh.data());
  }
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg), layout_(ParamLayout::build(cfg)) {
  cfg_.validate();
  params_.assign(layout_.total, 0.0);
  std::mt19937_64 rng(seed);
  for (const auto& t : layout_.tensors) {
    if (t.offset == layout_.omega) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(t.fan_in));
    std::uniform_real_distribution<double> unif(-bound, bound);
    for (std::size_t i = 0; i < t.size; ++i) params_[t.offset + i] = unif(rng);
  }
  const std::size_t half = cfg_.d_t / 2;
  for (std::size_t i = 0; i < half; ++i) {
    params_[layout_.omega + i] = std::pow(10.0, -2.0 * static_cast<double>(i) / static_cast<double>(cfg_.d_t));
  }
}

Model::Model(ModelConfig cfg, std::vector<double> params)
    : cfg_(cfg), layout_(ParamLayout::build(cfg)), params_(std::move(params)) {
  cfg_.validate();
  if (params_.size() != layout_.total) {
    throw InputError("model has " + std::to_string(params_.size()) + " parameters, config expects " +
                     std::to_string(layout_.total));
  }
}

void Model::encoder_input(const cache::StepInput& in, std::span<double> x) const {
  std::copy(in.partner_self.begin(), in.partner_self.end(), x.begin());
  auto tenc = x.subspan(cfg_.d0, cfg_.d_t);
  if (cfg_.ablations.no_tenc) {
    std::fill(tenc.begin(), tenc.end(), 0.0);
  } else {
    time_encode(std::span(params_).subspan(layout_.omega, cfg_.d_t / 2), scaled_time(in.t), tenc);
  }
  auto feat = x.subspan(cfg_.d0 + cfg_.d_t, cfg_.d_e);
  if (in.feat.size() != cfg_.d_e) throw InputError("edge feature width differs from model d_e");
  std::copy(in.feat.begin(), in.feat.end(), feat.begin());
}

void Model::self_step(const cache::StepInput& in, std::span<double> out) const {
  std::vector<double> x(cfg_.gru_input());
  encoder_input(in, x);
  gru_forward(params_, layout_.gru0, in.prev, x, out, cfg_.ablations.rnn_as_linear);
}

void Model::edge_step(const cache::StepInput& in, std::span<double> out) const {
  std::vector<double> x(cfg_.gru_input());
  encoder_input(in, x);
  gru_forward(params_, layout_.gru1, in.prev, x, out, cfg_.ablations.rnn_as_linear);
}

features::SelfProjection Model::projection() const {
  return {std::span(params_).subspan(layout_.proj.W, cfg_.F * cfg_.d0),
          std::span(params_).subspan(layout_.proj.b, cfg_.F)};
}

double Model::readout(const features::JointView& feats, ReadoutTrace* trace) const {
  const std::size_t n = feats.size();
  if (n == 0) throw Error("readout over an empty feature set");
  if (feats.de_width != cfg_.de_width() || feats.F != cfg_.F) {
    throw InputError("feature shape does not match the model");
  }
  const std::size_t fw = cfg_.feature_width();
  const std::size_t dw = cfg_.de_width();
  const std::size_t H = cfg_.hidden;
  const double* p = params_.data();

  ReadoutTrace local;
  ReadoutTrace& tr = trace ? *trace : local;
  tr.n = n;
  tr.input.assign(n * fw, 0.0);
  tr.hidden.resize(n * H);
  tr.m.resize(n * H);
  tr.alpha.resize(n);
  tr.pooled.assign(H, 0.0);
  tr.outer.resize(H);

  for (std::size_t a = 0; a < n; ++a) {
    double* in = tr.input.data() + a * fw;
    if (!cfg_.ablations.no_de) {
      const auto de = feats.de_row(a);
      for (std::size_t j = 0; j < dw; ++j) in[j] = de[j];
    }
    const auto q = feats.q_row(a);
    std::copy(q.begin(), q.end(), in + dw);
    double* hid = tr.hidden.data() + a * H;
    affine(p + layout_.inner1.W, p + layout_.inner1.b, in, H, fw, hid);
    for (std::size_t j = 0; j < H; ++j) hid[j] = std::max(hid[j], 0.0);
    affine(p + layout_.inner2.W, p + layout_.inner2.b, hid, H, H, tr.m.data() + a * H);
  }

  if (cfg_.ablations.mean_readout) {
    std::fill(tr.alpha.begin(), tr.alpha.end(), 1.0 / static_cast<double>(n));
  } else {
    const double* w = p + layout_.attn;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < n; ++a) {
      const double* m = tr.m.data() + a * H;
      double s = 0.0;
      for (std::size_t j = 0; j < H; ++j) s += w[j] * m[j];
      tr.alpha[a] = s;
      best = std::max(best, s);
    }
    double total = 0.0;
    for (auto& s : tr.alpha) {
      s = std::exp(s - best);
      total += s;
    }
    for (auto& s : tr.alpha) s /= total;
  }

  for (std::size_t a = 0; a < n; ++a) {
    const double* m = tr.m.data() + a * H;
    for (std::size_t j = 0; j < H; ++j) tr.pooled[j] += tr.alpha[a] * m[j];
  }
  affine(p + layout_.outer1.W, p + layout_.outer1.b, tr.pooled.data(), H, H, tr.outer.data());
  for (auto& o : tr.outer) o = std::max(o, 0.0);
  affine(p + layout_.outer2.W, p + layout_.outer2.b, tr.outer.data(), 1, H, &tr.logit);
  return tr.logit;
}

void Model::readout_backward(const ReadoutTrace& tr, double dlogit, std::span<double> grad_tail,
                             std::span<double> dq) const {
  const std::size_t n = tr.n;
  const std::size_t fw = cfg_.feature_width();
  const std::size_t dw = cfg_.de_width();
  const std::size_t H = cfg_.hidden;
  const double* p = params_.data();
  double* G = grad_tail.data() - layout_.readout_begin;  // index with absolute offsets

  // outer MLP
  add_outer(G + layout_.outer2.W, &dlogit, tr.outer.data(), 1, H);
  G[layout_.outer2.b] += dlogit;
  std::vector<double> d_outer(H, 0.0);
  add_matvec_t(p + layout_.outer2.W, &dlogit, 1, H, d_outer.data());
  for (std::size_t j = 0; j < H; ++j) {
    if (tr.outer[j] <= 0.0) d_outer[j] = 0.0;
  }
  add_outer(G + layout_.outer1.W, d_outer.data(), tr.pooled.data(), H, H);
  for (std::size_t j = 0; j < H; ++j) G[layout_.outer1.b + j] += d_outer[j];
  std::vector<double> d_pooled(H, 0.0);
  add_matvec_t(p + layout_.outer1.W, d_outer.data(), H, H, d_pooled.data());

  // attention
  std::vector<double> dm(n * H);
  std::vector<double> d_alpha(n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    const double* m = tr.m.data() + a * H;
    double acc = 0.0;
    for (std::size_t j = 0; j < H; ++j) {
      dm[a * H + j] = tr.alpha[a] * d_pooled[j];
      acc += m[j] * d_pooled[j];
    }
    d_alpha[a] = acc;
  }
  if (!cfg_.ablations.mean_readout) {
    double mix = 0.0;
    for (std::size_t a = 0; a < n; ++a) mix += tr.alpha[a] * d_alpha[a];
    const double* w = p + layout_.attn;
    for (std::size_t a = 0; a < n; ++a) {
      const double ds = tr.alpha[a] * (d_alpha[a] - mix);
      const double* m = tr.m.data() + a * H;
      for (std::size_t j = 0; j < H; ++j) {
        dm[a * H + j] += ds * w[j];
        G[layout_.attn + j] += ds * m[j];
      }
    }
  }

  // shared inner MLP
  std::vector<double> d_hidden(H);
  std::vector<double> d_in(fw);
  for (std::size_t a = 0; a < n; ++a) {
    const double* dma = dm.data() + a * H;
    const double* hid = tr.hidden.data() + a * H;
    add_outer(G + layout_.inner2.W, dma, hid, H, H);
    for (std::size_t j = 0; j < H; ++j) G[layout_.inner2.b + j] += dma[j];
    std::fill(d_hidden.begin(), d_hidden.end(), 0.0);
    add_matvec_t(p + layout_.inner2.W, dma, H, H, d_hidden.data());
    for (std::size_t j = 0; j < H; ++j) {
      if (hid[j] <= 0.0) d_hidden[j] = 0.0;
    }
    add_outer(G + layout_.inner1.W, d_hidden.data(), tr.input.data() + a * fw, H, fw);
    for (std::size_t j = 0; j < H; ++j) G[layout_.inner1.b + j] += d_hidden[j];
    std::fill(d_in.begin(), d_in.end(), 0.0);
    add_matvec_t(p + layout_.inner1.W, d_hidden.data(), H, fw, d_in.data());
    std::copy(d_in.begin() + static_cast<std::ptrdiff_t>(dw), d_in.end(), dq.begin() + static_cast<std::ptrdiff_t>(a * cfg_.F));
  }
}

double Model::predict(const cache::NCacheStore& store, NodeId u, NodeId v) const {
  const auto feats = features::join(store, u, v, projection());
  return sigmoid(readout(feats.view()));
}

cache::CacheConfig cache_config_for(const cache::CacheConfig& base, const ModelConfig& cfg) {
  cache::CacheConfig c = base;
  c.K = cfg.hops();
  c.F = cfg.F;
  c.d0 = cfg.d0;
  return c;
}

std::string config_text(const ModelConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  out << "d0=" << cfg.d0 << '\n'
      << "F=" << cfg.F << '\n'
      << "d_e=" << cfg.d_e << '\n'
      << "d_t=" << cfg.d_t << '\n'
      << "hidden=" << cfg.hidden << '\n'
      << "K=" << cfg.K << '\n'
      << "time_origin=" << cfg.time_origin << '\n'
      << "time_scale=" << cfg.time_scale << '\n'
      << "ablations=" << cfg.ablations.to_string() << '\n';
  return out.str();
}

ModelConfig parse_config_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("model config line without '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    try {
      if (key == "d0") {
        cfg.d0 = std::stoull(val);
      } else if (key == "F") {
        cfg.F = std::stoull(val);
      } else if (key == "d_e") {
        cfg.d_e = std::stoull(val);
      } else if (key == "d_t") {
        cfg.d_t = std::stoull(val);
      } else if (key == "hidden") {
        cfg.hidden = std::stoull(val);
      } else if (key == "K") {
        cfg.K = std::stoi(val);
      } else if (key == "time_origin") {
        cfg.time_origin = std::stod(val);
      } else if (key == "time_scale") {
        cfg.time_scale = std::stod(val);
      } else if (key == "ablations") {
        cfg.ablations = Ablations::parse(val);
      } else {
        throw InputError("unknown model config key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw InputError("bad value for model config key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

void save_model(const Model& model, std::ostream& out) {
  const std::string text = config_text(model.config());
  io::write_magic(out, kModelMagic);
  io::write_le<std::uint32_t>(out, kModelVersion);
  io::write_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  io::write_le<std::uint64_t>(out, model.params().size());
  io::write_array<double>(out, model.params());
  if (!out) throw Error("failed writing model checkpoint");
}

Model read_model(std::istream& in) {
  io::expect_magic(in, kModelMagic, "model checkpoint");
  if (io::read_le<std::uint32_t>(in) != kModelVersion) throw InputError("unsupported model checkpoint version");
  const auto len = io::read_le<std::uint64_t>(in);
  if (len > (1U << 20)) throw InputError("model checkpoint config block too large");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw InputError("truncated checkpoint");
  const ModelConfig cfg = parse_config_text(text);
  const auto count = io::read_le<std::uint64_t>(in);
  if (count != ParamLayout::build(cfg).total) throw InputError("model checkpoint parameter count mismatch");
  std::vector<double> params(count);
  io::read_array<double>(in, std::span(params));
  return Model(cfg, std::move(params));
}

void save_model_file(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  save_model(model, out);
}

Model load_model_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return read_model(in);
}

}  // namespace nat::neural
