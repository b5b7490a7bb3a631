#pragma once

// Learnable parts of the predictor: Fourier time encoding, the GRU cells that
// update cache values, the self projection, and the attention readout
//   m_a   = MLP_in(de_a ++ q_a)
//   alpha = softmax_a(w . m_a)
//   logit = MLP_out(sum_a alpha_a m_a)
// with a single inner MLP shared by the score and aggregation paths.
//
// All parameters live in one flat array; ParamLayout names the slices.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nat/joint_features.hpp"
#include "nat/ncache.hpp"

namespace nat::neural {

/// Switches removing one component each.
struct Ablations {
  bool no_hop2 = false;       // K = 1
  bool no_hop1_hop2 = false;  // K = 0, self representations only
  bool no_tenc = false;       // time encoding replaced by zeros
  bool rnn_as_linear = false; // h' = W x + U h + b
  bool mean_readout = false;  // uniform attention weights
  bool no_de = false;         // DE slice of every feature zeroed

  /// Comma-separated names as accepted by parse(); "none" when empty.
  std::string to_string() const;
  static Ablations parse(std::string_view names);
  static const std::vector<std::string>& names();
  /// Effective hop count given the configured one.
  int hop_limit(int K) const;

  friend bool operator==(const Ablations&, const Ablations&) = default;
};

struct ModelConfig {
  std::size_t d0 = 72;
  std::size_t F = 4;
  std::size_t d_e = 0;
  std::size_t d_t = 16;
  std::size_t hidden = 32;
  int K = 2;
  /// Timestamps enter the encoder as (t - time_origin) / time_scale.
  double time_origin = 0.0;
  double time_scale = 1.0;
  Ablations ablations;

  /// Hop count after ablations.
  int hops() const { return ablations.hop_limit(K); }
  std::size_t de_width() const { return features::de_width(hops()); }
  std::size_t feature_width() const { return de_width() + F; }
  std::size_t gru_input() const { return d0 + d_t + d_e; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct GruSlices {
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::size_t Wz = 0, Wr = 0, Wh = 0;  // hidden x in
  std::size_t Uz = 0, Ur = 0, Uh = 0;  // hidden x hidden
  std::size_t bz = 0, br = 0, bh = 0;  // hidden
};

struct DenseSlices {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t W = 0;  // out x in
  std::size_t b = 0;  // out
};

struct TensorInfo {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  std::size_t fan_in = 0;
};

/// Offsets of every parameter tensor. Recurrent parameters come first and
/// readout parameters (projection onward) form the contiguous tail
/// [readout_begin, total).
struct ParamLayout {
  std::size_t omega = 0;
  GruSlices gru0;
  GruSlices gru1;
  DenseSlices proj;
  DenseSlices inner1;
  DenseSlices inner2;
  std::size_t attn = 0;
  DenseSlices outer1;
  DenseSlices outer2;
  std::size_t readout_begin = 0;
  std::size_t total = 0;
  std::vector<TensorInfo> tensors;

  static ParamLayout build(const ModelConfig& cfg);
};

/// Interleaved [cos(w_1 t), sin(w_1 t), ...].
void time_encode(std::span<const double> omega, double t, std::span<double> out);

/// Activations of one GRU step kept for the backward pass.
struct GruTrace {
  std::vector<double> z, r, n, rh;
};

/// One GRU step (or the linear map W_h x + U_h h + b_h when `linear`).
void gru_forward(std::span<const double> params, const GruSlices& g, std::span<const double> h,
                 std::span<const double> x, std::span<double> out, bool linear, GruTrace* trace = nullptr);

/// Accumulates parameter gradients into `grad` and, when non-empty, input
/// gradients into dh and dx.
void gru_backward(std::span<const double> params, const GruSlices& g, std::span<const double> h,
                  std::span<const double> x, bool linear, const GruTrace& trace, std::span<const double> dout,
                  std::span<double> grad, std::span<double> dh, std::span<double> dx);

/// Intermediate values of one readout evaluation.
struct ReadoutTrace {
  std::size_t n = 0;
  std::vector<double> input;   // n x feature_width
  std::vector<double> hidden;  // n x H, post-ReLU
  std::vector<double> m;       // n x H
  std::vector<double> alpha;   // n
  std::vector<double> pooled;  // H
  std::vector<double> outer;   // H, post-ReLU
  double logit = 0.0;
};

class Model : public cache::CacheEncoder {
 public:
  /// Parameters drawn uniformly in +-1/sqrt(fan_in); omega on a geometric ladder.
  Model(ModelConfig cfg, std::uint64_t seed);
  Model(ModelConfig cfg, std::vector<double> params);

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }

  /// Encoder input [partner_self, T-encoding(t), feat].
  void encoder_input(const cache::StepInput& in, std::span<double> x) const;
  double scaled_time(double t) const { return (t - cfg_.time_origin) / cfg_.time_scale; }

  void self_step(const cache::StepInput& in, std::span<double> out) const override;
  void edge_step(const cache::StepInput& in, std::span<double> out) const override;

  features::SelfProjection projection() const;

  /// Attention readout over one feature set. Throws on an empty set.
  double readout(const features::JointView& feats, ReadoutTrace* trace = nullptr) const;

  /// Backward of readout(): adds readout-parameter gradients into
  /// `grad_tail` (indexed from layout().readout_begin) and writes the
  /// gradient w.r.t. each feature's pooled value q into `dq` (n x F).
  void readout_backward(const ReadoutTrace& trace, double dlogit, std::span<double> grad_tail,
                        std::span<double> dq) const;

  double predict(const cache::NCacheStore& store, NodeId u, NodeId v) const;

 private:
  ModelConfig cfg_;
  ParamLayout layout_;
  std::vector<double> params_;
};

/// Cache configuration with the model's hop count applied.
cache::CacheConfig cache_config_for(const cache::CacheConfig& base, const ModelConfig& cfg);

// Model checkpoint: char[8] "NATMODEL", u32 version, u64 config-text length,
// config text (key=value lines), u64 parameter count, f64 parameters (LE).
std::string config_text(const ModelConfig& cfg);
ModelConfig parse_config_text(const std::string& text);
void save_model(const Model& model, std::ostream& out);
Model read_model(std::istream& in);
void save_model_file(const Model& model, const std::filesystem::path& path);
Model load_model_file(const std::filesystem::path& path);

inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace nat::neural
