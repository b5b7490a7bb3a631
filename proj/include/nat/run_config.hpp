#pragma once

// Flat key=value run configuration shared by the command-line tools.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nat/model.hpp"
#include "nat/ncache.hpp"
#include "nat/temporal_graph.hpp"
#include "nat/training.hpp"

namespace nat::cli {

struct RunConfig {
  /// Dataset path, or synth:triadic / synth:barbell.
  std::string data;
  /// auto, jodie or edges. auto picks jodie for .csv files.
  std::string format = "auto";
  std::size_t synth_events = 2000;

  std::size_t M1 = 32;
  std::size_t M2 = 16;
  std::size_t F = 4;
  std::size_t d0 = 72;
  double alpha = 0.9;
  std::uint64_t q = cache::kDefaultHashMultiplier;
  int K = 2;
  std::size_t d_t = 16;
  std::size_t hidden = 32;

  std::size_t batch_size = 100;
  std::size_t eval_batch_size = 32;
  double lr = 1e-4;
  std::size_t epochs = 50;
  std::size_t patience = 5;
  double min_delta = 1e-4;
  std::uint64_t seed = 0;
  std::string ablations = "none";

  double train_frac = 0.7;
  double val_frac = 0.15;
  double mask_p = 0.0;
  /// Number of negative-sampling seeds for the final test report.
  std::size_t eval_seeds = 1;
  /// 0 uses every available core.
  std::size_t threads = 0;
  std::string out_dir = "runs/latest";

  /// Throws InputError on an unknown key or unparsable value.
  void set(const std::string& key, const std::string& value);
  /// Every key with its current value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  void validate() const;
  /// Values outside the usual hyperparameter ranges.
  std::vector<std::string> warnings() const;

  cache::CacheConfig cache_config(std::size_t num_nodes) const;
  neural::ModelConfig model_config(std::size_t d_e) const;
  neural::TrainConfig train_config() const;
};

/// Lines of `key=value`; '#' starts a comment.
void apply_config_text(RunConfig& cfg, const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Applies a single `key=value` override.
void apply_override(RunConfig& cfg, const std::string& assignment);
std::string to_text(const RunConfig& cfg);

/// Loads `cfg.data` (file or synthetic stream).
graph::Dataset load_dataset(const RunConfig& cfg);

}  // namespace nat::cli
