#pragma once

// Command-line front end: train, eval, ablate, bench, synth, inspect-cache,
// dump-features. Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <filesystem>
#include <iosfwd>

#include "nat/run_config.hpp"

namespace nat::cli {

/// Overrides the configured output directory when set.
inline constexpr const char* kOutputDirEnv = "NAT_OUT_DIR";

class UsageError : public InputError {
 public:
  using InputError::InputError;
};

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// The run directory: $NAT_OUT_DIR if set, else cfg.out_dir.
std::filesystem::path output_dir(const RunConfig& cfg);

}  // namespace nat::cli
