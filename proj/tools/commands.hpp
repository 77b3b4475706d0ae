#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>

#include "run_config.hpp"

namespace bilevel::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUnsound = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

/// Runs `body`, mapping library errors to exit codes and printing them to `err`.
int guarded(const std::function<int()>& body, std::ostream& err);

int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_check_grad(const RunConfig& cfg, std::ostream& out);

struct DenoiseArgs {
  std::filesystem::path filters;
  std::filesystem::path image;  // noisy input; empty: corrupt `clean` with the configured noise
  std::filesystem::path clean;  // optional reference
};
int cmd_denoise(const RunConfig& cfg, const DenoiseArgs& args, std::ostream& out);

int cmd_budget_bench(const RunConfig& cfg, std::ostream& out);

}  // namespace bilevel::cli
