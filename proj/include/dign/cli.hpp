#pragma once

#include <map>
#include <ostream>
#include <string>

#include "dign/error.hpp"
#include "dign/mask.hpp"
#include "dign/trainer.hpp"

namespace dign {

/// Malformed command line or configuration; maps to exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// `key = value` lines; `#` starts a comment. Later duplicates win.
/// Throws UsageError on a line without '='.
std::map<std::string, std::string> read_config_file(const std::string& path);

/// Applies recognised keys; throws UsageError listing every unknown key or bad value.
void apply_train_config(TrainConfig& cfg, const std::map<std::string, std::string>& kv);
void apply_mask_config(DatasetOptions& opts, const std::map<std::string, std::string>& kv);

/// Entry point of the `dign` tool; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dign
