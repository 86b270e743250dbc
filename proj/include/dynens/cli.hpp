#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dynens {

/// Environment variable that, when set, replaces --out-dir.
inline constexpr const char* kOutputDirEnv = "DYNENS_OUTPUT_DIR";

/// Runs one subcommand (gen-synthetic, train, analyze, search, topk,
/// report). Returns 0 on success, 1 when the operation fails and 2 on a
/// usage error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dynens
