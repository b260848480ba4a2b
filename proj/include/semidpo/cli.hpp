#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace semidpo {

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;

/// Entry point shared by the binary and the tests. `args` excludes argv[0].
/// Subcommands: gen | filter | train | diagnose | eval. Any `--a.b=value` flag
/// not recognised as an option overrides the config field at that path.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace semidpo
