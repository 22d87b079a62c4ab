#pragma once

#include <iosfwd>

namespace reasonseg::cli {

/// Exit codes of every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;  // bad flags, config or inputs
inline constexpr int kExitRuntime = 2;  // failure while running

/// Parses argv and runs one subcommand. Results go to `out`; errors are
/// written to `err` as one JSON object.
int run_cli(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace reasonseg::cli
