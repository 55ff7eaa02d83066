#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ctxbert::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // validation, I/O, numeric or failed checks
inline constexpr int kExitUsage = 2;    // unknown flag or subcommand

// Entry point behind the `ctxbert` binary; args[0] is the program name.
// Errors end in a single JSON line on `err`: {"error": kind, "message": ...}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string version();

}  // namespace ctxbert::cli
