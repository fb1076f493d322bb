#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fan {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitInternal = 3;

/// Entry point for the `fan` tool. `args` excludes the program name.
/// Subcommands: train, eval, predict, bench, ablate, heads, synth.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace fan
