#pragma once

#include <string>
#include <vector>

namespace catqvi {

inline constexpr const char* kToolVersion = "0.1.0";

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitInvalid = 1, kExitNumerical = 2, kExitIo = 3 };

/// Entry point of the `catqvi` executable. Subcommands: validate, solve,
/// simulate, oep, bayes-demo, section.
int run_cli(int argc, char** argv);

/// Same, from an argument vector (the program name is prepended).
int run_cli(const std::vector<std::string>& args);

}  // namespace catqvi
