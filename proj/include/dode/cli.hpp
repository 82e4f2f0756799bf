#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dode {

inline constexpr const char* kVersion = "0.1.0";

/// Runs one command. args excludes the program name.
/// Exit codes: 0 ok, 1 invalid input, 2 numeric failure or failed check.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dode
