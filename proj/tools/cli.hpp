#pragma once

#include <string>
#include <vector>

namespace fairdistill {

// Command-line entry: args excludes the program name. Exit codes:
//   0 success, 1 runtime failure or verify violations, 2 usage/config errors.
int run_cli(const std::vector<std::string>& args);

}  // namespace fairdistill
