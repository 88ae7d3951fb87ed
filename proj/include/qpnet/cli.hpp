#pragma once

#include <string>
#include <vector>

namespace qpnet::cli {

// Entry point shared by the binary and the tests. argv excludes the program
// name. Exit codes: 0 success, 1 validation/data/IO failure (single-line
// "error: ..." on stderr), 2 usage errors.
int run(const std::vector<std::string>& args);

}  // namespace qpnet::cli
