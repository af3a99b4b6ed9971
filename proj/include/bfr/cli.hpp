#pragma once

#include <iostream>

namespace bfr {

/// Entry point of the bfrbench tool. Exit codes: 0 success, 1 runtime
/// failure, 2 invalid arguments.
int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace bfr
