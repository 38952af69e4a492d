#pragma once

#include <iosfwd>

namespace lcm {

// Full command-line entry point: parses argv, runs one subcommand, writes
// results to `out` and problems to `err`. Returns the process exit code:
// 0 success, 1 domain error, 2 usage error.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lcm
