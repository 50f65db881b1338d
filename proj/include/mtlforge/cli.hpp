#pragma once

#include <ostream>

namespace mtlforge {

/// Entry point of the mtlforge tool. Returns the process exit code:
/// 0 success, 1 runtime error, 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace mtlforge
