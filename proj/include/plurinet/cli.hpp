#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace plurinet {

/// Runs one CLI invocation. Exit codes: 0 success, 1 domain error, 2 usage error.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace plurinet
