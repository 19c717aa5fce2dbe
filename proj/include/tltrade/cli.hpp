#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tlt {

// Entry point of the `tltrade` tool. `args` excludes the program name.
// Returns 0 on success, 1 on a usage error, 2 on a runtime failure; runtime
// failures print "<ErrorName>: <message>" to `err`.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tlt
