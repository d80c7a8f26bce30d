#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace csm {

/// Runs the command line tool. `args` excludes the program name.
/// Returns 0 on success, 2 on a usage error, 1 on a data error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace csm
