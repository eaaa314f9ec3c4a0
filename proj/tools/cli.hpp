#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace deskmt::cli {

/// Runs one command line (args[0] is the program name). Returns 0 on success,
/// 1 on a runtime failure, 2 on a usage error; usage text goes to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace deskmt::cli
