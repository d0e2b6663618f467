#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace smm::cli {

/// Runs one subcommand. `args` excludes the program name. Results go to
/// `out`, logs and errors to `err`. Returns 0 on success, the ErrorKind
/// value for categorized failures, 1 otherwise.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int dispatch(int argc, const char* const* argv);

}  // namespace smm::cli
