#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ncf {

// Entry point of the `ncforge` tool. args excludes the program name.
// Subcommands: gen-data, train, eval, analyze, verify. Failures print one
// line "error: <Kind>: <message>" to err and return a nonzero status.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ncf
