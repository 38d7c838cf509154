#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cada {

// Entry point of the `cada` tool. args excludes the program name. Returns
// the process exit code; diagnostics go to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace cada
