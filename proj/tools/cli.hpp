#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace memlens::cli {

enum ExitCode : int { kOk = 0, kGateFailed = 1, kUsage = 2 };

// args[0] is the program name. Writes progress to `out` and errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace memlens::cli
