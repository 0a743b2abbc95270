#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace taca::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kIo = 2, kNumeric = 3 };

/// Runs one command. `args` excludes the program name. Messages go to `out`,
/// diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace taca::cli
