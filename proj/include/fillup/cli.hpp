#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fillup::cli {

enum ExitCode : int { ok = 0, config_error = 2, stage_failure = 3, artifact_conflict = 4 };

/// Runs one command line (without the program name), writing the report and
/// stage progress to `out` and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int main(int argc, char** argv);

}  // namespace fillup::cli
