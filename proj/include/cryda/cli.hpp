#pragma once

#include <string>
#include <vector>

namespace cryda::cli {

// Runs one cryda command. args holds the command-line arguments in order,
// excluding the program name. Returns the process exit code: 0 on success,
// 2 on usage or config errors, 3 when a required prior artifact (corpus,
// checkpoint, baseline run) is missing.
int run_cli(std::vector<std::string> args);

}  // namespace cryda::cli
