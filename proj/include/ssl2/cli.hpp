#pragma once

#include <string>
#include <vector>

namespace ssl2 {

// Command-line entry point. Commands: phantom, pretrain, finetune, predict,
// experiment, report. Exit codes: 0 success, 2 configuration error,
// 3 runtime error. Failures print a JSON error record to stderr.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace ssl2
