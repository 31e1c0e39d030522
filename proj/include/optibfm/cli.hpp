#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace optibfm {

/// Exit codes: 0 success, 1 runtime failure (or failed checks), 2 usage/config error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace optibfm
