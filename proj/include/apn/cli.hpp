#pragma once

#include <string>
#include <vector>

namespace apn::cli {

// Exit codes: 0 success, 1 runtime error, 2 usage or configuration error.
// Errors are reported as one `error: <message>` line on stderr.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);  // args[0] is the program name

}  // namespace apn::cli
