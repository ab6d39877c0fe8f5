#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace protoshot {

// Entry point behind the `protoshot` binary. `args` excludes the program name.
// Exit codes: 0 success, 1 runtime/I-O failure, 2 invalid flags.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace protoshot
