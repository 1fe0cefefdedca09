#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace seqtag {

// Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace seqtag
