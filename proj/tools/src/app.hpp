#pragma once

#include <iosfwd>

namespace lumenseg::cli {

// Parses argv and runs one subcommand. Returns the process exit code: 0 on
// success, the error category (config 2, data 3, numeric 4) otherwise.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lumenseg::cli
