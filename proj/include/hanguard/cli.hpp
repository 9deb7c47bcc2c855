#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hanguard::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // validation or assertion failure
inline constexpr int kExitUsage = 2;

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hanguard::cli
