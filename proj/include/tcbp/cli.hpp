#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tcbp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

// Entry point shared by the tcbp executable and the tests. args[0] is the
// program name. Data goes to `out`, logs and the resolved config to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// "2:958,3:472" -> {{2, 958}, {3, 472}}
std::vector<std::pair<std::string, std::string>> parse_pairs(const std::string& text);

}  // namespace tcbp::cli
