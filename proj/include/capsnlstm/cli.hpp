#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace capsnlstm::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailedCheck = 1;  // a check ran and failed, or a runtime/data error
inline constexpr int kBadConfig = 2;    // invalid config field or command line

/// Runs one `capsnlstm` command line (args excludes the program name).
/// Normal output goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace capsnlstm::cli
