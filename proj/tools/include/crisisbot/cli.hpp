#pragma once

#include <iosfwd>

namespace crisisbot::cli {

/// Runs one `crisisbot` invocation. Returns the process exit status; all
/// console output goes to `out` and `err`, interactive input comes from `in`.
int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace crisisbot::cli
