#pragma once

namespace stvad::cli {

// Entry point behind the stvad binary. Returns the process exit code:
// 0 success, 2 usage/config errors, 1 runtime failures.
int run_cli(int argc, const char* const* argv);

}  // namespace stvad::cli
