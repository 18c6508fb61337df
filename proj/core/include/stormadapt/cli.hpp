#pragma once

namespace stormadapt {

// Entry point behind the command-line tool. Returns the process exit code:
// 0 success, 1 input/usage error, 2 internal failure.
int dispatch(int argc, const char* const* argv);

}  // namespace stormadapt
