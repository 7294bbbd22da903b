#pragma once

namespace forgesem {

// Command-line entry point. Exit codes: 0 success, 2 argument or config
// error, 3 IO error, 4 numeric failure.
int cli_run(int argc, const char* const* argv);

} // namespace forgesem
