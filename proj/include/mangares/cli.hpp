#pragma once

namespace mr::cli {

// Entry point for the `mangares` tool. Returns 0 on success, 1 on runtime
// failure, 2 on argument errors. Re-entrant, so tests drive it in-process.
int run(int argc, const char* const* argv);

}  // namespace mr::cli
