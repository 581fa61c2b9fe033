#pragma once

namespace cbox::cli {

// Entry point behind the cbox binary. Exit codes: 0 success, 1 validation or
// configuration error (single diagnostic line on stderr), 2 runtime failure
// (non-finite loss aborts, I/O).
int run(int argc, const char* const* argv);

}  // namespace cbox::cli
