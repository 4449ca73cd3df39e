#pragma once

namespace vpseg {

// Entry point shared by the vpseg binary and in-process tests.
int run_cli(int argc, const char* const* argv);

}  // namespace vpseg
