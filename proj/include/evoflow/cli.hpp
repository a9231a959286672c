#pragma once

#include <iosfwd>

namespace evoflow {

/// Process exit codes.
enum ExitCode : int {
    kExitOk = 0,
    kExitConfig = 2,    ///< bad flags, config file or archive location
    kExitProvider = 3,  ///< model backend, MCP transport or storage failure
    kExitParse = 4,     ///< unparseable task file, trace or evolution log
};

/// Entry point behind the `evoflow` binary; `out`/`err` receive all output.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace evoflow
