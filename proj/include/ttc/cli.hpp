#pragma once

#include <string>
#include <vector>

namespace ttc {

// Entry point behind main(). Exit codes: 0 full success, 1 invalid
// invocation, config, or precondition, 2 runtime abort (checkpointed logs
// are retained and resumable).
int cli_main(int argc, const char* const* argv);

// Convenience overload for in-process invocation; args[0] is the program
// name, as in argv.
int cli_main(const std::vector<std::string>& args);

}  // namespace ttc
