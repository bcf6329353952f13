#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hsi {

// Command-line driver. `args` excludes the program name. Returns the process
// exit code: 0 success, 1 usage error (bad flags, bad config, unreadable
// input), 2 numerical failure, 3 verification FAIL.
//
// Commands:
//   generate-data     --config <file>
//   train             --config <file>
//   sample            --config <file> --checkpoint <dir> [--dump-trajectories]
//   evaluate          --pred <dataset base> --truth <dataset base>
//   ablate-timechange --config <file>
//   verify-gaussian   --config <file>
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hsi
