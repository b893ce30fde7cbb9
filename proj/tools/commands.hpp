// SPDX-License-Identifier: Apache-2.0
//
// The `nca` command line. Kept in a library so tests can drive it without a
// subprocess.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nca::cli {

enum ExitCode : int {
  kOk = 0,
  kFailed = 1,  // gradcheck over tolerance, unexpected errors
  kConfig = 2,
  kIo = 3,
  kDivergence = 4,
  kCheckpoint = 5,
};

/// args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nca::cli
