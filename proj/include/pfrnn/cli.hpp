// SPDX-License-Identifier: Apache-2.0
/**
 * @file   cli.hpp
 * @brief  Command-line driver: gen-data, train, eval, ablate, grid, plot.
 *
 * Exit codes: 0 success, 2 usage or configuration error, 3 I/O failure,
 * 4 training aborted on a non-finite value.
 */
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pfrnn {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitIo = 3, kExitNumeric = 4 };

/// Runs one command. Results (eval JSON, summaries) go to out, diagnostics
/// and progress to err.
int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);
int run_cli(int argc, char **argv);

} // namespace pfrnn
