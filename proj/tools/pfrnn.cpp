// SPDX-License-Identifier: Apache-2.0
#include <pfrnn/cli.hpp>

int main(int argc, char **argv) { return pfrnn::run_cli(argc, argv); }
