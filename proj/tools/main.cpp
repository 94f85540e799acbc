// SPDX-License-Identifier: Apache-2.0
#include "lipctx/cli.hpp"

int main(int argc, char** argv) { return lipctx::run(std::vector<std::string>(argv, argv + argc)); }
