// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>

namespace storyweave::cli {

/// Exit status: 0 success, 1 validation errors, 2 I/O or contract errors.
int run_command(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace storyweave::cli
