// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace pkt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one `pkt` subcommand. args excludes the program name.
/// Returns 0 on success, 1 on usage errors and 2 on runtime errors.
int dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err);

std::string version();

}  // namespace pkt::cli
