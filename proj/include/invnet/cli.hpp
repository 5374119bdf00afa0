#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

namespace invnet {

/// Exit statuses of the command-line driver.
enum ExitCode : int { kExitOk = 0, kExitValidation = 2, kExitNumerical = 3, kExitIo = 4 };

/// Entry point of the `invnet` executable; usable in-process from tests.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// splitmix64(seed + fnv1a64(tag)): independent streams per component.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag);

}  // namespace invnet
