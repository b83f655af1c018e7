#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace grnr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Entry point of the grnr tool. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// CPU model, core count, compiler and build type.
std::string hardware_fingerprint();

}  // namespace grnr::cli
