#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace freeevent::cli {

/// Environment variable naming a default run-config file.
inline constexpr const char* kConfigEnv = "FREEEVENT_CONFIG";

/// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace freeevent::cli
