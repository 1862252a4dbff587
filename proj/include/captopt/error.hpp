#pragma once

#include <stdexcept>
#include <string>

namespace captopt {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised by config parsing; carries the 1-based line of the offending entry
// (0 when the problem is not tied to a single line).
struct ConfigError : Error {
    int line;
    ConfigError(int line_, const std::string& msg)
        : Error(line_ > 0 ? "line " + std::to_string(line_) + ": " + msg : msg),
          line(line_) {}
};

struct SolverError : Error {
    using Error::Error;
};

} // namespace captopt
