#pragma once

#include <stdexcept>
#include <string>

namespace seme {

// Data/validation failures (malformed archives, invariant violations,
// incongruent shapes). The CLI maps these to exit code 2.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad parameters or configuration (tau out of range, zero trials).
// The CLI maps these to exit code 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace seme
