#pragma once

#include <stdexcept>
#include <string>

namespace timbrefit {

/// Bad caller input: wrong dimensions, out-of-range request values,
/// malformed files. Maps to exit code 2 in the CLI.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An optimization run could not produce a result (e.g. no voiced notes).
/// Maps to exit code 3 in the CLI.
class OptimizationAborted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace timbrefit
