#pragma once

#include <stdexcept>
#include <string>

namespace csdn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or layer configuration.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf produced or detected, or a numerical contract violated.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Missing, malformed or inconsistent files and datasets.
class DataError : public Error {
public:
    using Error::Error;
};

/// Autodiff graph misuse (non-scalar loss, second backward, ...).
class GraphError : public Error {
public:
    using Error::Error;
};

/// Bad user input: flags, config keys, out-of-range settings.
class UsageError : public Error {
public:
    using Error::Error;
};

} // namespace csdn
