#pragma once

#include <stdexcept>
#include <string>

namespace impact {

// Base class for every failure raised by the library. The CLI maps the
// concrete subclasses onto stable exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid parameters or configuration supplied by the caller.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed, empty or otherwise unusable input data.
class DataError : public Error {
public:
    using Error::Error;
};

// A file could not be read or written.
class IoError : public DataError {
public:
    using DataError::DataError;
};

// A numerical procedure failed (singular system, too few points, degenerate variance).
class NumericalError : public Error {
public:
    using Error::Error;
};

// Arguments outside the mathematical domain of a formula.
class DomainError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

}  // namespace impact
