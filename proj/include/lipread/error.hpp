#pragma once

#include <stdexcept>
#include <string>

namespace lipread {

/// Base exception for every failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (manifests, lexicons, model files).
class DataError : public Error {
public:
    using Error::Error;
};

/// Filesystem failures, always naming the offending path.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace lipread
