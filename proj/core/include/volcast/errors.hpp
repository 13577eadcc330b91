#pragma once

#include <stdexcept>
#include <string>

namespace volcast {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed or inconsistent input data (CSV parse failures, schema
/// mismatches, missing-value threshold violations, length mismatches).
class DataError : public Error {
public:
    using Error::Error;
};

/// Model construction or numerical failure (non-PD kernel after maximum
/// jitter, EP divergence, optimizer producing no finite objective).
class ModelError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or flag values.
class UsageError : public Error {
public:
    using Error::Error;
};

} // namespace volcast
