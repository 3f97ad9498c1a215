#pragma once

#include <stdexcept>
#include <string>

namespace svdkl {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape mismatches and violated preconditions on caller-supplied data.
class InputError : public Error {
public:
    using Error::Error;
};

/// Factorization failures, non-finite objectives or gradients.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent files.
class DataError : public Error {
public:
    using Error::Error;
};

/// Model/network/config combinations that do not fit together.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace svdkl
