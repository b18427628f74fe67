#pragma once

#include <stdexcept>
#include <string>

namespace attngen {

// Error taxonomy shared by the library and the CLI exit-code mapping:
// config/usage -> 1, data/parse/shape -> 2, numerical -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct UsageError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct ShapeError : DataError {
    using DataError::DataError;
};

struct NumericalError : Error {
    using Error::Error;
};

}  // namespace attngen
