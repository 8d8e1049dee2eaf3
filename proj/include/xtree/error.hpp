#pragma once

#include <stdexcept>
#include <string>

namespace xtree {

/// Base of every error the library raises. The CLI maps the subclass to an
/// exit status (config 1, data 2, numerical 3).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad configuration, bad arguments, violated preconditions on parameters.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Problems with the input data: missing columns, unparseable cells,
/// classes too small for a split, etc.
class DataError : public Error {
public:
    using Error::Error;
};

class SchemaError : public DataError {
public:
    using DataError::DataError;
};

class ParseError : public DataError {
public:
    ParseError(const std::string& what, std::size_t row, std::size_t column)
        : DataError(what), row_(row), column_(column) {}

    std::size_t row() const noexcept { return row_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::size_t column_;
};

/// Non-convergence, divergence, undefined statistics.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace xtree
