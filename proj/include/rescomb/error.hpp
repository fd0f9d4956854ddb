#pragma once

#include <stdexcept>
#include <string>

namespace rescomb {

// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad or inconsistent configuration (CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed, missing or inconsistent data (CLI exit code 3).
class DataError : public Error {
public:
    using Error::Error;
};

// Parse failure in one of the text formats; carries the 1-based line number.
class ParseError : public DataError {
public:
    ParseError(const std::string& what, std::size_t line)
        : DataError(what + " (line " + std::to_string(line) + ")"), line_(line) {}

    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

} // namespace rescomb
