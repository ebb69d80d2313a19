#pragma once

#include <stdexcept>
#include <string>

namespace mmpc {

// Failure categories. The CLI maps each one onto a process exit code.
enum class ErrorKind {
    Config = 1,
    Numerical = 2,
    Io = 3,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }
    [[nodiscard]] int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

// Operand shapes disagree; the message names the offending operand.
class DimensionError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ErrorKind::Numerical, what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

// Malformed file contents (CSV, model files). Carries the 1-based line number when known.
class ParseError : public IoError {
public:
    ParseError(const std::string& what, long line = 0) : IoError(what), line_(line) {}

    [[nodiscard]] long line() const noexcept { return line_; }

private:
    long line_;
};

} // namespace mmpc
