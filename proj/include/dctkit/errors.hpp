#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dctkit {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A count or index argument is outside its admissible range.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// An operation was invoked in the wrong lifecycle state.
class StateError : public Error {
public:
    using Error::Error;
};

/// A network configuration is inconsistent with its inputs.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Stored cross-stage bookkeeping does not match the tensors it describes.
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// Input data violates a domain rule (labels out of range, bad normals).
class DataError : public Error {
public:
    using Error::Error;
};

/// A value became NaN or infinite.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Text input could not be parsed. Carries the 1-based line number, 0 when
/// the failure is not tied to a line.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

} // namespace dctkit
