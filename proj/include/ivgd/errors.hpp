#pragma once

#include <stdexcept>
#include <string>

namespace ivgd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed text input. Carries the 1-based line number when known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, divergence, or other floating point failures.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Inversion requested on a model whose Lipschitz certificates do not allow it.
class InvertibilityError : public NumericError {
public:
    using NumericError::NumericError;
};

class TrainingError : public NumericError {
public:
    TrainingError(const std::string& what, std::size_t epoch)
        : NumericError("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
    std::size_t epoch() const noexcept { return epoch_; }

private:
    std::size_t epoch_;
};

/// Versioned file format mismatch or corrupted record.
class FormatError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace ivgd
