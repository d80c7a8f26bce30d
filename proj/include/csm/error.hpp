#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace csm {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text. Carries the 1-based line number.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Data that parses but contradicts an invariant (non-monotone seq,
/// removing a log that was never applied, ...).
class IntegrityError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// A ratio whose denominator is zero.
class UndefinedValueError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

/// Model document rejected (schema version, checksum, structure).
class LoadError : public Error {
public:
    using Error::Error;
};

} // namespace csm
