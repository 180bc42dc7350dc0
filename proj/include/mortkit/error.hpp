#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mortkit {

/// Malformed input file. Carries the 1-based line number when known.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
          line_{line} {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Input violates a declared data invariant (negative deaths, zero exposure, ...).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A required week, age or year is absent.
class IncompleteDataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical procedure failed (unbounded likelihood, non-convergence, singular system).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid run configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace mortkit
