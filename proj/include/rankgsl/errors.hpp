#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rankgsl {

enum class ErrorCategory {
    parse,
    validation,
    convergence,
    unreachable,
    domain,
    io,
};

inline std::string_view to_string(ErrorCategory c) {
    switch (c) {
    case ErrorCategory::parse: return "parse";
    case ErrorCategory::validation: return "validation";
    case ErrorCategory::convergence: return "convergence";
    case ErrorCategory::unreachable: return "unreachable";
    case ErrorCategory::domain: return "domain";
    case ErrorCategory::io: return "io";
    }
    return "unknown";
}

/// Base class of every error thrown by the library. The category drives the
/// CLI exit code.
class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

class ParseError : public Error {
public:
    explicit ParseError(const std::string& what) : Error(ErrorCategory::parse, what) {}
};

/// Invariant violation; `field()` names the offending field.
class ValidationError : public Error {
public:
    ValidationError(std::string field, const std::string& what)
        : Error(ErrorCategory::validation, field + ": " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double residual)
        : Error(ErrorCategory::convergence, what), residual_(residual) {}

    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

class UnreachableError : public Error {
public:
    explicit UnreachableError(const std::string& what) : Error(ErrorCategory::unreachable, what) {}
};

class DomainError : public Error {
public:
    explicit DomainError(const std::string& what) : Error(ErrorCategory::domain, what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorCategory::io, what) {}
};

} // namespace rankgsl
