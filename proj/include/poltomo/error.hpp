#pragma once

#include <stdexcept>
#include <string>

namespace poltomo {

// Exit codes reported by the command-line tool for each error family.
enum class ExitCode : int {
    success = 0,
    config = 2,
    format = 3,
    numerical = 4,
};

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, ExitCode code)
        : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    explicit DomainError(const std::string& what) : Error(what, ExitCode::config) {}
};

// Tomogram data does not cover the directions an operation needs.
class CoverageError : public Error {
public:
    explicit CoverageError(const std::string& what) : Error(what, ExitCode::format) {}
};

class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error(what, ExitCode::format) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(what, ExitCode::config) {}
};

// A numerical model or diagnostic failed (degenerate variance, truncation, ...).
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(what, ExitCode::numerical) {}
};

}  // namespace poltomo
