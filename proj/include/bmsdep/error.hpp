#pragma once

#include <stdexcept>
#include <string>

namespace bmsdep {

/// Bad user input: configuration, panel rows, parameter values. CLI exit code 2.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A configuration section or key is missing.
class ConfigError : public ValidationError {
public:
    ConfigError(std::string section, const std::string& what)
        : ValidationError(what), section_(std::move(section)) {}
    const std::string& section() const noexcept { return section_; }

private:
    std::string section_;
};

/// Solver or integrand failure. CLI exit code 1.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace bmsdep
