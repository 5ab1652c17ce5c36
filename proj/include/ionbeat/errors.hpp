#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ionbeat {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input outside the domain of an operation (bad quantum numbers, wrong wavelength, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value. `key()` names the offending parameter when known.
class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& what)
        : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class NonUniqueSteadyState : public NumericalError {
public:
    explicit NonUniqueSteadyState(int null_dimension)
        : NumericalError("steady state is not unique (null-space dimension " +
                         std::to_string(null_dimension) + ")"),
          null_dimension_(null_dimension) {}
    int null_dimension() const noexcept { return null_dimension_; }

private:
    int null_dimension_;
};

class NonIdentifiable : public NumericalError {
public:
    explicit NonIdentifiable(std::vector<std::string> parameters)
        : NumericalError(describe(parameters)), parameters_(std::move(parameters)) {}
    const std::vector<std::string>& parameters() const noexcept { return parameters_; }

private:
    static std::string describe(const std::vector<std::string>& p) {
        std::string s = "singular Jacobian; non-identifiable parameter combination:";
        for (const auto& name : p) s += " " + name;
        return s;
    }
    std::vector<std::string> parameters_;
};

}  // namespace ionbeat
