#pragma once

#include <stdexcept>
#include <string>

namespace renewal {

// Base of every error raised by the library. The exit code is what the CLI
// returns when the error escapes a command.
class Error : public std::runtime_error {
public:
    Error(const std::string& what, int exit_code) : std::runtime_error(what), exit_code_(exit_code) {}
    int exit_code() const noexcept { return exit_code_; }

private:
    int exit_code_;
};

class ParameterError : public Error {
public:
    explicit ParameterError(const std::string& what) : Error(what, 2) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(what, 2) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(what, 3) {}
};

class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& what) : Error(what, 3) {}
};

class ConsistencyError : public Error {
public:
    explicit ConsistencyError(const std::string& what) : Error(what, 3) {}
};

class StateError : public Error {
public:
    explicit StateError(const std::string& what) : Error(what, 4) {}
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(what, 4) {}
};

// Simulated intensity exceeded the configured cap.
class DivergenceError : public NumericalError {
public:
    explicit DivergenceError(const std::string& what) : NumericalError(what) {}
};

} // namespace renewal
