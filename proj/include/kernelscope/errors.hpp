#pragma once

#include <stdexcept>
#include <string>

namespace kernelscope {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration (bad box bounds, bad counts, unknown system name).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Operation called with arguments that violate its contract.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Non-finite value produced by a kernel evaluation.
class NumericError : public Error {
public:
    NumericError(const std::string& what, std::size_t i, std::size_t j)
        : Error(what), agent_i(i), agent_j(j) {}
    std::size_t agent_i;
    std::size_t agent_j;
};

/// Integration produced a non-finite state.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, double t) : Error(what), time(t) {}
    double time;
};

/// A linear system could not be solved reliably.
class ConditioningError : public Error {
public:
    ConditioningError(const std::string& what, double cond) : Error(what), condition(cond) {}
    double condition;
};

/// Reading or writing a persisted file failed.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace kernelscope
