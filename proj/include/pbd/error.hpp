#pragma once

#include <stdexcept>
#include <string>

namespace pbd {

/// Base error for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Rejected credentials when talking to an external generator endpoint.
class AuthError : public Error {
public:
    using Error::Error;
};

/// Failure inside a named pipeline stage (CLI exit code 3).
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error("stage '" + stage + "': " + what), stage_(std::move(stage)) {}

    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

} // namespace pbd
