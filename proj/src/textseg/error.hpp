#pragma once

#include <stdexcept>
#include <string>

namespace textseg {

// Error taxonomy shared across the library. Everything user-facing derives
// from Error so the C boundary can catch one type.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/layer dimension mismatches.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

// Bad argument values (negative gamma, weight vector constraints, ...).
class ValueError : public Error {
public:
    explicit ValueError(const std::string& msg) : Error("value error: " + msg) {}
};

// Non-finite data where finite values are required.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

// Misuse of the autodiff API (non-scalar backward root etc.).
class UsageError : public Error {
public:
    explicit UsageError(const std::string& msg) : Error("usage error: " + msg) {}
};

// File and serialization problems.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

// Invalid or inconsistent run configuration.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

// Ground-truth images that do not decode to a legal label map.
class DecodeError : public Error {
public:
    explicit DecodeError(const std::string& msg) : Error("decode error: " + msg) {}
};

}  // namespace textseg
