#pragma once

#include <stdexcept>
#include <string>

namespace vlmpc {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed scenario, memory, trace or config document. The message names the field.
class ParseError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// DrivingParams outside their admissible ranges.
class InvalidParams : public Error {
public:
    using Error::Error;
};

/// Service unreachable, timed out, or answered with a non-success status.
class TransportError : public Error {
public:
    using Error::Error;
};

/// A replayed request has no recorded counterpart. Deliberately not a
/// TransportError: planners must not silently fall back on it.
class CassetteMismatch : public Error {
public:
    using Error::Error;
};

class SolverError : public Error {
public:
    using Error::Error;
};

}  // namespace vlmpc
