// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace kvsim {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Device tier has no free or reclaimable slot for a required allocation.
class InsufficientDeviceMemory : public Error {
public:
    using Error::Error;
};

/// Host tier has no free slot for a swap-out destination.
class InsufficientHostMemory : public Error {
public:
    using Error::Error;
};

class UnknownConversation : public Error {
public:
    using Error::Error;
};

/// A chunk is not in the state an operation requires (e.g. evicting a chunk
/// that is already on the host, or restoring a dropped chunk).
class InvalidChunkState : public Error {
public:
    using Error::Error;
};

/// Fewer evictable chunks exist than an eviction pass requested.
class NotEnoughEvictable : public Error {
public:
    using Error::Error;
};

/// Cost profile has no anchor points.
class EmptyProfile : public Error {
public:
    using Error::Error;
};

/// Raw prompt tokens needed for recomputation are not retrievable.
class TraceMissing : public Error {
public:
    using Error::Error;
};

/// Suspending every running request still cannot free the requested slots.
class CannotSuspendAll : public Error {
public:
    using Error::Error;
};

/// The simulation cannot make progress (e.g. a request larger than the cache).
class DeadlockError : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

/// Non-finite values where finite numbers are required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed input file; carries the 1-based line number.
class ParseError : public Error {
public:
    ParseError(int line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    int line() const { return line_; }

private:
    int line_;
};

class EmptyTrace : public Error {
public:
    using Error::Error;
};

} // namespace kvsim
