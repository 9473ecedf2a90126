#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mdgen {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input data: malformed files, failed validation, inconsistent dimensions.
class DataError : public Error {
public:
    using Error::Error;
};

/// Caller violated an operation's precondition (out-of-range argument etc.).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A numerical routine produced non-finite values or hit a degenerate case.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Filter-program parse failure; carries the byte offset of the problem.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " at byte " + std::to_string(offset)), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Network or remote-service failure; callers may retry.
class TransportError : public Error {
public:
    using Error::Error;
};

}  // namespace mdgen
