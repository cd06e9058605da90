#pragma once

#include <stdexcept>
#include <string>

namespace gradnormir {

/// Base error for every failure raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Failure that may succeed on retry (network transport, transient I/O).
class TransientError : public Error {
public:
    explicit TransientError(const std::string& what) : Error(what) {}
};

}  // namespace gradnormir
