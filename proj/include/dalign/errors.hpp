#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dalign {

/// Base of every error raised by the engine. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor/map/weight dimensions.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Index outside a tensor's extent.
class BoundsError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Selection suppressed every descriptor of an image.
class EmptySelectionError : public DomainError {
public:
    using DomainError::DomainError;
};

/// Dataset cannot supply the requested episode.
class CapacityError : public Error {
public:
    using Error::Error;
};

/// Malformed file. `offset()` is a byte offset for binary formats and a
/// 1-based line number for text formats.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace dalign
