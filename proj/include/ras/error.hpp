#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ras {

enum class ErrorKind {
    InvalidInput,       // non-finite values, malformed arguments
    InvalidConfig,      // parameter outside its domain
    Degenerate,         // zero-norm operand, degenerate calibration
    InsufficientData,   // too few samples
    SingularMatrix,     // factorization failure
    DimensionMismatch,
    OutOfRange,
    Format,             // file format violations (see FormatError)
    Io,
    Usage,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidInput: return "invalid-input";
        case ErrorKind::InvalidConfig: return "invalid-config";
        case ErrorKind::Degenerate: return "degenerate";
        case ErrorKind::InsufficientData: return "insufficient-data";
        case ErrorKind::SingularMatrix: return "singular-matrix";
        case ErrorKind::DimensionMismatch: return "dimension-mismatch";
        case ErrorKind::OutOfRange: return "out-of-range";
        case ErrorKind::Format: return "format";
        case ErrorKind::Io: return "io";
        case ErrorKind::Usage: return "usage";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

enum class FormatErrorKind {
    MagicMismatch,
    UnsupportedVersion,
    Truncated,
    DimensionMismatch,
    Malformed,
};

inline const char* to_string(FormatErrorKind kind) {
    switch (kind) {
        case FormatErrorKind::MagicMismatch: return "magic-mismatch";
        case FormatErrorKind::UnsupportedVersion: return "unsupported-version";
        case FormatErrorKind::Truncated: return "truncated";
        case FormatErrorKind::DimensionMismatch: return "dimension-mismatch";
        case FormatErrorKind::Malformed: return "malformed";
    }
    return "unknown";
}

/// Decoding failure in one of the binary containers. `offset` is the byte
/// position (from the start of the file) where the problem was detected.
class FormatError : public Error {
public:
    FormatError(FormatErrorKind kind, std::size_t offset, const std::string& detail)
        : Error(ErrorKind::Format,
                std::string(to_string(kind)) + " at offset " + std::to_string(offset) + ": " + detail),
          format_kind_(kind),
          offset_(offset) {}

    FormatErrorKind format_kind() const noexcept { return format_kind_; }
    std::size_t offset() const noexcept { return offset_; }

private:
    FormatErrorKind format_kind_;
    std::size_t offset_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool condition, ErrorKind kind, const std::string& what) {
    if (!condition) throw Error(kind, what);
}

}  // namespace ras
