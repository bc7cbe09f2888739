#pragma once

#include <stdexcept>
#include <string>

namespace smoe {

/// Broad failure categories. The CLI maps each to a distinct exit code.
enum class ErrorKind {
    Dimension = 2,
    InvalidArgument = 3,
    State = 4,
    Io = 5,
    Format = 6,
    Checksum = 7,
    Version = 8,
    SpecMismatch = 9,
    Numerical = 10,
    Resource = 11,
};

inline const char* to_string(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::State: return "state";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::Checksum: return "checksum";
    case ErrorKind::Version: return "version";
    case ErrorKind::SpecMismatch: return "spec-mismatch";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::Resource: return "resource";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what)
{
    throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what)
{
    if (!cond)
        fail(kind, what);
}

} // namespace smoe
