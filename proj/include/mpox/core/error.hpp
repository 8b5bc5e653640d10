#pragma once

#include <stdexcept>
#include <string>

namespace mpox {

enum class ErrorCode {
    invalid_argument,
    not_found,
    parse,
    io,
    decode,
    out_of_range,
    degenerate,
    unsupported,
    runtime,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_argument: return "invalid_argument";
        case ErrorCode::not_found: return "not_found";
        case ErrorCode::parse: return "parse";
        case ErrorCode::io: return "io";
        case ErrorCode::decode: return "decode";
        case ErrorCode::out_of_range: return "out_of_range";
        case ErrorCode::degenerate: return "degenerate";
        case ErrorCode::unsupported: return "unsupported";
        case ErrorCode::runtime: return "runtime";
    }
    return "unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) fail(code, what);
}

}  // namespace mpox
