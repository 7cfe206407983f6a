#pragma once

#include <stdexcept>
#include <string>

namespace pixelgen {

enum class ErrorCode {
    config,     // bad configuration / user input
    dimension,  // shape mismatch
    contract,   // precondition violated
    state,      // object used in an invalid state
    numeric,    // non-finite values where finite ones are required
    io,         // filesystem failures
    format,     // malformed serialized data
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

}  // namespace pixelgen
