#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cfw {

enum class ErrorCode {
    ShapeMismatch,
    InvalidArgument,
    MissingGradient,
    NonFinite,
    Io,
    Format,
    Config,
};

std::string_view to_string(ErrorCode code);

// Every failure the library reports is one of these. The code is stable and
// machine-checkable; the message carries the human-readable context.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string &what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace cfw
